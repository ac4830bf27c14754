//! On-disk corpus: one directory per clip plus a key=value manifest.
//!
//! ```text
//! root/manifest.txt
//! root/clip_00000/{clean,corrupted,alpha,masks}/frame_00000.png
//! root/clip_00000/flows/{fwd,bwd}_00001.bvfl
//! root/clip_00000/captions.json
//! ```
//!
//! Flow and mask files are numbered by the later frame of the pair.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{generate_clip, CaptionSegment, ClipPair, GenConfig, StepFlow};
use crate::error::{Error, Result};
use crate::flowwarp::{FlowField, OcclusionMask};
use crate::image::Image;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub seed: u64,
    /// `(start, end, text)` per caption segment.
    pub captions: Vec<(usize, usize, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub seed: u64,
    pub gen: GenConfig,
    pub clips: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn to_text(&self) -> Result<String> {
        let mut s = String::from("# bvd synthetic corpus\n");
        s += &format!("seed={}\n", self.seed);
        s += &format!("clips={}\n", self.clips.len());
        s += &format!(
            "height={}\nwidth={}\nlength={}\n",
            self.gen.height, self.gen.width, self.gen.length
        );
        s += &format!("gen={}\n", serde_json::to_string(&self.gen)?);
        for c in &self.clips {
            let caps: Vec<String> = c.captions.iter().map(|(a, b, t)| format!("{a}-{b}:{t}")).collect();
            s += &format!("clip={} seed={} captions={}\n", c.clip_id, c.seed, caps.join(";"));
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<CorpusManifest> {
        let bad = |m: String| Error::Config(format!("manifest: {m}"));
        let mut seed = None;
        let mut gen = None;
        let mut count = None;
        let mut clips = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("no '=' in {line:?}")))?;
            match key {
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "clips" => count = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "gen" => gen = Some(serde_json::from_str::<GenConfig>(value)?),
                "height" | "width" | "length" => {}
                "clip" => clips.push(parse_clip_line(value).map_err(bad)?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let manifest = CorpusManifest {
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            gen: gen.ok_or_else(|| bad("missing gen".into()))?,
            clips,
        };
        if count != Some(manifest.clips.len()) {
            return Err(bad(format!("clips={count:?} but {} entries", manifest.clips.len())));
        }
        Ok(manifest)
    }
}

fn parse_clip_line(value: &str) -> std::result::Result<ManifestEntry, String> {
    let (id, rest) = value.split_once(" seed=").ok_or("clip line lacks seed")?;
    let (seed, caps) = rest.split_once(" captions=").ok_or("clip line lacks captions")?;
    let seed = seed.parse::<u64>().map_err(|e| e.to_string())?;
    let mut captions = Vec::new();
    for seg in caps.split(';').filter(|s| !s.is_empty()) {
        let (range, text) = seg.split_once(':').ok_or("caption lacks ':'")?;
        let (a, b) = range.split_once('-').ok_or("caption lacks range")?;
        captions.push((
            a.parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
            b.parse().map_err(|e: std::num::ParseIntError| e.to_string())?,
            text.to_string(),
        ));
    }
    Ok(ManifestEntry {
        clip_id: id.to_string(),
        seed,
        captions,
    })
}

/// Per-clip seeds for a corpus seed.
pub fn clip_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

pub fn frame_name(t: usize) -> String {
    format!("frame_{t:05}.png")
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Write one clip's directory.
pub fn write_clip(dir: &Path, clip: &ClipPair) -> Result<()> {
    for sub in ["clean", "corrupted", "alpha", "masks", "flows"] {
        mkdir(&dir.join(sub))?;
    }
    for t in 0..clip.len() {
        clip.clean[t].write_png(&dir.join("clean").join(frame_name(t)))?;
        clip.corrupted[t].write_png(&dir.join("corrupted").join(frame_name(t)))?;
        clip.overlay_alpha[t].write_png(&dir.join("alpha").join(frame_name(t)))?;
    }
    for (i, step) in clip.flows.iter().enumerate() {
        let t = i + 1;
        step.forward
            .write(&dir.join("flows").join(format!("fwd_{t:05}.bvfl")))?;
        step.backward
            .write(&dir.join("flows").join(format!("bwd_{t:05}.bvfl")))?;
        step.mask.write_png(&dir.join("masks").join(frame_name(t)))?;
    }
    let json = serde_json::to_string_pretty(&clip.caption_schedule)?;
    let path = dir.join("captions.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Generate `n_clips` clips under `root`.
///
/// Re-running with the same seed rewrites identical files; an existing
/// manifest written with another seed is left untouched and reported.
pub fn write_corpus(n_clips: usize, root: &Path, seed: u64, gen: &GenConfig) -> Result<CorpusManifest> {
    gen.validate()?;
    let manifest_path = root.join(MANIFEST);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let existing = CorpusManifest::parse(&text)?;
        if existing.seed != seed {
            return Err(Error::ManifestCollision {
                path: manifest_path,
                existing: existing.seed,
                requested: seed,
            });
        }
    }
    mkdir(root)?;
    let mut clips = Vec::with_capacity(n_clips);
    for (i, clip_seed) in clip_seeds(seed, n_clips).into_iter().enumerate() {
        let clip = generate_clip(clip_seed, gen)?;
        let clip_id = format!("clip_{i:05}");
        write_clip(&root.join(&clip_id), &clip)?;
        clips.push(ManifestEntry {
            clip_id,
            seed: clip_seed,
            captions: clip
                .caption_schedule
                .iter()
                .map(|s| (s.start, s.end, s.caption.text.clone()))
                .collect(),
        });
    }
    let manifest = CorpusManifest {
        seed,
        gen: gen.clone(),
        clips,
    };
    fs::write(&manifest_path, manifest.to_text()?).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// A corpus opened from disk. Clips are loaded on demand.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
}

pub fn read_corpus(root: &Path) -> Result<Corpus> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Corpus {
        root: root.to_path_buf(),
        manifest: CorpusManifest::parse(&text)?,
    })
}

/// Sorted `frame_*.png` files of a directory.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    frames.sort();
    Ok(frames)
}

fn read_frames(dir: &Path, len: usize) -> Result<Vec<Image>> {
    (0..len)
        .map(|t| {
            let p = dir.join(frame_name(t));
            if !p.exists() {
                return Err(Error::Missing(p.display().to_string()));
            }
            Image::read_png(&p)
        })
        .collect()
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.manifest.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.clips.is_empty()
    }

    pub fn clip_ids(&self) -> Vec<String> {
        self.manifest.clips.iter().map(|c| c.clip_id.clone()).collect()
    }

    pub fn load_clip(&self, index: usize) -> Result<ClipPair> {
        let entry = self
            .manifest
            .clips
            .get(index)
            .ok_or(Error::OutOfRange { index, len: self.len() })?;
        let dir = self.root.join(&entry.clip_id);
        let len = self.manifest.gen.length;
        let clean = read_frames(&dir.join("clean"), len)?;
        let corrupted = read_frames(&dir.join("corrupted"), len)?;
        let overlay_alpha = read_frames(&dir.join("alpha"), len)?;
        let mut flows = Vec::with_capacity(len.saturating_sub(1));
        for t in 1..len {
            flows.push(StepFlow {
                forward: FlowField::read(&dir.join("flows").join(format!("fwd_{t:05}.bvfl")))?,
                backward: FlowField::read(&dir.join("flows").join(format!("bwd_{t:05}.bvfl")))?,
                mask: OcclusionMask::read_png(&dir.join("masks").join(frame_name(t)))?,
            });
        }
        let cap_path = dir.join("captions.json");
        let text = fs::read_to_string(&cap_path).map_err(|e| Error::io(&cap_path, e))?;
        let caption_schedule: Vec<CaptionSegment> = serde_json::from_str(&text)?;
        Ok(ClipPair {
            clean,
            corrupted,
            overlay_alpha,
            flows,
            seed: entry.seed,
            caption_schedule,
        })
    }

    pub fn load_all(&self) -> Result<Vec<ClipPair>> {
        (0..self.len()).map(|i| self.load_clip(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen() -> GenConfig {
        GenConfig::with_size(16, 24, 6)
    }

    #[test]
    fn manifest_round_trips_through_text() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_corpus(2, dir.path(), 7, &gen()).unwrap();
        assert_eq!(m.clips.len(), 2);
        assert_eq!(m.clips[1].clip_id, "clip_00001");
        assert_eq!(CorpusManifest::parse(&m.to_text().unwrap()).unwrap(), m);
        assert_eq!(read_corpus(dir.path()).unwrap().manifest, m);
    }

    #[test]
    fn loaded_clip_matches_generated() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_corpus(1, dir.path(), 3, &gen()).unwrap();
        let loaded = read_corpus(dir.path()).unwrap().load_clip(0).unwrap();
        let fresh = generate_clip(m.clips[0].seed, &gen()).unwrap();
        // generated frames are already on the 8-bit grid
        assert_eq!(loaded, fresh);
    }

    #[test]
    fn different_seed_collides() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(1, dir.path(), 1, &gen()).unwrap();
        write_corpus(1, dir.path(), 1, &gen()).unwrap();
        let err = write_corpus(1, dir.path(), 2, &gen()).unwrap_err();
        assert!(matches!(
            err,
            Error::ManifestCollision {
                existing: 1,
                requested: 2,
                ..
            }
        ));
    }
}
