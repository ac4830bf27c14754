//! Generate a small synthetic corpus and describe what was written.
//!
//! ```text
//! cargo run --release --example gen_corpus -- /tmp/bvd_corpus
//! ```

use std::path::PathBuf;

use bvd::datagen::{read_corpus, write_corpus, GenConfig};

fn main() -> bvd::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("bvd_corpus"));
    let gen = GenConfig::with_size(64, 64, 24);
    write_corpus(4, &root, 7, &gen)?;

    let corpus = read_corpus(&root)?;
    println!("{} clips under {}", corpus.len(), root.display());
    for (i, id) in corpus.clip_ids().iter().enumerate() {
        let clip = corpus.load_clip(i)?;
        let covered: f64 = clip
            .overlay_alpha
            .iter()
            .map(|a| a.data().iter().filter(|&&v| v > 0.0).count() as f64 / a.data().len() as f64)
            .sum::<f64>()
            / clip.len() as f64;
        let captions: Vec<String> = clip
            .caption_schedule
            .iter()
            .map(|s| format!("{}-{}:{}", s.start, s.end, s.caption.text))
            .collect();
        println!(
            "  {id}: {} frames, {:.1}% of pixels captioned, segments {}",
            clip.len(),
            100.0 * covered,
            captions.join(" ")
        );
    }
    Ok(())
}
