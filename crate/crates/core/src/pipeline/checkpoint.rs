//! Single-file checkpoint archive.
//!
//! Little-endian layout:
//!
//! ```text
//! "BVDCKPT\0"  u32 version
//! u32 len + run config (key=value text)
//! u32 len + model config hash (hex)
//! u64 step
//! u32 count, then per tensor: u32 len + name, u32 ndim, u64 dims.., f64 data..
//! f64 lr, beta1, beta2, eps; u64 t; first moments; second moments
//! 32-byte SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{parse_kv, RunConfig};
use super::optim::{Adam, AdamParams};
use super::train::TrainState;
use crate::error::{Error, Result};
use crate::model::{build_model, HasParameters, ModelConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"BVDCKPT\0";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn data(&mut self, t: &Tensor) {
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptArchive {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.corrupt("non-UTF-8 string"))
    }
    fn data(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.corrupt("tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(shape, data)
    }
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(state.run.to_kv().as_bytes());
    w.bytes(state.model.config().hash().as_bytes());
    w.u64(state.step);
    let params = state.model.parameters();
    w.u32(params.len() as u32);
    for (name, t) in state.model.parameter_names().iter().zip(params) {
        w.bytes(name.as_bytes());
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        w.data(t);
    }
    let p = state.adam.params;
    for v in [p.lr, p.beta1, p.beta2, p.eps] {
        w.f64(v);
    }
    w.u64(state.adam.t);
    state.adam.m.iter().for_each(|t| w.data(t));
    state.adam.v.iter().for_each(|t| w.data(t));
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

/// Write atomically: a sibling temp file renamed over `path`.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, encode_checkpoint(state)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainState> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.corrupt(format!("unsupported version {version}")));
    }
    let kv = r.string()?;
    let stored_hash = r.string()?;
    let run = RunConfig::resolve_with_seed(&parse_kv(&kv)?, &BTreeMap::new(), None)?;
    let actual_hash = run.model.hash();
    if actual_hash != stored_hash {
        return Err(Error::ConfigMismatch {
            expected: stored_hash,
            found: actual_hash,
        });
    }
    if bytes.len() < 32 || Sha256::digest(&bytes[..bytes.len() - 32]).as_slice() != &bytes[bytes.len() - 32..] {
        return Err(r.corrupt("checksum mismatch"));
    }
    let step = r.u64()?;
    let mut model = build_model(&run.model)?;
    let names = model.parameter_names();
    let count = r.u32()? as usize;
    if count != names.len() {
        return Err(r.corrupt(format!("{count} tensors, model has {}", names.len())));
    }
    let mut params = Vec::with_capacity(count);
    for expected in &names {
        let name = r.string()?;
        if &name != expected {
            return Err(r.corrupt(format!("tensor {name:?} where {expected:?} was expected")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        params.push(r.data(&shape)?);
    }
    model.set_parameters(params)?;
    let adam_params = AdamParams {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let mut adam = Adam::new(adam_params, model.parameters());
    adam.t = r.u64()?;
    let shapes: Vec<Vec<usize>> = model.parameters().iter().map(|p| p.shape().to_vec()).collect();
    adam.m = shapes.iter().map(|s| r.data(s)).collect::<Result<_>>()?;
    adam.v = shapes.iter().map(|s| r.data(s)).collect::<Result<_>>()?;
    if r.pos != bytes.len() - 32 {
        return Err(r.corrupt("trailing bytes"));
    }
    Ok(TrainState { run, model, adam, step })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Load and require the archive's model config to equal `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<TrainState> {
    let state = load_checkpoint(path)?;
    let found = state.model.config().hash();
    if found != expected.hash() {
        return Err(Error::ConfigMismatch {
            expected: expected.hash(),
            found,
        });
    }
    Ok(state)
}
