//! Binary checkpoints for single models and ensembles.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! model:    "GRNKMODL" u32:version u64:len arch-json
//!           u64:count u64* seed lineage
//!           tensors(params) tensors(bn running stats)
//!           u64:adam-step f64:beta1 f64:beta2 f64:eps tensors(m) tensors(v)
//! tensors:  u64:count { u64:len f64* }
//! ensemble: "GRNKENSM" u32:version u8:mode u64:members
//!           { u64:len f64* }   trailing returns, per member
//!           { u64:len bytes }  model checkpoints, per member
//! ```

use std::path::Path;

use crate::models::{ArchConfig, CombineMode, Ensemble, Model};
use crate::nn::Adam;

pub const MODEL_MAGIC: &[u8; 8] = b"GRNKMODL";
pub const ENSEMBLE_MAGIC: &[u8; 8] = b"GRNKENSM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a {0} checkpoint")]
    BadMagic(&'static str),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
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
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn floats(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
    fn tensors<'a>(&mut self, ts: impl ExactSizeIterator<Item = &'a [f64]>) {
        self.u64(ts.len() as u64);
        ts.for_each(|t| self.floats(t));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn tensors(&mut self) -> Result<Vec<Vec<f64>>> {
        let n = self.len()?;
        (0..n).map(|_| self.floats()).collect()
    }
    fn magic(&mut self, want: &[u8; 8], what: &'static str) -> Result<()> {
        if self.take(8).map_err(|_| CheckpointError::BadMagic(what))? != want {
            return Err(CheckpointError::BadMagic(what));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(v));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(FORMAT_VERSION);
    w.bytes(&serde_json::to_vec(&model.arch).expect("architecture serializes"));
    w.u64(model.seed_lineage.len() as u64);
    model.seed_lineage.iter().for_each(|s| w.u64(*s));
    w.tensors(model.params().into_iter());
    w.tensors(model.running_stats().into_iter());
    w.u64(model.adam.step);
    w.f64(model.adam.beta1);
    w.f64(model.adam.beta2);
    w.f64(model.adam.eps);
    w.tensors(model.adam.m.iter().map(|v| &v[..]));
    w.tensors(model.adam.v.iter().map(|v| &v[..]));
    w.0
}

fn fill(dst: Vec<&mut [f64]>, src: Vec<Vec<f64>>, what: &str) -> Result<()> {
    if dst.len() != src.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{what}: {} tensors, architecture needs {}",
            src.len(),
            dst.len()
        )));
    }
    for (i, (d, s)) in dst.into_iter().zip(src).enumerate() {
        if d.len() != s.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{what} tensor {i}: {} values, architecture needs {}",
                s.len(),
                d.len()
            )));
        }
        d.copy_from_slice(&s);
    }
    Ok(())
}

pub fn decode_model(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(MODEL_MAGIC, "model")?;
    let arch: ArchConfig = serde_json::from_slice(r.bytes()?)
        .map_err(|e| CheckpointError::Corrupt(format!("architecture: {e}")))?;
    let n = r.len()?;
    let lineage = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let first = *lineage
        .first()
        .ok_or_else(|| CheckpointError::Corrupt("empty seed lineage".into()))?;
    let mut model = Model::new(arch, first).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    model.seed_lineage = lineage;
    fill(model.params_mut(), r.tensors()?, "parameter")?;
    let running = r.tensors()?;
    fill(
        model.running_stats_mut().into_iter().map(|v| &mut v[..]).collect(),
        running,
        "running statistic",
    )?;
    let step = r.u64()?;
    let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
    let sizes = model.param_sizes();
    let mut adam = Adam::new(&sizes);
    adam.step = step;
    adam.beta1 = beta1;
    adam.beta2 = beta2;
    adam.eps = eps;
    fill(adam.m.iter_mut().map(|v| &mut v[..]).collect(), r.tensors()?, "first moment")?;
    fill(adam.v.iter_mut().map(|v| &mut v[..]).collect(), r.tensors()?, "second moment")?;
    model.adam = adam;
    r.finish()?;
    Ok(model)
}

pub fn encode_ensemble(ens: &Ensemble) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(ENSEMBLE_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(match ens.mode {
        CombineMode::Moe => 0,
        CombineMode::SimpleAverage => 1,
    });
    w.u64(ens.members.len() as u64);
    ens.trailing_returns.iter().for_each(|t| w.floats(t));
    for m in &ens.members {
        w.bytes(&encode_model(m));
    }
    w.0
}

pub fn decode_ensemble(buf: &[u8]) -> Result<Ensemble> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(ENSEMBLE_MAGIC, "ensemble")?;
    let mode = match r.u8()? {
        0 => CombineMode::Moe,
        1 => CombineMode::SimpleAverage,
        x => return Err(CheckpointError::Corrupt(format!("combine mode {x}"))),
    };
    let n = r.len()?;
    let trailing = (0..n).map(|_| r.floats()).collect::<Result<Vec<_>>>()?;
    let members = (0..n)
        .map(|_| decode_model(r.bytes()?))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let mut ens = Ensemble::new(members, mode).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    ens.trailing_returns = trailing;
    Ok(ens)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, encode_model(model))?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&std::fs::read(path)?)
}

pub fn save_ensemble(ens: &Ensemble, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, encode_ensemble(ens))?)
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    decode_ensemble(&std::fs::read(path)?)
}
