//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "H2CK" | version: u32 | json_len: u32 | json bytes
//! repeated until EOF:
//!   name_len: u32 | name bytes | rank: u32 | dims: u32 × rank | f64 × numel
//! ```
//!
//! The JSON block is `{"model": ModelConfig, "train": <any>}` with object keys
//! sorted, so identical models serialize to identical bytes. Batch-norm running
//! statistics are stored as `<layer>.running_mean` / `<layer>.running_var`.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{H2Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"H2CK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn encode_checkpoint(model: &H2Model, train: &serde_json::Value) -> Result<Vec<u8>> {
    let header = serde_json::json!({
        "model": serde_json::to_value(model.config())?,
        "train": train,
    });
    // serde_json's default map is ordered by key.
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_len(&mut out, json.len())?;
    out.extend_from_slice(&json);
    for (_, p) in model.store().iter() {
        put_tensor(&mut out, &p.name, &p.value)?;
    }
    for (name, s) in model.bn_states() {
        let c = s.running_mean.len();
        put_tensor(&mut out, &format!("{name}.running_mean"), &Tensor::new(&[c], s.running_mean.clone())?)?;
        put_tensor(&mut out, &format!("{name}.running_var"), &Tensor::new(&[c], s.running_var.clone())?)?;
    }
    Ok(out)
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit in u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_len(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_len(out, t.rank())?;
    for &d in t.shape() {
        put_len(out, d)?;
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "truncated checkpoint: {what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint without building a model. Never panics on malformed
/// input; every failure is a `Format` error.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let json_len = r.u32("config length")?;
    let json = r.take(json_len, "config")?;
    let mut header: serde_json::Value =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let obj = header
        .as_object_mut()
        .ok_or_else(|| Error::Format("checkpoint config is not an object".into()))?;
    let model = obj
        .remove("model")
        .ok_or_else(|| Error::Format("checkpoint config lacks \"model\"".into()))?;
    let model: ModelConfig =
        serde_json::from_value(model).map_err(|e| Error::Format(format!("checkpoint model config: {e}")))?;
    let train = obj.remove("train").unwrap_or(serde_json::Value::Null);

    let mut tensors = Vec::new();
    let mut seen = HashSet::new();
    while r.remaining() > 0 {
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate tensor {name:?}")));
        }
        let rank = r.u32("rank")?;
        if rank > r.remaining() / 4 {
            return Err(Error::Format(format!("tensor {name:?}: rank {rank} exceeds remaining bytes")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")?);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= r.remaining() / 8)
            .ok_or_else(|| Error::Format(format!("tensor {name:?}: shape {dims:?} exceeds remaining bytes")))?;
        let data = r
            .take(numel * 8, "tensor data")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&dims, data).map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
        tensors.push((name, t));
    }
    Ok(Checkpoint { model, train, tensors })
}

impl H2Model {
    /// Rebuilds a model from decoded checkpoint contents. Every parameter and
    /// batch-norm statistic must be present with the right shape; unknown
    /// tensors are rejected.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        // Initial values are all overwritten below.
        let mut model = H2Model::new(ck.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut pending: std::collections::HashMap<&str, &Tensor> =
            ck.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = pending
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name:?}")))?;
            if t.shape() != shape {
                return Err(Error::Format(format!(
                    "tensor {name:?} has shape {:?}, model expects {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let p = model.store.get_mut(id);
            p.value = take(&p.name, p.value.shape())?;
        }
        for (name, s) in model.bn_states_mut() {
            let c = s.running_mean.len();
            s.running_mean = take(&format!("{name}.running_mean"), &[c])?.into_data();
            s.running_var = take(&format!("{name}.running_var"), &[c])?.into_data();
        }
        if let Some(extra) = pending.keys().min() {
            return Err(Error::Format(format!("checkpoint has unknown tensor {extra:?}")));
        }
        Ok(model)
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, serde_json::Value)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = decode_checkpoint(&bytes)?;
        Ok((H2Model::from_checkpoint(&ck)?, ck.train))
    }

    pub fn save(&self, path: &std::path::Path, train: &serde_json::Value) -> Result<()> {
        let bytes = encode_checkpoint(self, train)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
