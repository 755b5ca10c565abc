//! Binary checkpoint: magic, version, length-prefixed JSON network spec,
//! training step and seed, then named little-endian `f32` blobs in parameter
//! order.

use std::path::Path;

use super::{NetworkSpec, QNetwork};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MMDQN1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub step: u64,
    pub seed: u64,
    pub blobs: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Integrity {
                offset: self.pos as u64,
                detail: format!("truncated while reading {what}"),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn bad(&self, at: usize, detail: impl Into<String>) -> Error {
        Error::Integrity {
            offset: at as u64,
            detail: detail.into(),
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let spec = serde_json::to_vec(&self.spec)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(6, "magic")? != CHECKPOINT_MAGIC {
            return Err(r.bad(0, "bad magic"));
        }
        let at = r.pos;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.bad(at, format!("unsupported version {version}")));
        }
        let len = r.u32("spec length")? as usize;
        let at = r.pos;
        let spec: NetworkSpec =
            serde_json::from_slice(r.take(len, "spec")?).map_err(|e| r.bad(at, format!("spec json: {e}")))?;
        let step = r.u64("step")?;
        let seed = r.u64("seed")?;
        let count = r.u32("blob count")?;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let n = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(n, "name")?)
                .map_err(|_| r.bad(at, "parameter name is not utf-8"))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            let at = r.pos;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| r.bad(at, format!("blob `{name}` size overflows")))?;
            let raw = r.take(numel, &format!("blob `{name}`"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            blobs.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(r.bad(r.pos, "trailing bytes after the last blob"));
        }
        Ok(Checkpoint { spec, step, seed, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl QNetwork {
    pub fn to_checkpoint(&self, step: u64, seed: u64) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            step,
            seed,
            blobs: self.params.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect(),
        }
    }

    /// Overwrites the parameters with the checkpoint's blobs, which must
    /// match this network's names and shapes in order.
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let ours: Vec<_> = self.params.iter().map(|p| (p.name.clone(), p.tensor.shape().to_vec())).collect();
        for (i, (name, shape)) in ours.iter().enumerate() {
            match ckpt.blobs.get(i) {
                Some((n, t)) if n == name && t.shape() == shape.as_slice() => {}
                Some((_, t)) => {
                    return Err(Error::ParamShape {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                None => {
                    return Err(Error::ParamShape {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: Vec::new(),
                    })
                }
            }
        }
        if let Some((name, t)) = ckpt.blobs.get(ours.len()) {
            return Err(Error::ParamShape {
                name: name.clone(),
                expected: Vec::new(),
                found: t.shape().to_vec(),
            });
        }
        for (i, (_, t)) in ckpt.blobs.iter().enumerate() {
            t.check_finite("checkpoint")?;
            self.params.get_mut(i).data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Rebuilds the network described by the checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut net = QNetwork::new(ckpt.spec.clone(), ckpt.seed)?;
        net.load_params(ckpt)?;
        Ok(net)
    }
}
