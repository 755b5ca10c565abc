use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SpikeTrain;
use crate::error::{Error, Result};
use crate::tensor::{SpikeKind, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Bernoulli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub t_len: usize,
    pub seed: u64,
    /// Reject inputs outside `[0, 1]` instead of clamping them.
    pub strict: bool,
}

impl EncoderSpec {
    pub fn bernoulli(t_len: usize, seed: u64) -> Self {
        EncoderSpec {
            kind: EncoderKind::Bernoulli,
            t_len,
            seed,
            strict: false,
        }
    }
}

/// Bernoulli rate code: entry `i` at step `t` fires with probability `x[i]`.
///
/// Draws come from a ChaCha stream selected by `(seed, t)` and are consumed in
/// flat index order, so each `(seed, t, i)` always maps to the same uniform
/// variate regardless of how the caller batches its work.
pub fn encode_rate(x: &Tensor, spec: &EncoderSpec) -> Result<SpikeTrain> {
    if spec.t_len == 0 {
        return Err(Error::Config("encoder window must be at least one step".into()));
    }
    if spec.strict {
        if let Some(bad) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("rate input {bad} outside [0, 1]")));
        }
    }
    let n = x.numel();
    let mut out = vec![0.0f32; spec.t_len * n];
    encode_into(x.data(), spec.t_len, spec.seed, &mut out);
    let mut shape = vec![spec.t_len];
    shape.extend_from_slice(x.shape());
    SpikeTrain::new(SpikeKind::Binary, Tensor::from_parts(shape, out))
}

pub(crate) fn encode_into(p: &[f32], t_len: usize, seed: u64, out: &mut [f32]) {
    let n = p.len();
    for t in 0..t_len {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        for (o, &pi) in out[t * n..(t + 1) * n].iter_mut().zip(p) {
            let u: f32 = rng.random();
            *o = if u < pi.clamp(0.0, 1.0) { 1.0 } else { 0.0 };
        }
    }
}
