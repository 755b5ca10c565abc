//! Negative-negative alignment under binary versus ternary spike coding.
//!
//! Pairs `q, k` with strictly negative coordinates always have `q.k > 0`, yet
//! a binary neuron never fires on a negative current, so the spike map
//! `M(q, k) = sum_i sum_t s_i(t; q_i) s_i(t; k_i)` is zero. A ternary neuron
//! fires `-1` once its membrane reaches the negative threshold, so the same
//! pair can produce a positive map entry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spike::{run_window, NeuronState, WindowInput, T_STEPS};
use crate::tensor::{LifParams, Tensor};

/// Coordinates are drawn uniformly from `[-COORD_MAX, -COORD_MIN]`; the range
/// reaches past the ternary neuron's negative threshold.
pub const COORD_MIN: f32 = 0.05;
pub const COORD_MAX: f32 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop2Witness {
    pub q: Vec<f32>,
    pub k: Vec<f32>,
    pub dot: f64,
    pub binary_map: i64,
    pub ternary_map: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop2Report {
    pub d: usize,
    pub trials: usize,
    /// Fraction of pairs with `q.k > 0`.
    pub dot_positive_rate: f64,
    /// Fraction of pairs with `q.k > 0` but a zero binary spike map.
    pub violation_rate: f64,
    /// Fraction of pairs whose ternary spike map is nonzero.
    pub ternary_nonzero_rate: f64,
    pub witness: Option<Prop2Witness>,
}

/// Spike map of two coordinate vectors encoded as constant currents over
/// `t_len` steps by independent neurons with `params`.
pub fn spike_map(q: &[f32], k: &[f32], params: LifParams, t_len: usize) -> Result<i64> {
    if q.len() != k.len() {
        return Err(Error::dim("spike_map", format!("{} vs {} coordinates", q.len(), k.len())));
    }
    let encode = |x: &[f32]| -> Result<Tensor> {
        let mut st = NeuronState::new([x.len()], params)?;
        let input = Tensor::new([x.len()], x.to_vec())?;
        Ok(run_window(&mut st, WindowInput::Constant(&input), t_len)?.into_tensor())
    };
    let sq = encode(q)?;
    let sk = encode(k)?;
    Ok(sq.data().iter().zip(sk.data()).map(|(a, b)| (a * b) as i64).sum())
}

/// Samples `trials` all-negative pairs in dimension `d` and measures both
/// encodings with the default binary and ternary neurons over `T` steps.
pub fn prop2_demo(d: usize, trials: usize, seed: u64) -> Result<Prop2Report> {
    if d == 0 {
        return Err(Error::Range("dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (binary, ternary) = (LifParams::binary(), LifParams::ternary());
    let (mut pos, mut viol, mut tern) = (0usize, 0usize, 0usize);
    let mut witness = None;
    for _ in 0..trials {
        let mut draw = || -> Vec<f32> { (0..d).map(|_| -rng.random_range(COORD_MIN..=COORD_MAX)).collect() };
        let q = draw();
        let k = draw();
        let dot: f64 = q.iter().zip(&k).map(|(a, b)| *a as f64 * *b as f64).sum();
        let mb = spike_map(&q, &k, binary, T_STEPS)?;
        let mt = spike_map(&q, &k, ternary, T_STEPS)?;
        if dot > 0.0 {
            pos += 1;
            if mb == 0 {
                viol += 1;
                if witness.is_none() {
                    witness = Some(Prop2Witness {
                        q: q.clone(),
                        k: k.clone(),
                        dot,
                        binary_map: mb,
                        ternary_map: mt,
                    });
                }
            }
        }
        if mt != 0 {
            tern += 1;
        }
    }
    let rate = |n: usize| if trials == 0 { 0.0 } else { n as f64 / trials as f64 };
    Ok(Prop2Report {
        d,
        trials,
        dot_positive_rate: rate(pos),
        violation_rate: rate(viol),
        ternary_nonzero_rate: rate(tern),
        witness,
    })
}
