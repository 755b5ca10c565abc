//! Representational capacity in bits of a `c x h x w` feature map under
//! different encodings, assuming a uniform distribution over all codes.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityKind {
    /// 32-bit floats.
    Float32,
    /// Binary spikes over the whole window.
    Binary,
    /// Binary spikes of a single time step.
    BinaryStep,
    /// Ternary spikes over the whole window, two bits per symbol.
    Ternary,
}

impl FromStr for CapacityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "float32" => CapacityKind::Float32,
            "binary" => CapacityKind::Binary,
            "binary_step" => CapacityKind::BinaryStep,
            "ternary" => CapacityKind::Ternary,
            other => {
                return Err(Error::Usage(format!(
                    "unknown capacity kind `{other}` (expected float32, binary, binary_step or ternary)"
                )))
            }
        })
    }
}

/// `log2` of the number of distinct codes.
///
/// float32: `32 c h w`; binary: `T c h w`; binary_step: `c h w`;
/// ternary: `2 T c h w`. Every dimension must be positive.
pub fn capacity_bits(kind: CapacityKind, t: u64, c: u64, h: u64, w: u64) -> Result<u128> {
    if [t, c, h, w].contains(&0) {
        return Err(Error::Range(format!("capacity needs positive dimensions, got T={t} c={c} h={h} w={w}")));
    }
    let map = c as u128 * h as u128 * w as u128;
    Ok(match kind {
        CapacityKind::Float32 => 32 * map,
        CapacityKind::Binary => t as u128 * map,
        CapacityKind::BinaryStep => map,
        CapacityKind::Ternary => 2 * t as u128 * map,
    })
}
