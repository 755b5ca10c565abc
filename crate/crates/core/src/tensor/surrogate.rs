use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    Arctangent,
}

/// Smooth stand-in derivative for the Heaviside spike function.
///
/// The arctangent kernel is `g(u) = slope / (1 + (pi * slope * u)^2)`: even,
/// strictly positive, and peaking at `g(0) = slope`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub slope: f32,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            kind: SurrogateKind::Arctangent,
            slope: 2.0,
        }
    }
}

impl SurrogateSpec {
    pub fn arctangent(slope: f32) -> Result<Self> {
        let spec = SurrogateSpec {
            kind: SurrogateKind::Arctangent,
            slope,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slope > 0.0 && self.slope.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "surrogate slope must be positive, got {}",
                self.slope
            )))
        }
    }

    #[inline]
    pub fn grad(&self, u: f32) -> f32 {
        match self.kind {
            SurrogateKind::Arctangent => {
                let z = std::f32::consts::PI * self.slope * u;
                self.slope / (1.0 + z * z)
            }
        }
    }
}
