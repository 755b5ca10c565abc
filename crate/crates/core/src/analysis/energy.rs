//! Operation-energy model: every MAC of the dense network costs `E_MAC`;
//! the spiking network pays `E_AC` per accumulate, scaled by the firing
//! density and the number of time steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy of one multiply-accumulate, pJ.
pub const E_MAC_PJ: f64 = 4.6;
/// Energy of one accumulate, pJ.
pub const E_AC_PJ: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub flops: u64,
    pub t_len: usize,
    pub density: f64,
    pub e_mac: f64,
    pub e_ac: f64,
    /// `flops * e_mac`, pJ.
    pub e_ann: f64,
    /// `flops * t_len * density * e_ac`, pJ.
    pub e_snn: f64,
}

impl EnergyReport {
    /// Spiking energy per dense operation, pJ.
    pub fn snn_per_op(&self) -> f64 {
        self.t_len as f64 * self.density * self.e_ac
    }

    pub fn ann_per_op(&self) -> f64 {
        self.e_mac
    }

    /// `e_snn / e_ann`.
    pub fn ratio(&self) -> f64 {
        self.e_snn / self.e_ann
    }
}

pub fn energy_estimate(flops: u64, density: f64, t_len: usize) -> Result<EnergyReport> {
    if flops == 0 {
        return Err(Error::Range("energy estimate needs a positive operation count".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Range(format!("density must lie in [0, 1], got {density}")));
    }
    if t_len == 0 {
        return Err(Error::Range("energy estimate needs at least one time step".into()));
    }
    let f = flops as f64;
    Ok(EnergyReport {
        flops,
        t_len,
        density,
        e_mac: E_MAC_PJ,
        e_ac: E_AC_PJ,
        e_ann: f * E_MAC_PJ,
        e_snn: f * t_len as f64 * density * E_AC_PJ,
    })
}
