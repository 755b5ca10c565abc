//! Rate encoding and leaky integrate-and-fire neurons.
//!
//! The differentiable, time-unrolled form used inside networks is
//! [`Tape::lif`](crate::tensor::Tape::lif); this module holds the eager,
//! step-at-a-time form with explicit [`NeuronState`], the Bernoulli encoder
//! and the [`SpikeTrain`] container. Both forms share [`LifParams::fire`] and
//! [`LifParams::next_membrane`].

pub(crate) mod encoder;
mod neuron;

pub use encoder::{encode_rate, EncoderKind, EncoderSpec};
pub use neuron::{bsn_step, run_window, tsn_step, NeuronState, WindowInput};

use crate::error::{Error, Result};
use crate::tensor::{SpikeKind, Tensor};

pub use crate::tensor::{LifParams, ResetMode};

/// Default window length.
pub const T_STEPS: usize = 5;

/// Time-major spike tensor `[T, ..]` over the binary or ternary alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain {
    kind: SpikeKind,
    values: Tensor,
}

impl SpikeTrain {
    pub fn new(kind: SpikeKind, values: Tensor) -> Result<Self> {
        if values.rank() < 2 {
            return Err(Error::dim("spike_train", "needs a leading time axis"));
        }
        let ok = match kind {
            SpikeKind::Binary => values.data().iter().all(|&x| x == 0.0 || x == 1.0),
            SpikeKind::Ternary => values
                .data()
                .iter()
                .all(|&x| x == 0.0 || x == 1.0 || x == -1.0),
        };
        if !ok {
            return Err(Error::Contract(format!("values outside the {kind:?} spike alphabet")));
        }
        Ok(SpikeTrain { kind, values })
    }

    pub fn kind(&self) -> SpikeKind {
        self.kind
    }

    pub fn t_len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    /// Spikes emitted at step `t`.
    pub fn step(&self, t: usize) -> Result<Tensor> {
        self.values.slice_first(t)
    }

    /// Nonzero entries; a `-1` counts as one event.
    pub fn events(&self) -> u64 {
        count_events(self.values.data())
    }

    pub fn density(&self) -> f64 {
        self.events() as f64 / self.values.numel() as f64
    }
}

pub(crate) fn count_events(data: &[f32]) -> u64 {
    data.iter().filter(|&&x| x != 0.0).count() as u64
}

impl LifParams {
    /// Binary neuron: threshold 1, decay 0.5, subtractive reset.
    pub fn binary() -> Self {
        LifParams {
            kind: SpikeKind::Binary,
            beta: 0.5,
            vth_pos: 1.0,
            vth_neg: 0.0,
            v_reset: 0.0,
            reset: ResetMode::Subtractive,
            surrogate: Default::default(),
            stateful: true,
        }
    }

    /// Ternary neuron with the asymmetric thresholds `+1` / `-4`.
    pub fn ternary() -> Self {
        LifParams {
            kind: SpikeKind::Ternary,
            vth_neg: -4.0,
            ..Self::binary()
        }
    }

    /// Decay factor for a membrane time constant in steps: `1 - 1/tau`.
    pub fn beta_from_tau(tau: f32) -> Result<f32> {
        if !(tau >= 1.0) {
            return Err(Error::Config(format!("membrane time constant must be >= 1, got {tau}")));
        }
        Ok(1.0 - 1.0 / tau)
    }

    pub fn with_reset(mut self, reset: ResetMode) -> Self {
        self.reset = reset;
        self
    }

    pub fn with_beta(mut self, beta: f32) -> Self {
        self.beta = beta;
        self
    }

    pub fn stateless(mut self) -> Self {
        self.stateful = false;
        self
    }
}
