use super::SpikeTrain;
use crate::error::{Error, Result};
use crate::tensor::{LifParams, SpikeKind, Tensor};

/// Membrane potentials of one neuron layer plus its configuration.
#[derive(Clone, Debug)]
pub struct NeuronState {
    pub params: LifParams,
    v: Tensor,
    steps: usize,
}

impl NeuronState {
    /// Resting state (`v = 0`) for a layer of the given output shape.
    pub fn new(shape: impl Into<Vec<usize>>, params: LifParams) -> Result<Self> {
        params.validate()?;
        Ok(NeuronState {
            params,
            v: Tensor::zeros(shape),
            steps: 0,
        })
    }

    pub fn v(&self) -> &Tensor {
        &self.v
    }

    /// Steps integrated since the last reset.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset(&mut self) {
        self.v.data_mut().fill(0.0);
        self.steps = 0;
    }

    fn step(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.v.shape() {
            return Err(Error::dim(
                "neuron_step",
                format!("input {:?} vs state {:?}", x.shape(), self.v.shape()),
            ));
        }
        x.check_finite("neuron_step")?;
        let p = self.params;
        let mut s = vec![0.0f32; x.numel()];
        for ((si, vi), &xi) in s.iter_mut().zip(self.v.data_mut()).zip(x.data()) {
            let m = *vi + xi;
            *si = p.fire(m);
            *vi = p.next_membrane(m, *si);
        }
        self.steps += 1;
        Ok(Tensor::from_parts(x.shape().to_vec(), s))
    }
}

/// One binary step: `m = v + x`, `s = H(m - vth)`, then reset and leak.
pub fn bsn_step(x: &Tensor, state: &mut NeuronState) -> Result<Tensor> {
    if state.params.kind != SpikeKind::Binary {
        return Err(Error::Config("bsn_step needs a binary neuron configuration".into()));
    }
    state.step(x)
}

/// One ternary step: `+1` at or above the positive threshold, `-1` at or
/// below the negative one, `0` in between.
pub fn tsn_step(x: &Tensor, state: &mut NeuronState) -> Result<Tensor> {
    if state.params.kind != SpikeKind::Ternary {
        return Err(Error::Config("tsn_step needs a ternary neuron configuration".into()));
    }
    state.step(x)
}

/// Input current for a window: a per-step train or one tensor held constant.
pub enum WindowInput<'a> {
    Train(&'a Tensor),
    Constant(&'a Tensor),
}

/// Runs a fresh neuron layer over `t_len` steps.
///
/// The state must be at rest; a state that already integrated input belongs
/// to another forward and is rejected.
pub fn run_window(state: &mut NeuronState, input: WindowInput<'_>, t_len: usize) -> Result<SpikeTrain> {
    if state.steps != 0 {
        return Err(Error::Usage(format!(
            "neuron state already advanced {} steps; reset it before a new window",
            state.steps
        )));
    }
    if t_len == 0 {
        return Err(Error::Config("window must be at least one step".into()));
    }
    let mut steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x = match input {
            WindowInput::Constant(x) => x.clone(),
            WindowInput::Train(train) => {
                if train.shape()[0] != t_len {
                    return Err(Error::dim(
                        "run_window",
                        format!("train has {} steps, window {t_len}", train.shape()[0]),
                    ));
                }
                train.slice_first(t)?
            }
        };
        steps.push(state.step(&x)?);
    }
    SpikeTrain::new(state.params.kind, Tensor::stack(&steps)?)
}
