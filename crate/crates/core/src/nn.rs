//! Named parameter storage and the small layers the networks are built from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::SpikeStats;
use crate::error::{Error, Result};
use crate::tensor::{Adam, BatchNormMode, BatchStats, Gradients, LifParams, Tape, Tensor, Var};

pub type ParamId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Trainable,
    /// Running statistics: saved and copied, never optimized.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub kind: ParamKind,
}

/// Ordered, uniquely named parameters of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param { name, tensor, kind });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Scalar count of trainable weights.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Puts every trainable tensor on the tape; buffers stay off it.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let mut vars = Vec::with_capacity(self.params.len());
        for p in &self.params {
            vars.push(match p.kind {
                ParamKind::Trainable => Some(tape.param(p.tensor.clone())?),
                ParamKind::Buffer => None,
            });
        }
        Ok(Bound { vars })
    }

    /// Overwrites every value with the matching entry of `other`.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.tensor.data_mut().copy_from_slice(b.tensor.data());
        }
        Ok(())
    }

    /// Same names, kinds and shapes in the same order.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Config(format!(
                "parameter count differs: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::ParamShape {
                    name: a.name.clone(),
                    expected: a.tensor.shape().to_vec(),
                    found: b.tensor.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// One Adam update of the trainable parameters from tape gradients.
    pub fn apply_adam(&mut self, adam: &mut Adam, bound: &Bound, grads: &Gradients) -> Result<()> {
        let ids: Vec<ParamId> = (0..self.params.len())
            .filter(|&i| self.params[i].kind == ParamKind::Trainable)
            .collect();
        let mut tensors: Vec<Tensor> = ids
            .iter()
            .map(|&i| std::mem::replace(&mut self.params[i].tensor, Tensor::scalar(0.0)))
            .collect();
        let gs: Vec<Option<&Tensor>> = ids.iter().map(|&i| bound.vars[i].and_then(|v| grads.get(v))).collect();
        let res = adam.step(&mut tensors, &gs);
        for (&i, t) in ids.iter().zip(tensors) {
            self.params[i].tensor = t;
        }
        res
    }
}

/// Tape handles for one forward; `None` for buffers.
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id].expect("buffer parameters are not bound to the tape")
    }
}

/// Per-forward state: normalization mode, encoder seed, pending running
/// statistics and optional spike recording.
pub struct Ctx {
    pub train: bool,
    pub seed: u64,
    pub stats: Option<SpikeStats>,
    bn_updates: Vec<(ParamId, ParamId, BatchStats)>,
}

impl Ctx {
    pub fn eval(seed: u64) -> Self {
        Ctx {
            train: false,
            seed,
            stats: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(seed: u64) -> Self {
        Ctx {
            train: true,
            ..Self::eval(seed)
        }
    }

    pub fn recording(mut self) -> Self {
        self.stats = Some(SpikeStats::new());
        self
    }

    /// Spiking neuron layer over the leading time axis, recorded under `name`.
    pub fn spike(&mut self, tape: &mut Tape, name: &str, x: Var, params: LifParams) -> Result<Var> {
        let s = tape.lif(x, params)?;
        if let Some(stats) = self.stats.as_mut() {
            stats.record(name, tape.value(s).data());
        }
        Ok(s)
    }

    /// Folds the batch statistics of this forward into the running buffers.
    pub fn commit_batch_norm(&mut self, store: &mut ParamStore, momentum: f32) {
        for (mean_id, var_id, stats) in self.bn_updates.drain(..) {
            for (r, b) in store.get_mut(mean_id).data_mut().iter_mut().zip(&stats.mean) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            for (r, b) in store.get_mut(var_id).data_mut().iter_mut().zip(&stats.var) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }
}

/// Weight initialization stream.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `+-sqrt(6 / fan_in)`.
    pub fn kaiming(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f32).sqrt();
        Tensor::from_fn(shape.to_vec(), |_| self.rng.random_range(-bound..bound))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let w = store.add(format!("{name}.weight"), init.kaiming(&[d_in, d_out], d_in), ParamKind::Trainable)?;
        let b = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros([d_out]), ParamKind::Trainable)?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p.var(self.w), self.b.map(|b| p.var(b)))
    }

    /// Same map on a spike input, computed by accumulation.
    pub fn forward_spikes(&self, tape: &mut Tape, p: &Bound, s: Var) -> Result<Var> {
        tape.spike_linear(s, p.var(self.w), self.b.map(|b| p.var(b)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        let w = store.add(
            format!("{name}.weight"),
            init.kaiming(&[cout, cin, kernel, kernel], fan_in),
            ParamKind::Trainable,
        )?;
        let b = store.add(format!("{name}.bias"), Tensor::zeros([cout]), ParamKind::Trainable)?;
        Ok(Conv { w, b, stride })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.var(self.w), Some(p.var(self.b)), (self.stride, self.stride))
    }

    pub fn forward_spikes(&self, tape: &mut Tape, p: &Bound, s: Var) -> Result<Var> {
        tape.spike_conv2d(s, p.var(self.w), Some(p.var(self.b)), (self.stride, self.stride))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([d]), ParamKind::Trainable)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros([d]), ParamKind::Trainable)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

/// Batch normalization over the last axis with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([d]), ParamKind::Trainable)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros([d]), ParamKind::Trainable)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros([d]), ParamKind::Buffer)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones([d]), ParamKind::Buffer)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, p: &Bound, ctx: &mut Ctx, x: Var) -> Result<Var> {
        self.apply(tape, store, p, ctx, x, false)
    }

    /// Normalizes `x [N, C, H, W]` per channel.
    pub fn forward_channels(&self, tape: &mut Tape, store: &ParamStore, p: &Bound, ctx: &mut Ctx, x: Var) -> Result<Var> {
        self.apply(tape, store, p, ctx, x, true)
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, p: &Bound, ctx: &mut Ctx, x: Var, channels: bool) -> Result<Var> {
        let (g, b) = (p.var(self.gamma), p.var(self.beta));
        let mode = if ctx.train {
            BatchNormMode::Train
        } else {
            BatchNormMode::Eval {
                mean: store.get(self.running_mean).data(),
                var: store.get(self.running_var).data(),
            }
        };
        let (y, stats) = if channels {
            tape.batch_norm_channels(x, g, b, mode)?
        } else {
            tape.batch_norm(x, g, b, mode)?
        };
        if let Some(stats) = stats {
            ctx.bn_updates.push((self.running_mean, self.running_var, stats));
        }
        Ok(y)
    }
}
