//! The multi-modal Q-network (BEV + LiDAR image, fused by cross-attention) in
//! dense and spiking variants, and the single-modality frame-stack baseline.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionMode, CrossFusion};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Bound, Conv, Ctx, Init, Linear, ParamStore};
use crate::spike::encoder::encode_into;
use crate::tensor::{conv_out_size, LifParams, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dense,
    Ssa,
    Ttsa,
    Unimodal4,
    Unimodal1,
}

impl Variant {
    pub fn is_spiking(self) -> bool {
        matches!(self, Variant::Ssa | Variant::Ttsa)
    }

    pub fn is_multimodal(self) -> bool {
        matches!(self, Variant::Dense | Variant::Ssa | Variant::Ttsa)
    }

    /// BEV frames stacked as input channels.
    pub fn frames(self) -> usize {
        match self {
            Variant::Unimodal4 => 4,
            _ => 1,
        }
    }

    pub fn attention_mode(self) -> Option<AttentionMode> {
        match self {
            Variant::Dense => Some(AttentionMode::Dense),
            Variant::Ssa => Some(AttentionMode::Ssa),
            Variant::Ttsa => Some(AttentionMode::Ttsa),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::Ssa => "ssa",
            Variant::Ttsa => "ttsa",
            Variant::Unimodal4 => "unimodal4",
            Variant::Unimodal1 => "unimodal1",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dense" => Variant::Dense,
            "ssa" => Variant::Ssa,
            "ttsa" => Variant::Ttsa,
            "unimodal4" => Variant::Unimodal4,
            "unimodal1" => Variant::Unimodal1,
            other => return Err(Error::Config(format!("unknown variant `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernels: [usize; 3],
    pub strides: [usize; 3],
    pub channels: [usize; 3],
}

impl ConvSpec {
    pub fn bev() -> Self {
        ConvSpec {
            kernels: [5, 3, 3],
            strides: [3, 2, 1],
            channels: [8, 16, 16],
        }
    }

    pub fn lidar() -> Self {
        ConvSpec {
            kernels: [7, 5, 3],
            strides: [3, 3, 1],
            channels: [8, 16, 16],
        }
    }

    /// Side length after each layer for a square input, or `None` when a
    /// kernel no longer fits.
    pub fn grid(&self, input: usize) -> Option<[usize; 3]> {
        let a = conv_out_size(input, self.kernels[0], self.strides[0])?;
        let b = conv_out_size(a, self.kernels[1], self.strides[1])?;
        let c = conv_out_size(b, self.kernels[2], self.strides[2])?;
        Some([a, b, c])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: Variant,
    /// Side of both square input rasters.
    pub input_size: usize,
    pub bev_conv: ConvSpec,
    pub lidar_conv: ConvSpec,
    pub lidar_channels: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub decision_ff: usize,
    pub n_actions: usize,
    pub t_len: usize,
    pub omega: f32,
    pub neuron: LifParams,
    pub ternary: LifParams,
    /// TTSA mask neuron keeps its membrane across steps.
    pub mask_stateful: bool,
}

impl NetworkSpec {
    pub fn new(variant: Variant) -> Self {
        NetworkSpec {
            variant,
            input_size: 64,
            bev_conv: ConvSpec::bev(),
            lidar_conv: ConvSpec::lidar(),
            lidar_channels: 1,
            d_model: 32,
            n_heads: 8,
            d_ff: 128,
            decision_ff: 512,
            n_actions: 5,
            t_len: crate::spike::T_STEPS,
            omega: 0.125,
            neuron: LifParams::binary(),
            ternary: LifParams::ternary(),
            mask_stateful: true,
        }
    }

    pub fn attention(&self) -> Option<AttentionConfig> {
        let mode = self.variant.attention_mode()?;
        let mut mask = self.neuron;
        mask.stateful = self.mask_stateful;
        Some(AttentionConfig {
            mode,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            omega: self.omega,
            t_len: self.t_len,
            neuron: self.neuron,
            ternary: self.ternary,
            mask,
        })
    }

    /// Token grid sides `(bev, lidar)` after the extractors.
    pub fn token_grids(&self) -> Result<(usize, usize)> {
        let bev = self.bev_conv.grid(self.input_size).ok_or_else(|| {
            Error::Config(format!("BEV convolutions do not fit a {0}x{0} input", self.input_size))
        })?;
        let lidar = self.lidar_conv.grid(self.input_size).ok_or_else(|| {
            Error::Config(format!("LiDAR convolutions do not fit a {0}x{0} input", self.input_size))
        })?;
        Ok((bev[2], lidar[2]))
    }

    pub fn validate(&self) -> Result<()> {
        self.token_grids()?;
        if let Some(a) = self.attention() {
            a.validate()?;
        }
        if self.n_actions == 0 || self.decision_ff == 0 {
            return Err(Error::Config("decision head sizes must be positive".into()));
        }
        if self.lidar_channels == 0 {
            return Err(Error::Config("LiDAR input needs at least one channel".into()));
        }
        Ok(())
    }
}

/// Network input for a batch: BEV `[B, k, S, S]` and, for multi-modal
/// variants, the LiDAR image `[B, C, S, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInput {
    pub bev: Tensor,
    pub lidar: Option<Tensor>,
}

impl NetInput {
    pub fn batch(&self) -> usize {
        self.bev.shape()[0]
    }
}

#[derive(Clone, Debug)]
struct Extractor {
    convs: [Conv; 3],
    /// Per-channel normalization ahead of each spiking layer.
    norms: Option<[BatchNorm; 3]>,
    prefix: &'static str,
}

#[derive(Clone, Debug)]
enum Arch {
    MultiModal {
        bev: Extractor,
        lidar: Extractor,
        embed_bev: Linear,
        embed_lidar: Linear,
        /// Spiking variants normalize embeddings and the hidden head layer.
        norms: Option<Box<[BatchNorm; 3]>>,
        fusion: Box<CrossFusion>,
        fc1: Linear,
        fc2: Linear,
    },
    Unimodal {
        bev: Extractor,
        fc1: Linear,
        fc2: Linear,
    },
}

/// Action-value network with its parameters.
#[derive(Clone, Debug)]
pub struct QNetwork {
    spec: NetworkSpec,
    pub params: ParamStore,
    arch: Arch,
}

fn extractor(
    store: &mut ParamStore,
    init: &mut Init,
    prefix: &'static str,
    cin: usize,
    c: &ConvSpec,
    spiking: bool,
) -> Result<Extractor> {
    let mut convs = Vec::with_capacity(3);
    let mut ch = cin;
    for i in 0..3 {
        convs.push(Conv::new(
            store,
            init,
            &format!("{prefix}.conv{}", i + 1),
            ch,
            c.channels[i],
            c.kernels[i],
            c.strides[i],
        )?);
        ch = c.channels[i];
    }
    let convs: [Conv; 3] = convs.try_into().expect("three layers");
    let norms = if spiking {
        Some([
            BatchNorm::new(store, &format!("{prefix}.bn1"), c.channels[0])?,
            BatchNorm::new(store, &format!("{prefix}.bn2"), c.channels[1])?,
            BatchNorm::new(store, &format!("{prefix}.bn3"), c.channels[2])?,
        ])
    } else {
        None
    };
    Ok(Extractor { convs, norms, prefix })
}

impl QNetwork {
    /// Fresh network with seeded fan-in uniform weights and zero biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let (gb, gl) = spec.token_grids()?;
        let spiking = spec.variant.is_spiking();
        let arch = if spec.variant.is_multimodal() {
            let bev = extractor(&mut store, &mut init, "bev", 1, &spec.bev_conv, spiking)?;
            let lidar = extractor(&mut store, &mut init, "lidar", spec.lidar_channels, &spec.lidar_conv, spiking)?;
            let embed_bev = Linear::new(&mut store, &mut init, "embed_bev", spec.bev_conv.channels[2], spec.d_model, true)?;
            let embed_lidar = Linear::new(
                &mut store,
                &mut init,
                "embed_lidar",
                spec.lidar_conv.channels[2],
                spec.d_model,
                true,
            )?;
            let cfg = spec.attention().expect("multi-modal variants fuse by attention");
            let fusion = CrossFusion::new(&mut store, &mut init, "fusion", cfg, gb * gb, gl * gl)?;
            let flat = gb * gb * spec.d_model;
            let fc1 = Linear::new(&mut store, &mut init, "head.fc1", flat, spec.decision_ff, true)?;
            let fc2 = Linear::new(&mut store, &mut init, "head.fc2", spec.decision_ff, spec.n_actions, true)?;
            let norms = if spiking {
                Some(Box::new([
                    BatchNorm::new(&mut store, "embed_bev.bn", spec.d_model)?,
                    BatchNorm::new(&mut store, "embed_lidar.bn", spec.d_model)?,
                    BatchNorm::new(&mut store, "head.bn1", spec.decision_ff)?,
                ]))
            } else {
                None
            };
            Arch::MultiModal {
                bev,
                lidar,
                embed_bev,
                embed_lidar,
                norms,
                fusion: Box::new(fusion),
                fc1,
                fc2,
            }
        } else {
            let bev = extractor(&mut store, &mut init, "bev", spec.variant.frames(), &spec.bev_conv, false)?;
            let flat = spec.bev_conv.channels[2] * gb * gb;
            let fc1 = Linear::new(&mut store, &mut init, "head.fc1", flat, spec.decision_ff, true)?;
            let fc2 = Linear::new(&mut store, &mut init, "head.fc2", spec.decision_ff, spec.n_actions, true)?;
            Arch::Unimodal { bev, fc1, fc2 }
        };
        Ok(QNetwork {
            spec,
            params: store,
            arch,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Human-readable parameter inventory, one `name: shape = count` line per
    /// tensor and a trailing total.
    pub fn param_report(&self) -> String {
        let mut s = String::new();
        for p in self.params.iter() {
            let _ = writeln!(s, "{}: {:?} = {}", p.name, p.tensor.shape(), p.tensor.numel());
        }
        let _ = writeln!(s, "trainable_total: {}", self.params.trainable_count());
        s
    }

    fn check_input(&self, input: &NetInput) -> Result<()> {
        let s = self.spec.input_size;
        let b = input.batch();
        let expect_bev = [b, self.spec.variant.frames(), s, s];
        if input.bev.shape() != expect_bev {
            return Err(Error::Config(format!(
                "BEV input {:?} does not match {:?}",
                input.bev.shape(),
                expect_bev
            )));
        }
        match (&input.lidar, self.spec.variant.is_multimodal()) {
            (Some(l), true) => {
                let expect = [b, self.spec.lidar_channels, s, s];
                if l.shape() != expect {
                    return Err(Error::Config(format!("LiDAR input {:?} does not match {expect:?}", l.shape())));
                }
            }
            (None, true) => return Err(Error::Config("multi-modal network needs a LiDAR input".into())),
            (Some(_), false) => return Err(Error::Config("frame-stack network takes no LiDAR input".into())),
            (None, false) => {}
        }
        Ok(())
    }

    /// Rate-encodes `x [B, ..]` into a `[T*B, ..]` leaf.
    fn encode(&self, tape: &mut Tape, x: &Tensor, seed: u64) -> Result<Var> {
        let t = self.spec.t_len;
        let mut out = vec![0.0f32; t * x.numel()];
        encode_into(x.data(), t, seed, &mut out);
        let mut shape = x.shape().to_vec();
        shape[0] *= t;
        tape.leaf(Tensor::new(shape, out)?)
    }

    fn run_extractor(&self, tape: &mut Tape, p: &Bound, ctx: &mut Ctx, ex: &Extractor, mut x: Var) -> Result<Var> {
        let spiking = self.spec.variant.is_spiking();
        let t = self.spec.t_len;
        for (i, conv) in ex.convs.iter().enumerate() {
            if spiking {
                x = conv.forward_spikes(tape, p, x)?;
                if let Some(norms) = &ex.norms {
                    x = norms[i].forward_channels(tape, &self.params, p, ctx, x)?;
                }
                let s = tape.value(x).shape().to_vec();
                let timed = tape.reshape(x, &[t, s[0] / t, s[1], s[2], s[3]])?;
                let spikes = ctx.spike(tape, &format!("{}.conv{}", ex.prefix, i + 1), timed, self.spec.neuron)?;
                x = tape.reshape(spikes, &s)?;
            } else {
                x = conv.forward(tape, p, x)?;
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    /// `[G, C, h, w] -> [G, h*w, C]`.
    fn tokens(tape: &mut Tape, x: Var) -> Result<Var> {
        let s = tape.value(x).shape().to_vec();
        let flat = tape.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
        tape.permute(flat, &[0, 2, 1])
    }

    /// Q-values `[B, n_actions]` for a batch.
    ///
    /// Spiking variants rate-encode the inputs over `T` steps with encoder
    /// seeds derived from `ctx.seed`, and average a per-step linear readout of
    /// the last spiking layer.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, ctx: &mut Ctx, input: &NetInput) -> Result<Var> {
        self.check_input(input)?;
        let b = input.batch();
        let spiking = self.spec.variant.is_spiking();
        let t = self.spec.t_len;
        match &self.arch {
            Arch::Unimodal { bev, fc1, fc2 } => {
                let x = tape.leaf(input.bev.clone())?;
                let f = self.run_extractor(tape, p, ctx, bev, x)?;
                let n = tape.value(f).numel() / b;
                let flat = tape.reshape(f, &[b, n])?;
                let h = fc1.forward(tape, p, flat)?;
                let h = tape.relu(h)?;
                fc2.forward(tape, p, h)
            }
            Arch::MultiModal {
                bev,
                lidar,
                embed_bev,
                embed_lidar,
                norms,
                fusion,
                fc1,
                fc2,
            } => {
                let lidar_in = input.lidar.as_ref().expect("checked above");
                let (xb, xl) = if spiking {
                    (
                        self.encode(tape, &input.bev, ctx.seed.wrapping_mul(2).wrapping_add(1))?,
                        self.encode(tape, lidar_in, ctx.seed.wrapping_mul(2).wrapping_add(2))?,
                    )
                } else {
                    (tape.leaf(input.bev.clone())?, tape.leaf(lidar_in.clone())?)
                };
                let fb = self.run_extractor(tape, p, ctx, bev, xb)?;
                let fl = self.run_extractor(tape, p, ctx, lidar, xl)?;
                let tb = Self::tokens(tape, fb)?;
                let tl = Self::tokens(tape, fl)?;
                let (mut eb, mut el) = if spiking {
                    (embed_bev.forward_spikes(tape, p, tb)?, embed_lidar.forward_spikes(tape, p, tl)?)
                } else {
                    (embed_bev.forward(tape, p, tb)?, embed_lidar.forward(tape, p, tl)?)
                };
                if let Some(n) = norms {
                    eb = n[0].forward(tape, &self.params, p, ctx, eb)?;
                    el = n[1].forward(tape, &self.params, p, ctx, el)?;
                }
                if spiking {
                    let sb = tape.value(eb).shape().to_vec();
                    let sl = tape.value(el).shape().to_vec();
                    eb = tape.reshape(eb, &[t, b, sb[1], sb[2]])?;
                    el = tape.reshape(el, &[t, b, sl[1], sl[2]])?;
                }
                let fused = fusion.forward(tape, &self.params, p, ctx, eb, el)?;
                if spiking {
                    let s = ctx.spike(tape, "fusion.out", fused, self.spec.neuron)?;
                    let n = tape.value(s).numel() / (t * b);
                    let flat = tape.reshape(s, &[t, b, n])?;
                    let mut h = fc1.forward_spikes(tape, p, flat)?;
                    if let Some(n) = norms {
                        h = n[2].forward(tape, &self.params, p, ctx, h)?;
                    }
                    let h = ctx.spike(tape, "head.fc1", h, self.spec.neuron)?;
                    let q = fc2.forward_spikes(tape, p, h)?;
                    tape.mean_first(q)
                } else {
                    let n = tape.value(fused).numel() / b;
                    let flat = tape.reshape(fused, &[b, n])?;
                    let h = fc1.forward(tape, p, flat)?;
                    let h = tape.relu(h)?;
                    fc2.forward(tape, p, h)
                }
            }
        }
    }

    /// Gradient-free Q-values `[B, n_actions]` with running normalization
    /// statistics.
    pub fn q_values(&self, input: &NetInput, seed: u64) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape)?;
        let mut ctx = Ctx::eval(seed);
        let q = self.forward(&mut tape, &p, &mut ctx, input)?;
        Ok(tape.value(q).clone())
    }

    /// Like [`QNetwork::q_values`] but also records spike density.
    pub fn q_values_recorded(&self, input: &NetInput, seed: u64) -> Result<(Tensor, crate::analysis::SpikeStats)> {
        if !self.spec.variant.is_spiking() {
            return Err(Error::Usage(format!(
                "spike density is undefined for the {} variant",
                self.spec.variant.name()
            )));
        }
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape)?;
        let mut ctx = Ctx::eval(seed).recording();
        let q = self.forward(&mut tape, &p, &mut ctx, input)?;
        Ok((tape.value(q).clone(), ctx.stats.take().unwrap_or_default()))
    }
}
