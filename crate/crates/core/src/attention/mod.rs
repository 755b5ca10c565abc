//! Multi-head cross-attention in three flavors and the cross-fusion layer.
//!
//! * dense: `softmax(Q K^T / sqrt(d_k)) V` on real tokens;
//! * SSA: binary spike Q/K/V, map and product by accumulation, scaled by
//!   `omega`, re-spiked by a stateful output neuron;
//! * TTSA: ternary spike Q/K, a signed accumulation map `A_t = Q_t K_t^T`
//!   turned into a binary mask by a neuron that keeps its membrane across
//!   time steps, and a mask-gated sum over real-valued V rows.
//!
//! Spiking tensors are time-major `[T, B, N, D]`; dense ones are `[B, N, D]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Bound, Ctx, Init, LayerNorm, Linear, ParamId, ParamKind, ParamStore};
use crate::tensor::{LifParams, SpikeKind, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Dense,
    Ssa,
    Ttsa,
}

impl AttentionMode {
    pub fn is_spiking(self) -> bool {
        self != AttentionMode::Dense
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub mode: AttentionMode,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// SSA output scale.
    pub omega: f32,
    pub t_len: usize,
    /// Binary neurons of every spiking stage except the TTSA Q/K encoders.
    pub neuron: LifParams,
    /// TTSA query/key encoders.
    pub ternary: LifParams,
    /// TTSA mask neuron. Clearing `stateful` gives the per-step ablation.
    pub mask: LifParams,
}

impl AttentionConfig {
    pub fn new(mode: AttentionMode) -> Self {
        AttentionConfig {
            mode,
            d_model: 32,
            n_heads: 8,
            d_ff: 128,
            omega: 0.125,
            t_len: crate::spike::T_STEPS,
            neuron: LifParams::binary(),
            ternary: LifParams::ternary(),
            mask: LifParams::binary(),
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.omega > 0.0) {
            return Err(Error::Config(format!("omega must be positive, got {}", self.omega)));
        }
        if self.mode.is_spiking() && self.t_len == 0 {
            return Err(Error::Config("spiking attention needs t_len >= 1".into()));
        }
        if self.ternary.kind != SpikeKind::Ternary {
            return Err(Error::Config("query/key encoders must be ternary".into()));
        }
        self.neuron.validate()?;
        self.ternary.validate()?;
        self.mask.validate()
    }
}

/// `[G, N, D] -> [G, H, N, D/H]`.
pub fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = tape.try_value(x)?.shape().to_vec();
    if s.len() != 3 || s[2] % heads != 0 {
        return Err(Error::dim("split_heads", format!("{s:?} with {heads} heads")));
    }
    let r = tape.reshape(x, &[s[0], s[1], heads, s[2] / heads])?;
    tape.permute(r, &[0, 2, 1, 3])
}

/// `[G, H, N, dk] -> [G, N, H*dk]`.
pub fn merge_heads(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.try_value(x)?.shape().to_vec();
    if s.len() != 4 {
        return Err(Error::dim("merge_heads", format!("{s:?}")));
    }
    let p = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(p, &[s[0], s[2], s[1] * s[3]])
}

fn fold_time(tape: &mut Tape, x: Var) -> Result<(Var, Vec<usize>)> {
    let s = tape.try_value(x)?.shape().to_vec();
    if s.len() != 4 {
        return Err(Error::dim("attention", format!("expected [T, B, N, D], got {s:?}")));
    }
    Ok((tape.reshape(x, &[s[0] * s[1], s[2], s[3]])?, s))
}

fn check_binary(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.try_value(v)?.data().iter().all(|&x| x == 0.0 || x == 1.0) {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} must be binary spikes")))
    }
}

/// Scaled dot-product attention on projected `q [G,N1,D]`, `k`, `v [G,N2,D]`.
///
/// Returns the merged heads `[G, N1, D]` and the weights `[G, H, N1, N2]`.
pub fn dense_attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Var)> {
    let d = tape.try_value(q)?.shape()[2];
    if tape.try_value(k)?.shape()[2] != d || tape.try_value(v)?.shape()[2] != d {
        return Err(Error::dim("cross_attention", "query and key/value widths differ"));
    }
    let qh = split_heads(tape, q, heads)?;
    let kh = split_heads(tape, k, heads)?;
    let vh = split_heads(tape, v, heads)?;
    let scores = tape.matmul_nt(qh, kh)?;
    let scaled = tape.scale(scores, 1.0 / ((d / heads) as f32).sqrt())?;
    let weights = tape.softmax(scaled)?;
    let out = tape.matmul(weights, vh)?;
    Ok((merge_heads(tape, out)?, weights))
}

/// SSA product `omega * (Q K^T) V` for binary `q [T,B,N1,D]`, `k`, `v
/// [T,B,N2,D]`, computed with accumulation kernels only. Output `[T,B,N1,D]`.
pub fn ssa_map(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize, omega: f32) -> Result<Var> {
    for (x, what) in [(q, "SSA query"), (k, "SSA key"), (v, "SSA value")] {
        check_binary(tape, x, what)?;
    }
    let (qf, s) = fold_time(tape, q)?;
    let (kf, _) = fold_time(tape, k)?;
    let (vf, _) = fold_time(tape, v)?;
    let qh = split_heads(tape, qf, heads)?;
    let kh = split_heads(tape, kf, heads)?;
    let vh = split_heads(tape, vf, heads)?;
    let map = tape.spike_matmul_nt(qh, kh)?;
    let av = tape.spike_matmul_right(map, vh)?;
    let merged = merge_heads(tape, av)?;
    let scaled = tape.scale(merged, omega)?;
    tape.reshape(scaled, &s)
}

/// The signed attention map `A_t = Q_t K_t^T` per head, `[T, B*H, N1, N2]`
/// flattened time-major, from ternary `q`/`k`.
pub fn ternary_map(tape: &mut Tape, q: Var, k: Var, heads: usize) -> Result<Var> {
    let (qf, _) = fold_time(tape, q)?;
    let (kf, _) = fold_time(tape, k)?;
    let qh = split_heads(tape, qf, heads)?;
    let kh = split_heads(tape, kf, heads)?;
    tape.spike_matmul_nt(qh, kh)
}

/// Binary mask of a signed map over time; `map` is `[T*G, ..]`, time-major.
///
/// With a stateful neuron, sub-threshold map values accumulate in the
/// membrane and can fire on a later step.
pub fn temporal_mask(tape: &mut Tape, ctx: &mut Ctx, name: &str, map: Var, t_len: usize, neuron: LifParams) -> Result<Var> {
    let s = tape.try_value(map)?.shape().to_vec();
    if s[0] % t_len != 0 {
        return Err(Error::dim("temporal_mask", format!("leading axis {} not divisible by T {t_len}", s[0])));
    }
    let mut tshape = vec![t_len, s[0] / t_len];
    tshape.extend_from_slice(&s[1..]);
    let timed = tape.reshape(map, &tshape)?;
    let mask = ctx.spike(tape, name, timed, neuron)?;
    tape.reshape(mask, &s)
}

/// TTSA: ternary `q [T,B,N1,D]`, `k [T,B,N2,D]`, real `v [T,B,N2,D]`.
/// Returns the mask-gated value sums `[T,B,N1,D]`.
pub fn ttsa_map(
    tape: &mut Tape,
    ctx: &mut Ctx,
    name: &str,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: LifParams,
) -> Result<Var> {
    let shape = tape.try_value(q)?.shape().to_vec();
    let t_len = shape[0];
    let map = ternary_map(tape, q, k, heads)?;
    let m = temporal_mask(tape, ctx, name, map, t_len, mask)?;
    let (vf, _) = fold_time(tape, v)?;
    let vh = split_heads(tape, vf, heads)?;
    let gated = tape.spike_matmul_left(m, vh)?;
    let merged = merge_heads(tape, gated)?;
    tape.reshape(merged, &shape)
}

/// Transformer-style cross-fusion block: attention and feed-forward
/// sublayers, each as `LayerNorm(x + sublayer(x))`, with learnable positional
/// encodings added to both token sets.
#[derive(Clone, Debug)]
pub struct CrossFusion {
    pub cfg: AttentionConfig,
    name: String,
    n1: usize,
    n2: usize,
    pos1: ParamId,
    pos2: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bn: Option<[BatchNorm; 3]>,
    wo: Linear,
    ln1: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
    ln2: LayerNorm,
}

impl CrossFusion {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cfg: AttentionConfig,
        n1: usize,
        n2: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let pos1 = store.add(format!("{name}.pos_query"), Tensor::zeros([n1, d]), ParamKind::Trainable)?;
        let pos2 = store.add(format!("{name}.pos_key"), Tensor::zeros([n2, d]), ParamKind::Trainable)?;
        let mut proj = |s: &str, init: &mut Init| {
            store.add(format!("{name}.{s}"), init.kaiming(&[d, d], d), ParamKind::Trainable)
        };
        let wq = proj("w_q", init)?;
        let wk = proj("w_k", init)?;
        let wv = proj("w_v", init)?;
        let bn = if cfg.mode.is_spiking() {
            Some([
                BatchNorm::new(store, &format!("{name}.bn_q"), d)?,
                BatchNorm::new(store, &format!("{name}.bn_k"), d)?,
                BatchNorm::new(store, &format!("{name}.bn_v"), d)?,
            ])
        } else {
            None
        };
        Ok(CrossFusion {
            cfg,
            name: name.to_string(),
            n1,
            n2,
            pos1,
            pos2,
            wq,
            wk,
            wv,
            bn,
            wo: Linear::new(store, init, &format!("{name}.w_o"), d, d, true)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            ffn1: Linear::new(store, init, &format!("{name}.ffn1"), d, cfg.d_ff, true)?,
            ffn2: Linear::new(store, init, &format!("{name}.ffn2"), cfg.d_ff, d, true)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
        })
    }

    /// Parameter ids of the query/key/value and output projections.
    pub fn projections(&self) -> (ParamId, ParamId, ParamId, ParamId) {
        (self.wq, self.wk, self.wv, self.wo.w)
    }

    pub fn ffn_weights(&self) -> (ParamId, ParamId) {
        (self.ffn1.w, self.ffn2.w)
    }

    fn check_input(&self, tape: &Tape, e: Var, n: usize) -> Result<()> {
        let s = tape.try_value(e)?.shape();
        let ok = match self.cfg.mode {
            AttentionMode::Dense => s.len() == 3,
            _ => s.len() == 4 && s[0] == self.cfg.t_len,
        };
        if !ok {
            return Err(Error::Contract(format!(
                "{:?} fusion received input of shape {s:?}",
                self.cfg.mode
            )));
        }
        let (tn, td) = (s[s.len() - 2], s[s.len() - 1]);
        if tn != n || td != self.cfg.d_model {
            return Err(Error::dim("cross_fusion", format!("tokens {s:?}, expected [.., {n}, {}]", self.cfg.d_model)));
        }
        Ok(())
    }

    fn project(&self, tape: &mut Tape, p: &Bound, x: Var, w: ParamId) -> Result<Var> {
        tape.matmul(x, p.var(w))
    }

    /// Dense cross-attention sublayer output (after the output projection)
    /// and the attention weights.
    pub fn attend_dense(&self, tape: &mut Tape, p: &Bound, x1: Var, x2: Var) -> Result<(Var, Var)> {
        let q = self.project(tape, p, x1, self.wq)?;
        let k = self.project(tape, p, x2, self.wk)?;
        let v = self.project(tape, p, x2, self.wv)?;
        let (heads, weights) = dense_attention(tape, q, k, v, self.cfg.n_heads)?;
        Ok((self.wo.forward(tape, p, heads)?, weights))
    }

    fn normed_projection(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &Bound,
        ctx: &mut Ctx,
        x: Var,
        which: usize,
    ) -> Result<Var> {
        let w = [self.wq, self.wk, self.wv][which];
        let y = tape.spike_matmul_left(x, p.var(w))?;
        let bn = self.bn.as_ref().expect("spiking fusion has projection norms");
        bn[which].forward(tape, store, p, ctx, y)
    }

    /// Spiking attention sublayer on binary token spikes `s1`, `s2`; returns
    /// the output projection of the attention result.
    pub fn attend_spiking(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &Bound,
        ctx: &mut Ctx,
        s1: Var,
        s2: Var,
    ) -> Result<Var> {
        let n = &self.name;
        let h = self.cfg.n_heads;
        let q_cur = self.normed_projection(tape, store, p, ctx, s1, 0)?;
        let k_cur = self.normed_projection(tape, store, p, ctx, s2, 1)?;
        let v_cur = self.normed_projection(tape, store, p, ctx, s2, 2)?;
        let attn = match self.cfg.mode {
            AttentionMode::Ssa => {
                let q = ctx.spike(tape, &format!("{n}.q"), q_cur, self.cfg.neuron)?;
                let k = ctx.spike(tape, &format!("{n}.k"), k_cur, self.cfg.neuron)?;
                let v = ctx.spike(tape, &format!("{n}.v"), v_cur, self.cfg.neuron)?;
                let pre = ssa_map(tape, q, k, v, h, self.cfg.omega)?;
                let attn = ctx.spike(tape, &format!("{n}.attn"), pre, self.cfg.neuron)?;
                return self.wo.forward_spikes(tape, p, attn);
            }
            AttentionMode::Ttsa => {
                let q = ctx.spike(tape, &format!("{n}.q"), q_cur, self.cfg.ternary)?;
                let k = ctx.spike(tape, &format!("{n}.k"), k_cur, self.cfg.ternary)?;
                ttsa_map(tape, ctx, &format!("{n}.mask"), q, k, v_cur, h, self.cfg.mask)?
            }
            AttentionMode::Dense => unreachable!("dense mode has no spiking sublayer"),
        };
        self.wo.forward(tape, p, attn)
    }

    /// Fuses query tokens `e1` with key/value tokens `e2`.
    ///
    /// Dense mode takes `[B, N, D]` embeddings. Spiking modes take real
    /// embeddings `[T, B, N, D]`; positional encodings are added before the
    /// embedding neurons, and residual paths carry the real-valued currents.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &Bound,
        ctx: &mut Ctx,
        e1: Var,
        e2: Var,
    ) -> Result<Var> {
        self.check_input(tape, e1, self.n1)?;
        self.check_input(tape, e2, self.n2)?;
        let x1 = tape.add_broadcast(e1, p.var(self.pos1))?;
        let x2 = tape.add_broadcast(e2, p.var(self.pos2))?;
        let n = &self.name;
        let a = match self.cfg.mode {
            AttentionMode::Dense => self.attend_dense(tape, p, x1, x2)?.0,
            _ => {
                let s1 = ctx.spike(tape, &format!("{n}.embed_query"), x1, self.cfg.neuron)?;
                let s2 = ctx.spike(tape, &format!("{n}.embed_key"), x2, self.cfg.neuron)?;
                self.attend_spiking(tape, store, p, ctx, s1, s2)?
            }
        };
        let r1 = tape.add(x1, a)?;
        let y1 = self.ln1.forward(tape, p, r1)?;
        let h = self.ffn1.forward(tape, p, y1)?;
        let h = match self.cfg.mode {
            AttentionMode::Dense => tape.relu(h)?,
            _ => ctx.spike(tape, &format!("{n}.ffn"), h, self.cfg.neuron)?,
        };
        let f = match self.cfg.mode {
            AttentionMode::Dense => self.ffn2.forward(tape, p, h)?,
            _ => self.ffn2.forward_spikes(tape, p, h)?,
        };
        let r2 = tape.add(y1, f)?;
        self.ln2.forward(tape, p, r2)
    }
}
