use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::kernels::{self, col2im_add, gemm, im2col_into, inverse_perm, ConvGeom};
use crate::analysis::counters;
use super::{SurrogateSpec, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const NORM_EPS: f32 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeKind {
    Binary,
    Ternary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// `v <- beta * m * (1 - |s|) + v_reset * |s|`
    Hard,
    /// `v <- beta * (m - vth * s)` using the threshold that fired.
    Subtractive,
}

/// Leaky integrate-and-fire dynamics unrolled over a time window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub kind: SpikeKind,
    pub beta: f32,
    pub vth_pos: f32,
    pub vth_neg: f32,
    pub v_reset: f32,
    pub reset: ResetMode,
    pub surrogate: SurrogateSpec,
    /// When false the membrane is cleared after every step (no carry-over).
    pub stateful: bool,
}

impl LifParams {
    #[inline]
    pub fn fire(&self, m: f32) -> f32 {
        if m >= self.vth_pos {
            1.0
        } else if self.kind == SpikeKind::Ternary && m <= self.vth_neg {
            -1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn next_membrane(&self, m: f32, s: f32) -> f32 {
        if !self.stateful {
            return 0.0;
        }
        match self.reset {
            ResetMode::Subtractive => {
                let th = if s > 0.0 {
                    self.vth_pos
                } else if s < 0.0 {
                    self.vth_neg
                } else {
                    0.0
                };
                self.beta * (m - th)
            }
            ResetMode::Hard => {
                let a = s.abs();
                self.beta * m * (1.0 - a) + self.v_reset * a
            }
        }
    }

    /// Surrogate `ds/dm` and `dv'/dm` at membrane value `m`.
    #[inline]
    fn local_grads(&self, m: f32, s: f32) -> (f32, f32) {
        let gp = self.surrogate.grad(m - self.vth_pos);
        let gn = match self.kind {
            SpikeKind::Binary => 0.0,
            SpikeKind::Ternary => self.surrogate.grad(m - self.vth_neg),
        };
        let ds = gp + gn;
        if !self.stateful {
            return (ds, 0.0);
        }
        let dv = match self.reset {
            ResetMode::Subtractive => self.beta * (1.0 - self.vth_pos * gp + self.vth_neg * gn),
            ResetMode::Hard => {
                let a = s.abs();
                self.beta * (1.0 - a) + (self.v_reset - self.beta * m) * (gp - gn)
            }
        };
        (ds, dv)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.vth_pos > 0.0) {
            return Err(Error::Config(format!(
                "positive threshold must be > 0, got {}",
                self.vth_pos
            )));
        }
        if self.kind == SpikeKind::Ternary && !(self.vth_neg < 0.0) {
            return Err(Error::Config(format!(
                "ternary neurons need a negative threshold < 0, got {}",
                self.vth_neg
            )));
        }
        self.surrogate.validate()
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        dims: MatDims,
    },
    SpikeMatMul {
        a: Var,
        b: Var,
        dims: MatDims,
        spike_left: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Relu(Var),
    Heaviside(Var, SurrogateSpec),
    Softmax(Var),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
        d: usize,
        kind: NormKind,
        /// Contiguous run length per feature (1 when the feature is the last axis).
        inner: usize,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    MeanFirst(Var, usize),
    Gather(Var, Vec<usize>),
    Lif {
        x: Var,
        params: LifParams,
        membrane: Vec<f32>,
        t_len: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NormKind {
    Layer,
    BatchTrain,
    BatchEval,
}

#[derive(Clone, Copy, Debug)]
struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Statistics mode for batch normalization.
#[derive(Clone, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [f32], var: &'a [f32] },
}

/// Batch statistics from a training-mode batch norm: per-feature mean and
/// unbiased variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Record of differentiable operations.
///
/// A tape built with [`Tape::new`] records backward rules; one built with
/// [`Tape::inference`] only computes values. [`Tape::backward`] may run once;
/// call [`Tape::reset`] before recording a new graph.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    record: bool,
    spent: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.idx).and_then(|g| g.take())
    }
}

fn add_into(dst: &mut Option<Vec<f32>>, src: &[f32]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += *b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

fn add_owned(dst: &mut Option<Vec<f32>>, src: Vec<f32>) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(&src) {
                *a += *b;
            }
        }
        None => *dst = Some(src),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            record: true,
            spent: false,
        }
    }

    /// Tape that evaluates values without keeping backward state.
    pub fn inference() -> Self {
        Tape {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears every node so the tape can record a fresh graph.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.spent = false;
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    fn check(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Usage(format!("variable {} is not on this tape", v.idx)));
        }
        Ok(&self.nodes[v.idx])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.check(v).expect("variable from another tape").value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.check(v)?.value)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        self.record && vars.iter().any(|v| self.nodes[v.idx].needs_grad)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        value.check_finite(name)?;
        if self.spent {
            return Err(Error::Usage("tape already consumed by backward; reset it first".into()));
        }
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    /// Constant input (no gradient).
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push("leaf", t, Op::Leaf, false)
    }

    /// Trainable input; receives a gradient when the tape records.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        let rec = self.record;
        self.push("param", t, Op::Leaf, rec)
    }

    fn mat_dims(&self, name: &'static str, a: Var, b: Var, trans_b: bool) -> Result<(MatDims, Vec<usize>)> {
        let sa = self.check(a)?.value.shape();
        let sb = self.check(b)?.value.shape();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim(name, format!("operands need rank >= 2: {sa:?}, {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(Error::dim(name, format!("inner dimensions differ: {sa:?} x {sb:?}")));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let mut out_shape = lead_a.to_vec();
        let dims = if lead_b.is_empty() {
            // Shared right operand: fold the batch into the row dimension.
            MatDims {
                batch: 1,
                m: lead_a.iter().product::<usize>() * m,
                k,
                n,
                trans_b,
            }
        } else if lead_a == lead_b {
            MatDims {
                batch: lead_a.iter().product(),
                m,
                k,
                n,
                trans_b,
            }
        } else {
            return Err(Error::dim(name, format!("batch dimensions differ: {sa:?} x {sb:?}")));
        };
        out_shape.push(m);
        out_shape.push(n);
        Ok((dims, out_shape))
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (dims, shape) = self.mat_dims("matmul", a, b, trans_b)?;
        let out = {
            let av = self.nodes[a.idx].value.data();
            let bv = self.nodes[b.idx].value.data();
            let MatDims { batch, m, k, n, .. } = dims;
            let mut out = vec![0.0f32; batch * m * n];
            for bi in 0..batch {
                let ab = &av[bi * m * k..(bi + 1) * m * k];
                let bb = &bv[bi * k * n..(bi + 1) * k * n];
                let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
                gemm(m, k, n, ab, k, 1, bb, rsb, csb, &mut out[bi * m * n..(bi + 1) * m * n], 0.0);
            }
            out
        };
        let needs = self.needs(&[a, b]);
        self.push("matmul", Tensor::from_parts(shape, out), Op::MatMul { a, b, dims }, needs)
    }

    /// Batched matrix product `a [.., M, K] x b [.., K, N]`; `b` may be a
    /// shared rank-2 matrix.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a [.., M, K] x b[.., N, K]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn spike_matmul_impl(&mut self, a: Var, b: Var, trans_b: bool, spike_left: bool) -> Result<Var> {
        let (dims, shape) = self.mat_dims("spike_matmul", a, b, trans_b)?;
        let shared = self.nodes[b.idx].value.rank() == 2 && self.nodes[a.idx].value.rank() > 2;
        if shared && !(spike_left && !trans_b) {
            return Err(Error::dim("spike_matmul", "operands must share batch dimensions"));
        }
        let spikes = if spike_left { a } else { b };
        if !kernels::is_spike_alphabet(self.nodes[spikes.idx].value.data()) {
            return Err(Error::Contract(
                "spike operand contains values outside {-1, 0, 1}".into(),
            ));
        }
        let out = {
            let av = self.nodes[a.idx].value.data();
            let bv = self.nodes[b.idx].value.data();
            let MatDims { batch, k, n, .. } = dims;
            let nnz = if spike_left { av.iter().filter(|&&x| x != 0.0).count() } else { 0 };
            if spike_left && !trans_b && nnz * 20 > av.len() * 3 {
                // Dense enough that a blocked product beats event scanning;
                // the cost is still reported as one addition per event.
                let m = dims.m;
                let mut out = vec![0.0f32; batch * m * n];
                for bi in 0..batch {
                    kernels::gemm_uncounted(
                        m,
                        k,
                        n,
                        &av[bi * m * k..(bi + 1) * m * k],
                        k,
                        1,
                        &bv[bi * k * n..(bi + 1) * k * n],
                        n,
                        1,
                        &mut out[bi * m * n..(bi + 1) * m * n],
                        0.0,
                    );
                }
                counters::record_adds((nnz * n) as u64);
                out
            } else if trans_b {
                let (_, bt) = kernels::permute(bv, &[batch, n, k], &[0, 2, 1]);
                kernels::spike_matmul(av, &bt, batch, dims.m, k, n, spike_left)
            } else {
                kernels::spike_matmul(av, bv, batch, dims.m, k, n, spike_left)
            }
        };
        let needs = self.needs(&[a, b]);
        self.push(
            "spike_matmul",
            Tensor::from_parts(shape, out),
            Op::SpikeMatMul { a, b, dims, spike_left },
            needs,
        )
    }

    /// Product computed by accumulation only; `a` holds spikes in `{-1,0,1}`.
    /// A rank-2 `b` is shared across all leading dimensions of `a`.
    pub fn spike_matmul_left(&mut self, a: Var, b: Var) -> Result<Var> {
        self.spike_matmul_impl(a, b, false, true)
    }

    /// Product computed by accumulation only; `b` holds spikes in `{-1,0,1}`.
    pub fn spike_matmul_right(&mut self, a: Var, b: Var) -> Result<Var> {
        self.spike_matmul_impl(a, b, false, false)
    }

    /// `a b^T` by accumulation only; `a` holds spikes in `{-1,0,1}`.
    pub fn spike_matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.spike_matmul_impl(a, b, true, true)
    }

    /// Valid (unpadded) 2-D cross-correlation.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: (usize, usize)) -> Result<Var> {
        self.conv2d_impl(x, w, bias, stride, false)
    }

    /// [`Tape::conv2d`] on a spike input, computed by accumulating kernel
    /// taps at the nonzero input events.
    pub fn spike_conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: (usize, usize)) -> Result<Var> {
        if !kernels::is_spike_alphabet(self.check(x)?.value.data()) {
            return Err(Error::Contract("spike_conv2d input contains values outside {-1, 0, 1}".into()));
        }
        self.conv2d_impl(x, w, bias, stride, true)
    }

    fn conv2d_impl(&mut self, x: Var, w: Var, bias: Option<Var>, stride: (usize, usize), event: bool) -> Result<Var> {
        let xs = self.check(x)?.value.shape().to_vec();
        let ws = self.check(w)?.value.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim("conv2d", format!("need rank-4 input and kernel, got {xs:?}, {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(Error::dim("conv2d", format!("input channels {} vs kernel {}", xs[1], ws[1])));
        }
        let oh = kernels::conv_out_size(xs[2], ws[2], stride.0);
        let ow = kernels::conv_out_size(xs[3], ws[3], stride.1);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("kernel {ws:?} / stride {stride:?} does not fit input {xs:?}"),
                ))
            }
        };
        if let Some(bv) = bias {
            if self.check(bv)?.value.shape() != [ws[0]] {
                return Err(Error::dim("conv2d", "bias must have one entry per output channel"));
            }
        }
        let geom = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            sh: stride.0,
            sw: stride.1,
            oh,
            ow,
        };
        let patch = geom.patch();
        let l = oh * ow;
        let in_len = geom.cin * geom.h * geom.w;
        let mut cols = vec![0.0f32; patch * l];
        let mut out = vec![0.0f32; geom.batch * geom.cout * l];
        let mut events = 0usize;
        let counting = event && counters::counting_active();
        let xv = self.nodes[x.idx].value.data();
        let wv = self.nodes[w.idx].value.data();
        for (xb, ob) in xv.chunks_exact(in_len).zip(out.chunks_exact_mut(geom.cout * l)) {
            im2col_into(xb, &geom, &mut cols);
            if counting {
                events += cols.iter().filter(|&&v| v != 0.0).count();
            }
            if let Some(bv) = bias {
                for (plane, bb) in ob.chunks_exact_mut(l).zip(self.nodes[bv.idx].value.data()) {
                    plane.fill(*bb);
                }
            }
            // out_b [cout, L] = W [cout, patch] x cols_b [patch, L]
            if event {
                kernels::gemm_uncounted(geom.cout, patch, l, wv, patch, 1, &cols, l, 1, ob, 1.0);
            } else {
                gemm(geom.cout, patch, l, wv, patch, 1, &cols, l, 1, ob, 1.0);
            }
        }
        if counting {
            counters::record_adds((events * geom.cout) as u64);
        }
        let mut ops = vec![x, w];
        ops.extend(bias);
        let needs = self.needs(&ops);
        self.push(
            "conv2d",
            Tensor::from_parts(vec![geom.batch, geom.cout, oh, ow], out),
            Op::Conv2d { x, w, bias, geom },
            needs,
        )
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let sa = self.check(a)?.value.shape();
        let sb = self.check(b)?.value.shape();
        if sa != sb {
            return Err(Error::dim(name, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_op(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let av = &self.nodes[a.idx].value;
        let bv = &self.nodes[b.idx].value;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        let needs = self.needs(&[a, b]);
        self.push(name, t, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.check(a)?.value.shape().to_vec();
        let sb = self.check(b)?.value.shape().to_vec();
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(Error::dim("add_broadcast", format!("{sb:?} is not a suffix of {sa:?}")));
        }
        let bv = self.nodes[b.idx].value.data();
        let n = bv.len();
        let data: Vec<f32> = self.nodes[a.idx]
            .value
            .data()
            .chunks(n)
            .flat_map(|c| c.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let needs = self.needs(&[a, b]);
        self.push("add_broadcast", Tensor::from_parts(sa, data), Op::AddBroadcast(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var> {
        let t = self.check(a)?.value.map(|x| x * factor);
        let needs = self.needs(&[a]);
        self.push("scale", t, Op::Scale(a, factor), needs)
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Result<Var> {
        let t = self.check(a)?.value.map(|x| x + c);
        let needs = self.needs(&[a]);
        self.push("add_scalar", t, Op::AddScalar(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.check(a)?.value.map(|x| x.max(0.0));
        let needs = self.needs(&[a]);
        self.push("relu", t, Op::Relu(a), needs)
    }

    /// Heaviside step `H(u) = [u >= 0]` with a surrogate derivative.
    pub fn heaviside(&mut self, u: Var, spec: SurrogateSpec) -> Result<Var> {
        spec.validate()?;
        let t = self.check(u)?.value.map(|x| if x >= 0.0 { 1.0 } else { 0.0 });
        let needs = self.needs(&[u]);
        self.push("heaviside", t, Op::Heaviside(u, spec), needs)
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = &self.check(a)?.value;
        let n = *av.shape().last().unwrap();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                sum += *x;
            }
            let inv = 1.0 / sum;
            for x in row.iter_mut() {
                *x *= inv;
            }
        }
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        let needs = self.needs(&[a]);
        self.push("softmax", t, Op::Softmax(a), needs)
    }

    fn norm_params(&self, name: &'static str, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let d = *self.check(x)?.value.shape().last().unwrap();
        for p in [gamma, beta] {
            if self.check(p)?.value.shape() != [d] {
                return Err(Error::dim(name, format!("affine parameters must have shape [{d}]")));
            }
        }
        Ok(d)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.norm_params("layer_norm", x, gamma, beta)?;
        let xv = &self.nodes[x.idx].value;
        let g = self.nodes[gamma.idx].value.data();
        let b = self.nodes[beta.idx].value.data();
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0f32; xv.numel()];
        let mut rstd = vec![0.0f32; rows];
        let mut out = vec![0.0f32; xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let rs = 1.0 / (var + NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let needs = self.needs(&[x, gamma, beta]);
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                d,
                kind: NormKind::Layer,
                inner: 1,
            },
            needs,
        )
    }

    /// Batch normalization of the last (feature) axis; statistics run over
    /// every other axis. Training mode also returns the batch statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let d = self.norm_params("batch_norm", x, gamma, beta)?;
        self.batch_norm_impl(x, gamma, beta, mode, d, 1)
    }

    /// Batch normalization of axis 1 of `x [N, C, ..]`, with statistics over
    /// the batch and all trailing axes.
    pub fn batch_norm_channels(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.check(x)?.value.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("batch_norm_channels", "need rank >= 2"));
        }
        let d = shape[1];
        for p in [gamma, beta] {
            if self.check(p)?.value.shape() != [d] {
                return Err(Error::dim("batch_norm_channels", format!("affine parameters must have shape [{d}]")));
            }
        }
        let inner = shape[2..].iter().product();
        self.batch_norm_impl(x, gamma, beta, mode, d, inner)
    }

    fn batch_norm_impl(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        d: usize,
        inner: usize,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = &self.nodes[x.idx].value;
        let rows = xv.numel() / d;
        let (mean, var, kind) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0f64; d];
                for_runs(xv.data(), d, inner, |j, run| {
                    mean[j] += run.iter().map(|&v| v as f64).sum::<f64>();
                });
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0f64; d];
                for_runs(xv.data(), d, inner, |j, run| {
                    let m = mean[j];
                    var[j] += run.iter().map(|&v| (v as f64 - m) * (v as f64 - m)).sum::<f64>();
                });
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (
                    mean.iter().map(|&m| m as f32).collect::<Vec<_>>(),
                    var.iter().map(|&v| v as f32).collect::<Vec<_>>(),
                    NormKind::BatchTrain,
                )
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != d || var.len() != d {
                    return Err(Error::dim("batch_norm", "running statistics size mismatch"));
                }
                (mean.to_vec(), var.to_vec(), NormKind::BatchEval)
            }
        };
        let g = self.nodes[gamma.idx].value.data();
        let b = self.nodes[beta.idx].value.data();
        let rstd: Vec<f32> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut out = Vec::with_capacity(xv.numel());
        for_runs(xv.data(), d, inner, |j, run| {
            let (m, r, gj, bj) = (mean[j], rstd[j], g[j], b[j]);
            for &v in run {
                let h = (v - m) * r;
                xhat.push(h);
                out.push(gj * h + bj);
            }
        });
        let stats = (kind == NormKind::BatchTrain).then(|| {
            let corr = if rows > 1 {
                rows as f32 / (rows - 1) as f32
            } else {
                1.0
            };
            BatchStats {
                mean: mean.clone(),
                var: var.iter().map(|v| v * corr).collect(),
            }
        });
        let shape = xv.shape().to_vec();
        let needs = self.needs(&[x, gamma, beta]);
        let v = self.push(
            "batch_norm",
            Tensor::from_parts(shape, out),
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                d,
                kind,
                inner,
            },
            needs,
        )?;
        Ok((v, stats))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.check(a)?.value.reshape(shape.to_vec())?;
        let needs = self.needs(&[a]);
        self.push("reshape", t, Op::Reshape(a), needs)
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let av = &self.check(a)?.value;
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..av.rank()).collect::<Vec<_>>() {
            return Err(Error::dim("permute", format!("{perm:?} is not a permutation of rank {}", av.rank())));
        }
        let (shape, data) = kernels::permute(av.data(), av.shape(), perm);
        let needs = self.needs(&[a]);
        self.push("permute", Tensor::from_parts(shape, data), Op::Permute(a, perm.to_vec()), needs)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f32 = self.check(a)?.value.data().iter().sum();
        let needs = self.needs(&[a]);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = &self.check(a)?.value;
        let s = av.data().iter().sum::<f32>() / av.numel() as f32;
        let needs = self.needs(&[a]);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Mean over the leading axis: `[n, ..rest] -> [..rest]`.
    pub fn mean_first(&mut self, a: Var) -> Result<Var> {
        let av = &self.check(a)?.value;
        if av.rank() < 2 {
            return Err(Error::dim("mean_first", "need rank >= 2"));
        }
        let n = av.shape()[0];
        let rest = av.shape()[1..].to_vec();
        let len = av.numel() / n;
        let mut out = vec![0.0f32; len];
        for chunk in av.data().chunks(len) {
            for (o, x) in out.iter_mut().zip(chunk) {
                *o += *x;
            }
        }
        let inv = 1.0 / n as f32;
        out.iter_mut().for_each(|x| *x *= inv);
        let needs = self.needs(&[a]);
        self.push("mean_first", Tensor::from_parts(rest, out), Op::MeanFirst(a, n), needs)
    }

    /// Picks `a[i, idx[i]]` from a `[B, A]` matrix.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = &self.check(a)?.value;
        if av.rank() != 2 || av.shape()[0] != idx.len() {
            return Err(Error::dim("gather_rows", format!("{:?} with {} indices", av.shape(), idx.len())));
        }
        let cols = av.shape()[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::Usage(format!("gather index {bad} out of range {cols}")));
        }
        let data: Vec<f32> = idx.iter().enumerate().map(|(r, &c)| av.data()[r * cols + c]).collect();
        let needs = self.needs(&[a]);
        self.push(
            "gather_rows",
            Tensor::from_parts(vec![idx.len()], data),
            Op::Gather(a, idx.to_vec()),
            needs,
        )
    }

    /// `x W + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_broadcast(y, b),
            None => Ok(y),
        }
    }

    /// [`Tape::linear`] on a spike input `s`, by accumulation only.
    pub fn spike_linear(&mut self, s: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.spike_matmul_left(s, w)?;
        match b {
            Some(b) => self.add_broadcast(y, b),
            None => Ok(y),
        }
    }

    /// Integrate-and-fire layer unrolled over the leading (time) axis of `x`.
    ///
    /// The membrane starts at zero. Each step computes `m = v + x_t`, emits
    /// `s = F(m)` and updates `v` per [`LifParams`]. The backward pass runs
    /// through time with the surrogate derivative at every threshold.
    pub fn lif(&mut self, x: Var, params: LifParams) -> Result<Var> {
        params.validate()?;
        let xv = &self.check(x)?.value;
        if xv.rank() < 2 {
            return Err(Error::dim("lif", "input needs a leading time axis"));
        }
        let t_len = xv.shape()[0];
        let n = xv.numel() / t_len;
        let needs = self.needs(&[x]);
        let mut v = vec![0.0f32; n];
        let mut spikes = vec![0.0f32; xv.numel()];
        let mut membrane = if needs { vec![0.0f32; xv.numel()] } else { Vec::new() };
        for t in 0..t_len {
            let xt = &xv.data()[t * n..(t + 1) * n];
            for i in 0..n {
                let m = v[i] + xt[i];
                let s = params.fire(m);
                spikes[t * n + i] = s;
                v[i] = params.next_membrane(m, s);
                if needs {
                    membrane[t * n + i] = m;
                }
            }
        }
        kernels_cmp(xv.numel(), params.kind);
        let shape = xv.shape().to_vec();
        self.push(
            "lif",
            Tensor::from_parts(shape, spikes),
            Op::Lif {
                x,
                params,
                membrane,
                t_len,
            },
            needs,
        )
    }

    /// Reverse sweep from a scalar `loss`; returns the leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.record {
            return Err(Error::Usage("backward on an inference tape".into()));
        }
        if self.spent {
            return Err(Error::Usage(
                "backward already ran on this tape; call reset() before recording again".into(),
            ));
        }
        let node = self.check(loss)?;
        if node.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "loss must be a scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        self.spent = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = (0..n).map(|_| None).collect();
        grads[loss.idx] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        for i in (0..=loss.idx).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads, &mut leaf_grads)?;
        }
        Ok(Gradients {
            tape: self.id,
            grads: leaf_grads,
        })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: Vec<f32>,
        grads: &mut [Option<Vec<f32>>],
        leaf_grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        let nv = |v: Var| &self.nodes[v.idx];
        let wants = |v: Var| self.nodes[v.idx].needs_grad;
        match &node.op {
            Op::Leaf => {
                leaf_grads[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
            }
            Op::SpikeMatMul {
                a,
                b,
                dims,
                spike_left: true,
            } if !dims.trans_b => {
                let MatDims { batch, m, k, n, .. } = *dims;
                let (da, _) = matmul_backward(&g, nv(*a).value.data(), nv(*b).value.data(), dims, wants(*a), false);
                if let Some(da) = da {
                    add_owned(&mut grads[a.idx], da);
                }
                if wants(*b) {
                    let av = nv(*a).value.data();
                    let mut db = vec![0.0f32; batch * k * n];
                    for bi in 0..batch {
                        kernels::spike_transpose_acc(
                            &av[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut db[bi * k * n..(bi + 1) * k * n],
                        );
                    }
                    add_owned(&mut grads[b.idx], db);
                }
            }
            Op::MatMul { a, b, dims } | Op::SpikeMatMul { a, b, dims, .. } => {
                let (da, db) = matmul_backward(
                    &g,
                    nv(*a).value.data(),
                    nv(*b).value.data(),
                    dims,
                    wants(*a),
                    wants(*b),
                );
                if let Some(da) = da {
                    add_owned(&mut grads[a.idx], da);
                }
                if let Some(db) = db {
                    add_owned(&mut grads[b.idx], db);
                }
            }
            Op::Conv2d { x, w, bias, geom } => {
                let patch = geom.patch();
                let l = geom.oh * geom.ow;
                let in_len = geom.cin * geom.h * geom.w;
                let wv = nv(*w).value.data();
                let xv = nv(*x).value.data();
                if wants(*w) {
                    let mut dw = vec![0.0f32; geom.cout * patch];
                    let mut cols = vec![0.0f32; patch * l];
                    for (gb, xb) in g.chunks_exact(geom.cout * l).zip(xv.chunks_exact(in_len)) {
                        im2col_into(xb, geom, &mut cols);
                        // dW += g_b [cout, L] x cols_b^T [L, patch]
                        gemm(geom.cout, l, patch, gb, l, 1, &cols, 1, l, &mut dw, 1.0);
                    }
                    add_owned(&mut grads[w.idx], dw);
                }
                if let Some(bv) = bias {
                    if wants(*bv) {
                        let mut db = vec![0.0f32; geom.cout];
                        for gb in g.chunks_exact(geom.cout * l) {
                            for (d, plane) in db.iter_mut().zip(gb.chunks_exact(l)) {
                                *d += plane.iter().sum::<f32>();
                            }
                        }
                        add_owned(&mut grads[bv.idx], db);
                    }
                }
                if wants(*x) {
                    let mut dx = vec![0.0f32; geom.batch * in_len];
                    let mut dcols = vec![0.0f32; patch * l];
                    for (gb, db) in g.chunks_exact(geom.cout * l).zip(dx.chunks_exact_mut(in_len)) {
                        // dcols_b [patch, L] = W^T [patch, cout] x g_b [cout, L]
                        gemm(patch, geom.cout, l, wv, 1, patch, gb, l, 1, &mut dcols, 0.0);
                        col2im_add(&dcols, geom, db);
                    }
                    add_owned(&mut grads[x.idx], dx);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(&mut grads[a.idx], &g);
                }
                if wants(*b) {
                    add_into(&mut grads[b.idx], &g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(&mut grads[a.idx], &g);
                }
                if wants(*b) {
                    add_owned(&mut grads[b.idx], g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let av = nv(*a).value.data();
                let bv = nv(*b).value.data();
                if wants(*a) {
                    add_owned(&mut grads[a.idx], g.iter().zip(bv).map(|(x, y)| x * y).collect());
                }
                if wants(*b) {
                    add_owned(&mut grads[b.idx], g.iter().zip(av).map(|(x, y)| x * y).collect());
                }
            }
            Op::AddBroadcast(a, b) => {
                if wants(*a) {
                    add_into(&mut grads[a.idx], &g);
                }
                if wants(*b) {
                    let n = nv(*b).value.numel();
                    let mut db = vec![0.0f32; n];
                    for c in g.chunks(n) {
                        for (d, x) in db.iter_mut().zip(c) {
                            *d += *x;
                        }
                    }
                    add_owned(&mut grads[b.idx], db);
                }
            }
            Op::Scale(a, f) => {
                add_owned(&mut grads[a.idx], g.iter().map(|x| x * f).collect());
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                add_owned(&mut grads[a.idx], g);
            }
            Op::Relu(a) => {
                let av = nv(*a).value.data();
                add_owned(
                    &mut grads[a.idx],
                    g.iter().zip(av).map(|(d, &x)| if x > 0.0 { *d } else { 0.0 }).collect(),
                );
            }
            Op::Heaviside(u, spec) => {
                let uv = nv(*u).value.data();
                add_owned(
                    &mut grads[u.idx],
                    g.iter().zip(uv).map(|(d, &x)| d * spec.grad(x)).collect(),
                );
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0f32; y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                    let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_owned(&mut grads[a.idx], dx);
            }
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                d,
                kind,
                inner,
            } => {
                let (d, inner) = (*d, *inner);
                let gam = nv(*gamma).value.data();
                if wants(*gamma) {
                    let mut dg = vec![0.0f32; d];
                    for_run_pairs(&g, xhat, d, inner, |j, gr, hr| {
                        dg[j] += gr.iter().zip(hr).map(|(a, b)| a * b).sum::<f32>();
                    });
                    add_owned(&mut grads[gamma.idx], dg);
                }
                if wants(*beta) {
                    let mut db = vec![0.0f32; d];
                    for_runs(&g, d, inner, |j, gr| db[j] += gr.iter().sum::<f32>());
                    add_owned(&mut grads[beta.idx], db);
                }
                if wants(*x) {
                    let dx = norm_input_grad(&g, gam, xhat, rstd, d, inner, *kind);
                    add_owned(&mut grads[x.idx], dx);
                }
            }
            Op::Permute(a, perm) => {
                let (_, dx) = kernels::permute(&g, node.value.shape(), &inverse_perm(perm));
                add_owned(&mut grads[a.idx], dx);
            }
            Op::Sum(a) => {
                let n = nv(*a).value.numel();
                add_owned(&mut grads[a.idx], vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = nv(*a).value.numel();
                add_owned(&mut grads[a.idx], vec![g[0] / n as f32; n]);
            }
            Op::MeanFirst(a, n) => {
                let inv = 1.0 / *n as f32;
                let mut dx = Vec::with_capacity(g.len() * n);
                for _ in 0..*n {
                    dx.extend(g.iter().map(|x| x * inv));
                }
                add_owned(&mut grads[a.idx], dx);
            }
            Op::Gather(a, idx) => {
                let cols = nv(*a).value.shape()[1];
                let mut dx = vec![0.0f32; idx.len() * cols];
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * cols + c] += g[r];
                }
                add_owned(&mut grads[a.idx], dx);
            }
            Op::Lif {
                x,
                params,
                membrane,
                t_len,
            } => {
                let s = node.value.data();
                let n = s.len() / t_len;
                let mut dx = vec![0.0f32; s.len()];
                let mut dv_next = vec![0.0f32; n];
                for t in (0..*t_len).rev() {
                    for i in 0..n {
                        let k = t * n + i;
                        let (ds_dm, dv_dm) = params.local_grads(membrane[k], s[k]);
                        let dm = g[k] * ds_dm + dv_next[i] * dv_dm;
                        dx[k] = dm;
                        dv_next[i] = dm;
                    }
                }
                add_owned(&mut grads[x.idx], dx);
            }
        }
        Ok(())
    }
}

fn kernels_cmp(n: usize, kind: SpikeKind) {
    let per = match kind {
        SpikeKind::Binary => 1,
        SpikeKind::Ternary => 2,
    };
    crate::analysis::counters::record_cmps((n * per) as u64);
}

/// Calls `f(feature, run)` for each contiguous run of `inner` elements that
/// share a feature index; features cycle with period `d`.
fn for_runs(data: &[f32], d: usize, inner: usize, mut f: impl FnMut(usize, &[f32])) {
    for (k, run) in data.chunks_exact(inner).enumerate() {
        f(k % d, run);
    }
}

fn for_run_pairs(a: &[f32], b: &[f32], d: usize, inner: usize, mut f: impl FnMut(usize, &[f32], &[f32])) {
    for (k, (ra, rb)) in a.chunks_exact(inner).zip(b.chunks_exact(inner)).enumerate() {
        f(k % d, ra, rb);
    }
}

fn norm_input_grad(g: &[f32], gamma: &[f32], xhat: &[f32], rstd: &[f32], d: usize, inner: usize, kind: NormKind) -> Vec<f32> {
    match kind {
        NormKind::Layer => {
            let mut dx = vec![0.0f32; g.len()];
            let df = d as f32;
            for (r, ((dxr, gr), hr)) in dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate() {
                let mut s1 = 0.0f32;
                let mut s2 = 0.0f32;
                for j in 0..d {
                    let dh = gr[j] * gamma[j];
                    s1 += dh;
                    s2 += dh * hr[j];
                }
                for j in 0..d {
                    let dh = gr[j] * gamma[j];
                    dxr[j] = rstd[r] / df * (df * dh - s1 - hr[j] * s2);
                }
            }
            dx
        }
        NormKind::BatchTrain => {
            let nf = (g.len() / d) as f32;
            let mut s1 = vec![0.0f32; d];
            let mut s2 = vec![0.0f32; d];
            for_run_pairs(g, xhat, d, inner, |j, gr, hr| {
                let gj = gamma[j];
                for (a, h) in gr.iter().zip(hr) {
                    let dh = a * gj;
                    s1[j] += dh;
                    s2[j] += dh * h;
                }
            });
            let mut dx = Vec::with_capacity(g.len());
            for_run_pairs(g, xhat, d, inner, |j, gr, hr| {
                let (gj, k, a1, a2) = (gamma[j], rstd[j] / nf, s1[j], s2[j]);
                dx.extend(gr.iter().zip(hr).map(|(a, h)| k * (nf * a * gj - a1 - h * a2)));
            });
            dx
        }
        NormKind::BatchEval => {
            let mut dx = Vec::with_capacity(g.len());
            for_runs(g, d, inner, |j, gr| {
                let k = gamma[j] * rstd[j];
                dx.extend(gr.iter().map(|a| a * k));
            });
            dx
        }
    }
}

/// Gradients of `C = A B` (or `A B^T`) with respect to both operands.
fn matmul_backward(
    g: &[f32],
    a: &[f32],
    b: &[f32],
    dims: &MatDims,
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let MatDims {
        batch,
        m,
        k,
        n,
        trans_b,
    } = *dims;
    let mut da = want_a.then(|| vec![0.0f32; batch * m * k]);
    let mut db = want_b.then(|| vec![0.0f32; batch * k * n]);
    for bi in 0..batch {
        let gb = &g[bi * m * n..(bi + 1) * m * n];
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        if let Some(da) = da.as_mut() {
            // dA[m,k] = dC[m,n] * B^T, with B^T read as an [n, k] view.
            let (rs, cs) = if trans_b { (k, 1) } else { (1, n) };
            gemm(m, n, k, gb, n, 1, bb, rs, cs, &mut da[bi * m * k..(bi + 1) * m * k], 0.0);
        }
        if let Some(db) = db.as_mut() {
            let dst = &mut db[bi * k * n..(bi + 1) * k * n];
            if trans_b {
                // dB[n,k] = dC^T[n,m] * A[m,k]
                gemm(n, m, k, gb, 1, n, ab, k, 1, dst, 0.0);
            } else {
                // dB[k,n] = A^T[k,m] * dC[m,n]
                gemm(k, m, n, ab, 1, k, gb, n, 1, dst, 0.0);
            }
        }
    }
    (da, db)
}
