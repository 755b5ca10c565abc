use crate::analysis::counters;

/// `c = a * b + beta * c` for strided row/column views.
///
/// `a` is `m x k` with strides `(rsa, csa)`, `b` is `k x n` with strides
/// `(rsb, csb)`, `c` is a contiguous row-major `m x n` block. Counted as
/// `m * k * n` multiply-accumulates when an op-counting session is active.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    beta: f32,
) {
    counters::record_macs((m * k * n) as u64);
    gemm_uncounted(m, k, n, a, rsa, csa, b, rsb, csb, c, beta);
}

/// [`gemm`] without op counting, for kernels that report their own cost.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_uncounted(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    beta: f32,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c[..m * n].iter_mut() {
            *x *= beta;
        }
        return;
    }
    // SAFETY: the slices cover every element addressed by the given
    // dimensions and strides (checked by the callers' shape logic and the
    // debug assertions below); `c` is contiguous with row stride `n`.
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output length of a valid (unpadded) convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

/// Unfolds one image `x [Cin, H, W]` into its patch matrix
/// `[Cin*kh*kw, OH*OW]`, overwriting `cols`.
pub(crate) fn im2col_into(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let span = (g.ow - 1) * g.sw + 1;
    let mut dst = cols.chunks_exact_mut(g.ow);
    for plane in x.chunks_exact(g.h * g.w) {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                for oy in 0..g.oh {
                    let start = (oy * g.sh + ky) * g.w + kx;
                    let src = &plane[start..start + span];
                    let d = dst.next().expect("patch matrix covers the geometry");
                    if g.sw == 1 {
                        d.copy_from_slice(src);
                    } else {
                        for (o, v) in d.iter_mut().zip(src.iter().step_by(g.sw)) {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds one image's patch-matrix gradient onto `dx [Cin, H, W]`.
pub(crate) fn col2im_add(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let span = (g.ow - 1) * g.sw + 1;
    let mut src = cols.chunks_exact(g.ow);
    for plane in dx.chunks_exact_mut(g.h * g.w) {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                for oy in 0..g.oh {
                    let vals = src.next().expect("patch matrix covers the geometry");
                    let start = (oy * g.sh + ky) * g.w + kx;
                    let dst = &mut plane[start..start + span];
                    for (d, v) in dst.iter_mut().step_by(g.sw).zip(vals) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

/// Strided copy implementing an axis permutation of a row-major array.
pub(crate) fn permute(data: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        return (out_shape, data.to_vec());
    }
    // Iterate the output in row-major order, the innermost axis as a tight loop.
    let inner = out_shape[rank - 1];
    let inner_stride = out_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            out.push(data[base + j * inner_stride]);
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Multiplication-free product where one operand only holds `{-1, 0, 1}`.
///
/// Computes `out[.., m, n] = sum_k a[.., m, k] * b[.., k, n]` by adding or
/// subtracting rows/columns of the real operand wherever the spike operand is
/// nonzero. `spike_left` selects which operand carries the spikes. Each
/// executed accumulation is reported to the op counters as an addition.
pub(crate) fn spike_matmul(
    a: &[f32],
    b: &[f32],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    spike_left: bool,
) -> Vec<f32> {
    let mut out = vec![0.0f32; batch * m * n];
    let mut adds = 0u64;
    for bi in 0..batch {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        let ob = &mut out[bi * m * n..(bi + 1) * m * n];
        if spike_left {
            for i in 0..m {
                let orow = &mut ob[i * n..(i + 1) * n];
                for kk in 0..k {
                    let s = ab[i * k + kk];
                    if s == 0.0 {
                        continue;
                    }
                    let brow = &bb[kk * n..(kk + 1) * n];
                    if s > 0.0 {
                        for (o, x) in orow.iter_mut().zip(brow) {
                            *o += *x;
                        }
                    } else {
                        for (o, x) in orow.iter_mut().zip(brow) {
                            *o -= *x;
                        }
                    }
                    adds += n as u64;
                }
            }
        } else {
            for kk in 0..k {
                for j in 0..n {
                    let s = bb[kk * n + j];
                    if s == 0.0 {
                        continue;
                    }
                    if s > 0.0 {
                        for i in 0..m {
                            ob[i * n + j] += ab[i * k + kk];
                        }
                    } else {
                        for i in 0..m {
                            ob[i * n + j] -= ab[i * k + kk];
                        }
                    }
                    adds += m as u64;
                }
            }
        }
    }
    counters::record_adds(adds);
    out
}

/// `a^T g` for spikes `a [m, k]` and reals `g [m, n]`, accumulated into
/// `out [k, n]` by visiting only the nonzero spikes.
pub(crate) fn spike_transpose_acc(a: &[f32], g: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut adds = 0u64;
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (kk, &s) in a[i * k..(i + 1) * k].iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            if s > 0.0 {
                for (o, x) in orow.iter_mut().zip(grow) {
                    *o += *x;
                }
            } else {
                for (o, x) in orow.iter_mut().zip(grow) {
                    *o -= *x;
                }
            }
            adds += n as u64;
        }
    }
    counters::record_adds(adds);
}

pub(crate) fn is_spike_alphabet(data: &[f32]) -> bool {
    data.chunks(256)
        .all(|c| c.iter().fold(true, |acc, &x| acc & ((x == 0.0) | (x.abs() == 1.0))))
}
