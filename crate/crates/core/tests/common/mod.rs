//! Shared oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spiketrans_core::tensor::{Tape, Tensor, Var};
use spiketrans_core::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero (for kinked ops such as ReLU).
pub fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m: f32 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

/// Norm-wise relative error between the tape gradient and central finite
/// differences of `L = sum(w * f(inputs))` for a fixed random `w`, for each
/// input in `wrt`.
pub fn fd_relative_error(build: &Build<'_>, inputs: &[Tensor], wrt: &[usize], seed: u64, h: f32) -> f64 {
    let mut r = rng(seed ^ 0x5eed);
    let out_shape = {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).shape().to_vec()
    };
    let w = rand_tensor(&mut r, &out_shape, -1.0, 1.0);

    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out)
            .data()
            .iter()
            .zip(w.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    let wv = tape.leaf(w.clone()).unwrap();
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for &i in wrt {
        let analytic: Vec<f64> = match grads.get(vars[i]) {
            Some(g) => g.data().iter().map(|&x| x as f64).collect(),
            None => vec![0.0; inputs[i].numel()],
        };
        let mut numeric = vec![0.0f64; inputs[i].numel()];
        for (j, nj) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let hp = plus[i].data()[j] as f64 - inputs[i].data()[j] as f64;
            let hm = inputs[i].data()[j] as f64 - minus[i].data()[j] as f64;
            *nj = (eval(&plus) - eval(&minus)) / (hp + hm);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn).max(1e-6);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Naive row-major matrix product in 64-bit.
pub fn matmul_f64(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                c[i * n + j] += a[i * k + l] as f64 * b[l * n + j] as f64;
            }
        }
    }
    c
}

/// Naive valid cross-correlation in 64-bit, `x [B,C,H,W]`, `w [O,C,kh,kw]`.
pub fn conv2d_f64(x: &Tensor, w: &Tensor, stride: (usize, usize)) -> (Vec<usize>, Vec<f64>) {
    let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h - kh) / stride.0 + 1;
    let ow = (wd - kw) / stride.1 + 1;
    let mut out = vec![0.0f64; b * o * oh * ow];
    for bi in 0..b {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0f64;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                acc += x.at(&[bi, ci, y * stride.0 + ky, xx * stride.1 + kx]) as f64
                                    * w.at(&[oi, ci, ky, kx]) as f64;
                            }
                        }
                    }
                    out[((bi * o + oi) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (vec![b, o, oh, ow], out)
}

/// Softmax of one row in 64-bit.
pub fn softmax_f64(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Layer normalization of one row in 64-bit (no affine).
pub fn layernorm_f64(row: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    row.iter().map(|x| (x - mean) / (var + eps).sqrt()).collect()
}

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub wrt: Vec<usize>,
    pub build: Box<Build<'static>>,
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    wrt: Vec<usize>,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> GradCase {
    GradCase {
        name,
        inputs,
        wrt,
        build: Box::new(build),
    }
}

/// One random instance of every differentiable tape op.
pub fn grad_cases(r: &mut ChaCha8Rng) -> Vec<GradCase> {
    use spiketrans_core::tensor::BatchNormMode;
    let m = r.random_range(1..5);
    let k = r.random_range(1..5);
    let n = r.random_range(1..5);
    let b = r.random_range(1..3);
    let mut cases = vec![
        case(
            "matmul",
            vec![rand_tensor(r, &[m, k], -1.0, 1.0), rand_tensor(r, &[k, n], -1.0, 1.0)],
            vec![0, 1],
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "matmul_batched",
            vec![rand_tensor(r, &[b, m, k], -1.0, 1.0), rand_tensor(r, &[b, k, n], -1.0, 1.0)],
            vec![0, 1],
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "matmul_shared_rhs",
            vec![rand_tensor(r, &[b, 2, m, k], -1.0, 1.0), rand_tensor(r, &[k, n], -1.0, 1.0)],
            vec![0, 1],
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "matmul_nt",
            vec![rand_tensor(r, &[b, m, k], -1.0, 1.0), rand_tensor(r, &[b, n, k], -1.0, 1.0)],
            vec![0, 1],
            |t, v| t.matmul_nt(v[0], v[1]),
        ),
        case(
            "conv2d",
            vec![
                rand_tensor(r, &[1, 2, 5, 5], -1.0, 1.0),
                rand_tensor(r, &[3, 2, 3, 2], -1.0, 1.0),
                rand_tensor(r, &[3], -1.0, 1.0),
            ],
            vec![0, 1, 2],
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), (2, 1)),
        ),
        case(
            "add",
            vec![rand_tensor(r, &[m, n], -1.0, 1.0), rand_tensor(r, &[m, n], -1.0, 1.0)],
            vec![0, 1],
            |t, v| t.add(v[0], v[1]),
        ),
        case(
            "sub",
            vec![rand_tensor(r, &[m, n], -1.0, 1.0), rand_tensor(r, &[m, n], -1.0, 1.0)],
            vec![0, 1],
            |t, v| t.sub(v[0], v[1]),
        ),
        case(
            "mul",
            vec![rand_tensor(r, &[m, n], -1.0, 1.0), rand_tensor(r, &[m, n], -1.0, 1.0)],
            vec![0, 1],
            |t, v| t.mul(v[0], v[1]),
        ),
        case("square", vec![rand_tensor(r, &[m, n], -1.0, 1.0)], vec![0], |t, v| t.mul(v[0], v[0])),
        case(
            "add_broadcast",
            vec![rand_tensor(r, &[b, m, n], -1.0, 1.0), rand_tensor(r, &[m, n], -1.0, 1.0)],
            vec![0, 1],
            |t, v| t.add_broadcast(v[0], v[1]),
        ),
        case(
            "linear",
            vec![
                rand_tensor(r, &[b, m, k], -1.0, 1.0),
                rand_tensor(r, &[k, n], -1.0, 1.0),
                rand_tensor(r, &[n], -1.0, 1.0),
            ],
            vec![0, 1, 2],
            |t, v| t.linear(v[0], v[1], Some(v[2])),
        ),
        case("scale", vec![rand_tensor(r, &[m, n], -1.0, 1.0)], vec![0], |t, v| t.scale(v[0], -1.7)),
        case("add_scalar", vec![rand_tensor(r, &[m, n], -1.0, 1.0)], vec![0], |t, v| {
            t.add_scalar(v[0], 0.3)
        }),
        case("relu", vec![rand_away_from_zero(r, &[m, n])], vec![0], |t, v| t.relu(v[0])),
        case("softmax", vec![rand_tensor(r, &[b, m, n + 1], -2.0, 2.0)], vec![0], |t, v| t.softmax(v[0])),
        case(
            "layer_norm",
            vec![
                rand_tensor(r, &[b, m, 4], -2.0, 2.0),
                rand_tensor(r, &[4], 0.5, 1.5),
                rand_tensor(r, &[4], -1.0, 1.0),
            ],
            vec![0, 1, 2],
            |t, v| t.layer_norm(v[0], v[1], v[2]),
        ),
        case(
            "batch_norm_train",
            vec![
                rand_tensor(r, &[b + 2, 3], -2.0, 2.0),
                rand_tensor(r, &[3], 0.5, 1.5),
                rand_tensor(r, &[3], -1.0, 1.0),
            ],
            vec![0, 1, 2],
            |t, v| Ok(t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train)?.0),
        ),
        case(
            "batch_norm_channels",
            vec![
                rand_tensor(r, &[b + 1, 3, 2, 2], -2.0, 2.0),
                rand_tensor(r, &[3], 0.5, 1.5),
                rand_tensor(r, &[3], -1.0, 1.0),
            ],
            vec![0, 1, 2],
            |t, v| Ok(t.batch_norm_channels(v[0], v[1], v[2], BatchNormMode::Train)?.0),
        ),
        case(
            "batch_norm_eval",
            vec![
                rand_tensor(r, &[b + 1, 3], -2.0, 2.0),
                rand_tensor(r, &[3], 0.5, 1.5),
                rand_tensor(r, &[3], -1.0, 1.0),
            ],
            vec![0, 1, 2],
            |t, v| {
                let mode = BatchNormMode::Eval {
                    mean: &[0.1, -0.2, 0.3],
                    var: &[0.5, 1.0, 2.0],
                };
                Ok(t.batch_norm(v[0], v[1], v[2], mode)?.0)
            },
        ),
        case("reshape", vec![rand_tensor(r, &[m, n], -1.0, 1.0)], vec![0], move |t, v| {
            t.reshape(v[0], &[m * n])
        }),
        case("permute", vec![rand_tensor(r, &[2, m, n], -1.0, 1.0)], vec![0], |t, v| {
            t.permute(v[0], &[2, 0, 1])
        }),
        case("sum", vec![rand_tensor(r, &[m, n], -1.0, 1.0)], vec![0], |t, v| t.sum(v[0])),
        case("mean", vec![rand_tensor(r, &[m, n], -1.0, 1.0)], vec![0], |t, v| t.mean(v[0])),
        case("mean_first", vec![rand_tensor(r, &[3, m, n], -1.0, 1.0)], vec![0], |t, v| {
            t.mean_first(v[0])
        }),
    ];
    let rows = r.random_range(1..5);
    let idx: Vec<usize> = (0..rows).map(|_| r.random_range(0..5)).collect();
    cases.push(case("gather_rows", vec![rand_tensor(r, &[rows, 5], -1.0, 1.0)], vec![0], move |t, v| {
        t.gather_rows(v[0], &idx)
    }));
    let spikes = Tensor::from_fn(vec![b, m, k], |_| r.random_range(-1..=1) as f32);
    cases.push(case(
        "spike_matmul_left",
        vec![spikes.clone(), rand_tensor(r, &[b, k, n], -1.0, 1.0)],
        vec![1],
        |t, v| t.spike_matmul_left(v[0], v[1]),
    ));
    let spikes_r = Tensor::from_fn(vec![b, k, n], |_| r.random_range(0..=1) as f32);
    cases.push(case(
        "spike_matmul_right",
        vec![rand_tensor(r, &[b, m, k], -1.0, 1.0), spikes_r],
        vec![0],
        |t, v| t.spike_matmul_right(v[0], v[1]),
    ));
    cases.push(case(
        "spike_matmul_nt",
        vec![spikes, rand_tensor(r, &[b, n, k], -1.0, 1.0)],
        vec![1],
        |t, v| t.spike_matmul_nt(v[0], v[1]),
    ));
    cases
}

/// Multi-head attention in 64-bit on one sample: `x1 [n1, d]`, `x2 [n2, d]`,
/// projections `[d, d]`, output projection `wo [d, d]` plus `bo`. Returns the
/// projected output `[n1, d]` and the weights `[heads, n1, n2]`.
#[allow(clippy::too_many_arguments)]
pub fn mha_f64(
    x1: &[f32],
    x2: &[f32],
    n1: usize,
    n2: usize,
    d: usize,
    heads: usize,
    wq: &[f32],
    wk: &[f32],
    wv: &[f32],
    wo: &[f32],
    bo: &[f32],
) -> (Vec<f64>, Vec<f64>) {
    let q = matmul_f64(x1, wq, n1, d, d);
    let k = matmul_f64(x2, wk, n2, d, d);
    let v = matmul_f64(x2, wv, n2, d, d);
    let dk = d / heads;
    let mut concat = vec![0.0f64; n1 * d];
    let mut weights = Vec::with_capacity(heads * n1 * n2);
    for h in 0..heads {
        for i in 0..n1 {
            let scores: Vec<f64> = (0..n2)
                .map(|j| (0..dk).map(|c| q[i * d + h * dk + c] * k[j * d + h * dk + c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let w = softmax_f64(&scores);
            for c in 0..dk {
                concat[i * d + h * dk + c] = (0..n2).map(|j| w[j] * v[j * d + h * dk + c]).sum();
            }
            weights.extend(w);
        }
    }
    let mut out = vec![0.0f64; n1 * d];
    for i in 0..n1 {
        for o in 0..d {
            out[i * d + o] = bo[o] as f64 + (0..d).map(|c| concat[i * d + c] * wo[c * d + o] as f64).sum::<f64>();
        }
    }
    (out, weights)
}
