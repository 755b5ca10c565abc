mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spiketrans_core::analysis::count_ops;
use spiketrans_core::attention::*;
use spiketrans_core::nn::{Ctx, Init, ParamStore};
use spiketrans_core::tensor::{LifParams, Tape, Tensor};
use spiketrans_core::Error;

/// A fusion block whose every parameter is random (LayerNorm scales near 1).
fn random_fusion(r: &mut ChaCha8Rng, mode: AttentionMode, n1: usize, n2: usize) -> (ParamStore, CrossFusion) {
    let mut store = ParamStore::new();
    let mut init = Init::new(r.random());
    let f = CrossFusion::new(&mut store, &mut init, "fusion", AttentionConfig::new(mode), n1, n2).unwrap();
    for id in 0..store.len() {
        let name = store.param(id).name.clone();
        let data = store.get_mut(id).data_mut();
        if name.contains("running") {
            continue;
        }
        if name.ends_with("gamma") {
            data.iter_mut().for_each(|v| *v = r.random_range(0.5..1.5));
        } else if name.contains("bias") || name.contains("pos_") || name.ends_with("beta") {
            data.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
        }
    }
    (store, f)
}

fn data(store: &ParamStore, name: &str) -> Vec<f32> {
    store.get(store.find(name).unwrap_or_else(|| panic!("no parameter {name}"))).data().to_vec()
}

fn ln_affine(row: &[f64], g: &[f32], b: &[f32]) -> Vec<f64> {
    layernorm_f64(row, 1e-5)
        .iter()
        .zip(g.iter().zip(b))
        .map(|(x, (g, b))| x * *g as f64 + *b as f64)
        .collect()
}

#[test]
fn dense_attention_matches_f64_oracle_on_50_shapes() {
    let mut r = rng(70);
    for case in 0..50 {
        let (n1, n2) = (r.random_range(1..8), r.random_range(1..8));
        let (store, f) = random_fusion(&mut r, AttentionMode::Dense, n1, n2);
        let x1 = rand_tensor(&mut r, &[1, n1, 32], -1.0, 1.0);
        let x2 = rand_tensor(&mut r, &[1, n2, 32], -1.0, 1.0);
        let mut tape = Tape::inference();
        let p = store.bind(&mut tape).unwrap();
        let (a, b) = (tape.leaf(x1.clone()).unwrap(), tape.leaf(x2.clone()).unwrap());
        let (out, w) = f.attend_dense(&mut tape, &p, a, b).unwrap();
        let (expect, expect_w) = mha_f64(
            x1.data(),
            x2.data(),
            n1,
            n2,
            32,
            8,
            &data(&store, "fusion.w_q"),
            &data(&store, "fusion.w_k"),
            &data(&store, "fusion.w_v"),
            &data(&store, "fusion.w_o.weight"),
            &data(&store, "fusion.w_o.bias"),
        );
        assert_eq!(tape.value(out).shape(), [1, n1, 32]);
        for (got, want) in tape.value(out).data().iter().zip(&expect) {
            assert!((*got as f64 - want).abs() < 1e-5, "case {case}: {got} vs {want}");
        }
        for (got, want) in tape.value(w).data().iter().zip(&expect_w) {
            assert!((*got as f64 - want).abs() < 1e-6);
        }
        for row in tape.value(w).data().chunks(n2) {
            let s: f64 = row.iter().map(|v| *v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn single_key_broadcasts_its_value_and_identical_keys_average_uniformly() {
    let mut r = rng(71);
    let mut tape = Tape::inference();
    let q = tape.leaf(rand_tensor(&mut r, &[1, 3, 8], -1.0, 1.0)).unwrap();
    let k = tape.leaf(rand_tensor(&mut r, &[1, 1, 8], -1.0, 1.0)).unwrap();
    let vt = rand_tensor(&mut r, &[1, 1, 8], -1.0, 1.0);
    let v = tape.leaf(vt.clone()).unwrap();
    let (out, _) = dense_attention(&mut tape, q, k, v, 2).unwrap();
    for row in tape.value(out).data().chunks(8) {
        assert_eq!(row, vt.data());
    }

    let key = rand_tensor(&mut r, &[1, 1, 8], -1.0, 1.0);
    let keys = Tensor::new([1, 4, 8], key.data().repeat(4)).unwrap();
    let k = tape.leaf(keys).unwrap();
    let v = tape.leaf(rand_tensor(&mut r, &[1, 4, 8], -1.0, 1.0)).unwrap();
    let (_, w) = dense_attention(&mut tape, q, k, v, 2).unwrap();
    assert!(tape.value(w).data().iter().all(|x| (x - 0.25).abs() < 1e-6));
}

#[test]
fn dense_fusion_matches_composed_oracle() {
    let mut r = rng(72);
    for _ in 0..5 {
        let (n1, n2) = (r.random_range(1..6), r.random_range(1..6));
        let (store, f) = random_fusion(&mut r, AttentionMode::Dense, n1, n2);
        let e1 = rand_tensor(&mut r, &[1, n1, 32], -1.0, 1.0);
        let e2 = rand_tensor(&mut r, &[1, n2, 32], -1.0, 1.0);
        let mut tape = Tape::inference();
        let p = store.bind(&mut tape).unwrap();
        let mut ctx = Ctx::eval(0);
        let (a, b) = (tape.leaf(e1.clone()).unwrap(), tape.leaf(e2.clone()).unwrap());
        let out = f.forward(&mut tape, &store, &p, &mut ctx, a, b).unwrap();

        let add = |x: &Tensor, pos: &[f32]| -> Vec<f32> { x.data().iter().zip(pos.iter().cycle()).map(|(a, b)| a + b).collect() };
        let x1 = add(&e1, &data(&store, "fusion.pos_query"));
        let x2 = add(&e2, &data(&store, "fusion.pos_key"));
        let (att, _) = mha_f64(
            &x1,
            &x2,
            n1,
            n2,
            32,
            8,
            &data(&store, "fusion.w_q"),
            &data(&store, "fusion.w_k"),
            &data(&store, "fusion.w_v"),
            &data(&store, "fusion.w_o.weight"),
            &data(&store, "fusion.w_o.bias"),
        );
        let (w1, b1) = (data(&store, "fusion.ffn1.weight"), data(&store, "fusion.ffn1.bias"));
        let (w2, b2) = (data(&store, "fusion.ffn2.weight"), data(&store, "fusion.ffn2.bias"));
        for i in 0..n1 {
            let r1: Vec<f64> = (0..32).map(|c| x1[i * 32 + c] as f64 + att[i * 32 + c]).collect();
            let y1 = ln_affine(&r1, &data(&store, "fusion.ln1.gamma"), &data(&store, "fusion.ln1.beta"));
            let h: Vec<f64> = (0..128)
                .map(|o| (b1[o] as f64 + (0..32).map(|c| y1[c] * w1[c * 128 + o] as f64).sum::<f64>()).max(0.0))
                .collect();
            let r2: Vec<f64> = (0..32)
                .map(|o| y1[o] + b2[o] as f64 + (0..128).map(|c| h[c] * w2[c * 32 + o] as f64).sum::<f64>())
                .collect();
            let want = ln_affine(&r2, &data(&store, "fusion.ln2.gamma"), &data(&store, "fusion.ln2.beta"));
            let got = &tape.value(out).data()[i * 32..(i + 1) * 32];
            for (g, w) in got.iter().zip(&want) {
                assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn fusion_with_silent_sublayers_is_double_layer_norm() {
    let mut r = rng(73);
    let mut store = ParamStore::new();
    let mut init = Init::new(1);
    let f = CrossFusion::new(&mut store, &mut init, "fusion", AttentionConfig::new(AttentionMode::Dense), 4, 3).unwrap();
    for name in ["fusion.w_v", "fusion.ffn1.weight", "fusion.ffn2.weight"] {
        store.get_mut(store.find(name).unwrap()).data_mut().fill(0.0);
    }
    let e1 = rand_tensor(&mut r, &[1, 4, 32], -2.0, 2.0);
    let e2 = rand_tensor(&mut r, &[1, 3, 32], -2.0, 2.0);
    let mut tape = Tape::inference();
    let p = store.bind(&mut tape).unwrap();
    let (a, b) = (tape.leaf(e1.clone()).unwrap(), tape.leaf(e2).unwrap());
    let out = f.forward(&mut tape, &store, &p, &mut Ctx::eval(0), a, b).unwrap();
    for (i, row) in e1.data().chunks(32).enumerate() {
        let row: Vec<f64> = row.iter().map(|v| *v as f64).collect();
        let want = layernorm_f64(&layernorm_f64(&row, 1e-5), 1e-5);
        for (g, w) in tape.value(out).data()[i * 32..(i + 1) * 32].iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-4);
        }
    }
}

#[test]
fn spiking_fusion_shapes_and_mode_contracts() {
    let mut r = rng(74);
    for mode in [AttentionMode::Ssa, AttentionMode::Ttsa] {
        let (store, f) = random_fusion(&mut r, mode, 49, 16);
        let mut tape = Tape::inference();
        let p = store.bind(&mut tape).unwrap();
        let e1 = tape.leaf(rand_tensor(&mut r, &[5, 2, 49, 32], -1.0, 2.0)).unwrap();
        let e2 = tape.leaf(rand_tensor(&mut r, &[5, 2, 16, 32], -1.0, 2.0)).unwrap();
        let out = f.forward(&mut tape, &store, &p, &mut Ctx::eval(0), e1, e2).unwrap();
        assert_eq!(tape.value(out).shape(), [5, 2, 49, 32]);
        let flat = tape.leaf(rand_tensor(&mut r, &[2, 49, 32], -1.0, 1.0)).unwrap();
        let flat2 = tape.leaf(rand_tensor(&mut r, &[2, 16, 32], -1.0, 1.0)).unwrap();
        assert!(matches!(
            f.forward(&mut tape, &store, &p, &mut Ctx::eval(0), flat, flat2),
            Err(Error::Contract(_))
        ));
    }
    let (store, f) = random_fusion(&mut r, AttentionMode::Dense, 49, 16);
    let mut tape = Tape::inference();
    let p = store.bind(&mut tape).unwrap();
    let e1 = tape.leaf(Tensor::zeros([5, 2, 49, 32])).unwrap();
    let e2 = tape.leaf(Tensor::zeros([5, 2, 16, 32])).unwrap();
    assert!(matches!(f.forward(&mut tape, &store, &p, &mut Ctx::eval(0), e1, e2), Err(Error::Contract(_))));
}

#[test]
fn invalid_attention_configs_are_rejected() {
    let mut c = AttentionConfig::new(AttentionMode::Ssa);
    c.n_heads = 5;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = AttentionConfig::new(AttentionMode::Ssa);
    c.omega = 0.0;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

/// `omega * (Q K^T) V` per time step and head with integer loops.
fn ssa_oracle(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, omega: f64) -> Vec<f64> {
    let s = q.shape();
    let (t, b, n1, d) = (s[0], s[1], s[2], s[3]);
    let n2 = k.shape()[2];
    let dk = d / heads;
    let mut out = vec![0.0; t * b * n1 * d];
    for ti in 0..t {
        for bi in 0..b {
            for h in 0..heads {
                for i in 0..n1 {
                    for c in 0..dk {
                        let mut acc: i64 = 0;
                        for j in 0..n2 {
                            let a: i64 = (0..dk)
                                .map(|e| (q.at(&[ti, bi, i, h * dk + e]) * k.at(&[ti, bi, j, h * dk + e])) as i64)
                                .sum();
                            acc += a * v.at(&[ti, bi, j, h * dk + c]) as i64;
                        }
                        out[((ti * b + bi) * n1 + i) * d + h * dk + c] = acc as f64 * omega;
                    }
                }
            }
        }
    }
    out
}

fn binary(r: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| if r.random_bool(p) { 1.0 } else { 0.0 })
}

fn ternary(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1..=1) as f32)
}

#[test]
fn ssa_ones_token_and_loop_oracle() {
    let ones = Tensor::ones([1, 1, 1, 4]);
    let mut tape = Tape::inference();
    let q = tape.leaf(ones.clone()).unwrap();
    let out = ssa_map(&mut tape, q, q, q, 1, 0.125).unwrap();
    assert_eq!(tape.value(out).data(), [0.5; 4]);

    let mut r = rng(75);
    for _ in 0..20 {
        let heads = [1, 2, 4][r.random_range(0..3)];
        let (t, b, n1, n2, d) = (r.random_range(1..4), r.random_range(1..3), r.random_range(1..6), r.random_range(1..6), 8);
        let qt = binary(&mut r, &[t, b, n1, d], 0.5);
        let kt = binary(&mut r, &[t, b, n2, d], 0.5);
        let vt = binary(&mut r, &[t, b, n2, d], 0.5);
        let mut tape = Tape::inference();
        let (q, k, v) = (tape.leaf(qt.clone()).unwrap(), tape.leaf(kt.clone()).unwrap(), tape.leaf(vt.clone()).unwrap());
        let out = ssa_map(&mut tape, q, k, v, heads, 0.125).unwrap();
        let want = ssa_oracle(&qt, &kt, &vt, heads, 0.125);
        let got: Vec<f64> = tape.value(out).data().iter().map(|x| *x as f64).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn ssa_quiescence_and_alphabet_contract() {
    let mut tape = Tape::inference();
    let z = tape.leaf(Tensor::zeros([5, 1, 3, 8])).unwrap();
    let out = ssa_map(&mut tape, z, z, z, 2, 0.125).unwrap();
    assert!(tape.value(out).data().iter().all(|x| *x == 0.0));
    let bad = tape.leaf(Tensor::full([5, 1, 3, 8], 0.5)).unwrap();
    assert!(matches!(ssa_map(&mut tape, bad, z, z, 2, 0.125), Err(Error::Contract(_))));
    let neg = tape.leaf(Tensor::full([5, 1, 3, 8], -1.0)).unwrap();
    assert!(matches!(ssa_map(&mut tape, neg, z, z, 2, 0.125), Err(Error::Contract(_))));
    let tq = tape.leaf(Tensor::full([5, 1, 3, 8], 2.0)).unwrap();
    assert!(matches!(ternary_map(&mut tape, tq, z, 2), Err(Error::Contract(_))));
}

proptest! {
    #[test]
    fn ssa_map_entries_are_bounded_counts(seed in any::<u64>(), n1 in 1usize..6, n2 in 1usize..6) {
        let mut r = rng(seed);
        let q = binary(&mut r, &[2, 1, n1, 32], 0.5);
        let k = binary(&mut r, &[2, 1, n2, 32], 0.5);
        let mut tape = Tape::inference();
        let (qv, kv) = (tape.leaf(q).unwrap(), tape.leaf(k).unwrap());
        let (qf, kf) = (tape.reshape(qv, &[2, n1, 32]).unwrap(), tape.reshape(kv, &[2, n2, 32]).unwrap());
        let map = tape.spike_matmul_nt(qf, kf).unwrap();
        for &a in tape.value(map).data() {
            prop_assert!(a >= 0.0 && a <= 32.0 && a.fract() == 0.0);
        }
    }

    #[test]
    fn head_split_then_merge_is_identity(seed in any::<u64>(), g in 1usize..4, n in 1usize..6, heads in 1usize..5) {
        let mut r = rng(seed);
        let x = rand_tensor(&mut r, &[g, n, heads * 3], -1.0, 1.0);
        let mut tape = Tape::inference();
        let xv = tape.leaf(x.clone()).unwrap();
        let s = split_heads(&mut tape, xv, heads).unwrap();
        prop_assert_eq!(tape.value(s).shape(), &[g, heads, n, 3]);
        prop_assert_eq!(tape.value(s).at(&[0, heads - 1, 0, 2]), x.at(&[0, 0, heads * 3 - 1]));
        let m = merge_heads(&mut tape, s).unwrap();
        prop_assert_eq!(tape.value(m), &x);
    }
}

#[test]
fn ternary_map_keeps_negative_alignment_that_binary_spikes_lose() {
    // Pre-neuron currents are all strongly negative for both sides.
    let cur = Tensor::full([5, 1, 2, 8], -5.0);
    let mut tape = Tape::inference();
    let c = tape.leaf(cur).unwrap();
    let tq = tape.lif(c, LifParams::ternary()).unwrap();
    let bq = tape.lif(c, LifParams::binary()).unwrap();
    assert!(tape.value(bq).data().iter().all(|x| *x == 0.0));
    let a = ternary_map(&mut tape, tq, tq, 2).unwrap();
    assert!(tape.value(a).data().iter().any(|x| *x > 0.0));
    let ones = tape.leaf(Tensor::ones([5, 1, 2, 8])).unwrap();
    let s = ssa_map(&mut tape, bq, bq, ones, 2, 0.125).unwrap();
    assert!(tape.value(s).data().iter().all(|x| *x == 0.0));
}

#[test]
fn ttsa_gates_value_rows_by_mask() {
    // q = k = (1, -1, 0, 0): A = 2 fires the mask, so the output is the sum
    // of V rows; an all-zero query keeps the output at zero.
    let mut tape = Tape::inference();
    let q = tape.leaf(Tensor::new([1, 1, 1, 4], vec![1.0, -1.0, 0.0, 0.0]).unwrap()).unwrap();
    let k = tape.leaf(Tensor::new([1, 1, 2, 4], vec![1.0, -1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
    let v = tape.leaf(Tensor::new([1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]).unwrap()).unwrap();
    let out = ttsa_map(&mut tape, &mut Ctx::eval(0), "m", q, k, v, 1, LifParams::binary()).unwrap();
    assert_eq!(tape.value(out).data(), [1.0, 2.0, 3.0, 4.0]);
    let z = tape.leaf(Tensor::zeros([1, 1, 1, 4])).unwrap();
    let out = ttsa_map(&mut tape, &mut Ctx::eval(0), "m", z, k, v, 1, LifParams::binary()).unwrap();
    assert!(tape.value(out).data().iter().all(|x| *x == 0.0));
}

/// Mask of a `[T, 1, 1, 1]` map sequence.
fn mask_of(seq: &[f32], neuron: LifParams) -> Vec<f32> {
    let mut tape = Tape::inference();
    let m = tape.leaf(Tensor::new([seq.len(), 1, 1], seq.to_vec()).unwrap()).unwrap();
    let out = temporal_mask(&mut tape, &mut Ctx::eval(0), "m", m, seq.len(), neuron).unwrap();
    tape.value(out).data().to_vec()
}

/// Scripted membrane recursion for a binary subtractive neuron.
fn mask_oracle(seq: &[f32], beta: f64, stateful: bool) -> Vec<f32> {
    let mut v = 0.0f64;
    seq.iter()
        .map(|&a| {
            let m = v + a as f64;
            let s = if m >= 1.0 { 1.0 } else { 0.0 };
            v = if stateful { beta * (m - s) } else { 0.0 };
            s as f32
        })
        .collect()
}

#[test]
fn sub_threshold_map_fires_through_carried_membrane_only() {
    let seq = [0.6f32; 5];
    let stateful = mask_of(&seq, LifParams::binary());
    assert_eq!(stateful, mask_oracle(&seq, 0.5, true));
    let first = stateful.iter().position(|s| *s == 1.0).expect("mask fires within the window");
    assert_eq!(first, 2);
    assert!(mask_of(&seq, LifParams::binary().stateless()).iter().all(|s| *s == 0.0));
}

#[test]
fn stateful_mask_is_order_sensitive_stateless_is_not() {
    let a = [0.8f32, 0.8, 0.0, 0.0, 0.0];
    let b = [0.8f32, 0.0, 0.0, 0.0, 0.8];
    assert_ne!(mask_of(&a, LifParams::binary()), mask_of(&b, LifParams::binary()));
    let mut r = rng(76);
    for _ in 0..100 {
        let seq: Vec<f32> = (0..5).map(|_| r.random_range(-2.0f32..2.0)).collect();
        let mut perm: Vec<usize> = (0..5).collect();
        for i in (1..5).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let permuted: Vec<f32> = perm.iter().map(|&i| seq[i]).collect();
        let out = mask_of(&seq, LifParams::binary().stateless());
        let out_p = mask_of(&permuted, LifParams::binary().stateless());
        let expect: Vec<f32> = perm.iter().map(|&i| out[i]).collect();
        assert_eq!(out_p, expect);
        assert_eq!(mask_of(&seq, LifParams::binary()), mask_oracle(&seq, 0.5, true));
    }
}

#[test]
fn ttsa_path_carries_integer_map_over_steps_with_raised_threshold() {
    // A = 1 each step is below a 1.5 threshold; the carried membrane reaches
    // 1.5 on the second step, a stateless mask never does.
    let mut mask = LifParams::binary();
    mask.vth_pos = 1.5;
    let run = |neuron: LifParams| {
        let mut tape = Tape::inference();
        let q = tape.leaf(Tensor::new([5, 1, 1, 2], [1.0, 0.0].repeat(5)).unwrap()).unwrap();
        let v = tape.leaf(Tensor::ones([5, 1, 1, 2])).unwrap();
        let out = ttsa_map(&mut tape, &mut Ctx::eval(0), "m", q, q, v, 1, neuron).unwrap();
        tape.value(out).data().iter().step_by(2).copied().collect::<Vec<_>>()
    };
    assert_eq!(run(mask), [0.0, 1.0, 0.0, 1.0, 0.0]);
    assert_eq!(run(mask.stateless()), [0.0; 5]);
}

#[test]
fn spike_attention_paths_record_no_multiplies() {
    let mut r = rng(77);
    for _ in 0..200 {
        let (n1, n2) = (r.random_range(1..8), r.random_range(1..8));
        let q = binary(&mut r, &[5, 1, n1, 32], 0.3);
        let k = binary(&mut r, &[5, 1, n2, 32], 0.3);
        let v = binary(&mut r, &[5, 1, n2, 32], 0.3);
        let (_, c) = count_ops(|| {
            let mut tape = Tape::inference();
            let (q, k, v) = (tape.leaf(q).unwrap(), tape.leaf(k).unwrap(), tape.leaf(v).unwrap());
            ssa_map(&mut tape, q, k, v, 8, 0.125).unwrap();
        });
        assert_eq!(c.multiplies, 0);
        let tq = ternary(&mut r, &[5, 1, n1, 32]);
        let tk = ternary(&mut r, &[5, 1, n2, 32]);
        let tv = rand_tensor(&mut r, &[5, 1, n2, 32], -1.0, 1.0);
        let (_, c) = count_ops(|| {
            let mut tape = Tape::inference();
            let (q, k, v) = (tape.leaf(tq).unwrap(), tape.leaf(tk).unwrap(), tape.leaf(tv).unwrap());
            ttsa_map(&mut tape, &mut Ctx::eval(0), "m", q, k, v, 8, LifParams::binary()).unwrap();
        });
        assert_eq!(c.multiplies, 0);
        assert!(c.additions > 0 || c.comparisons > 0);
    }
}

#[test]
fn dense_score_product_counts_n1_n2_dk_per_head() {
    let mut r = rng(78);
    let (_, one) = count_ops(|| {
        let mut tape = Tape::inference();
        let q = tape.leaf(rand_tensor(&mut r, &[1, 1, 3, 4], -1.0, 1.0)).unwrap();
        let k = tape.leaf(rand_tensor(&mut r, &[1, 1, 5, 4], -1.0, 1.0)).unwrap();
        tape.matmul_nt(q, k).unwrap();
    });
    assert_eq!(one.multiplies, 60);
    let (_, all) = count_ops(|| {
        let mut tape = Tape::inference();
        let q = tape.leaf(rand_tensor(&mut r, &[1, 3, 32], -1.0, 1.0)).unwrap();
        let k = tape.leaf(rand_tensor(&mut r, &[1, 5, 32], -1.0, 1.0)).unwrap();
        let v = tape.leaf(rand_tensor(&mut r, &[1, 5, 32], -1.0, 1.0)).unwrap();
        dense_attention(&mut tape, q, k, v, 8).unwrap();
    });
    // scores and weighted values: 8 heads x 60 each
    assert_eq!(all.multiplies, 2 * 8 * 60);
}
