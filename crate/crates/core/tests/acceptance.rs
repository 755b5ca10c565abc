//! End-to-end acceptance criteria, one test per criterion.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spiketrans_core::analysis::*;
use spiketrans_core::attention::*;
use spiketrans_core::dqn::*;
use spiketrans_core::model::{Checkpoint, NetworkSpec, Variant};
use spiketrans_core::nn::{Ctx, Init, ParamStore};
use spiketrans_core::sim::*;
use spiketrans_core::spike::{bsn_step, tsn_step, NeuronState, ResetMode, T_STEPS};
use spiketrans_core::tensor::{LifParams, SpikeKind, Tape, Tensor};

#[test]
fn acceptance_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut r = rng(101);
    for round in 0..20 {
        for c in grad_cases(&mut r) {
            let err = fd_relative_error(&*c.build, &c.inputs, &c.wrt, 1000 + round, 1e-3);
            assert!(err < 1e-3, "{} instance {round}: relative error {err}", c.name);
        }
    }
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
}

/// Drives one neuron through `xs` and returns spikes and post-step membranes.
fn drive(p: LifParams, xs: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let mut st = NeuronState::new([1], p).unwrap();
    let mut spikes = Vec::new();
    let mut v = Vec::new();
    for &x in xs {
        let x = Tensor::new([1], vec![x]).unwrap();
        let s = match p.kind {
            SpikeKind::Binary => bsn_step(&x, &mut st).unwrap(),
            SpikeKind::Ternary => tsn_step(&x, &mut st).unwrap(),
        };
        spikes.push(s.data()[0]);
        v.push(st.v().data()[0]);
    }
    (spikes, v)
}

fn assert_trace(got: (Vec<f32>, Vec<f32>), spikes: [f32; 5], v: [f32; 5]) {
    assert_eq!(got.0, spikes);
    for (a, b) in got.1.iter().zip(v) {
        assert!((a - b).abs() < 1e-6, "membrane {:?} vs {v:?}", got.1);
    }
}

#[test]
fn acceptance_02_neuron_hand_traces() {
    let (b, t) = (LifParams::binary(), LifParams::ternary());
    assert_eq!((b.beta, b.vth_pos), (0.5, 1.0));
    assert_eq!((t.vth_pos, t.vth_neg), (1.0, -4.0));
    assert_eq!(T_STEPS, 5);

    let x = [1.2, 0.3, 0.9, 0.0, 2.0];
    assert_trace(drive(b, &x), [1.0, 0.0, 1.0, 0.0, 1.0], [0.1, 0.2, 0.05, 0.025, 0.5125]);
    assert_trace(
        drive(b.with_reset(ResetMode::Hard), &x),
        [1.0, 0.0, 1.0, 0.0, 1.0],
        [0.0, 0.15, 0.0, 0.0, 0.0],
    );

    let x = [-3.0, -3.0, 0.5, 1.0, -6.0];
    assert_trace(drive(t, &x), [0.0, -1.0, 0.0, 1.0, -1.0], [-1.5, -0.25, 0.125, 0.0625, -0.96875]);
    assert_trace(
        drive(t.with_reset(ResetMode::Hard), &x),
        [0.0, -1.0, 0.0, 1.0, -1.0],
        [-1.5, 0.0, 0.25, 0.0, 0.0],
    );
}

#[test]
fn acceptance_03_negative_alignment_is_lost_by_binary_kept_by_ternary() {
    let start = Instant::now();
    let rep = prop2_demo(4, 1000, 103).unwrap();
    println!(
        "dot>0 {:.3}  binary M=0 {:.3}  ternary nonzero {:.3}",
        rep.dot_positive_rate, rep.violation_rate, rep.ternary_nonzero_rate
    );
    assert_eq!(rep.trials, 1000);
    assert_eq!(rep.dot_positive_rate, 1.0);
    assert_eq!(rep.violation_rate, 1.0);
    assert!(rep.ternary_nonzero_rate > 0.5);
    assert!(start.elapsed() < Duration::from_secs(10));
}

#[test]
fn acceptance_04_capacity_formulas() {
    let mut r = rng(104);
    for _ in 0..100 {
        let [t, c, h, w]: [u64; 4] = std::array::from_fn(|_| r.random_range(1..=256));
        let chw = (c * h * w) as u128;
        let t = t as u128;
        let tt = t as u64;
        assert_eq!(capacity_bits(CapacityKind::Float32, tt, c, h, w).unwrap(), 32 * chw);
        assert_eq!(capacity_bits(CapacityKind::Binary, tt, c, h, w).unwrap(), t * chw);
        assert_eq!(capacity_bits(CapacityKind::BinaryStep, tt, c, h, w).unwrap(), chw);
        assert_eq!(capacity_bits(CapacityKind::Ternary, tt, c, h, w).unwrap(), 2 * t * chw);
    }
}

#[test]
fn acceptance_05_energy_estimate() {
    let e = energy_estimate(1_000_000, 0.17, 5).unwrap();
    assert!((e.snn_per_op() - 0.765).abs() < 1e-12);
    assert!((e.snn_per_op() - 0.77).abs() <= 0.01);
    assert_eq!(e.ann_per_op(), 4.6);
}

fn spikes(r: &mut ChaCha8Rng, shape: &[usize], ternary: bool) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let u: f64 = r.random();
        match (ternary, u) {
            (_, u) if u < 0.6 => 0.0,
            (true, u) if u < 0.8 => -1.0,
            _ => 1.0,
        }
    })
}

#[test]
fn acceptance_06_spike_maps_are_multiplication_free() {
    let mut r = rng(106);
    for _ in 0..1000 {
        let (n1, n2) = (r.random_range(1..8), r.random_range(1..8));
        let q = spikes(&mut r, &[5, 1, n1, 32], false);
        let k = spikes(&mut r, &[5, 1, n2, 32], false);
        let v = spikes(&mut r, &[5, 1, n2, 32], false);
        let (_, c) = count_ops(|| {
            let mut tape = Tape::inference();
            let (q, k, v) = (tape.leaf(q).unwrap(), tape.leaf(k).unwrap(), tape.leaf(v).unwrap());
            ssa_map(&mut tape, q, k, v, 8, 0.125).unwrap();
        });
        assert_eq!(c.multiplies, 0, "ssa");
        let q = spikes(&mut r, &[5, 1, n1, 32], true);
        let k = spikes(&mut r, &[5, 1, n2, 32], true);
        let v = rand_tensor(&mut r, &[5, 1, n2, 32], -1.0, 1.0);
        let (_, c) = count_ops(|| {
            let mut tape = Tape::inference();
            let (q, k, v) = (tape.leaf(q).unwrap(), tape.leaf(k).unwrap(), tape.leaf(v).unwrap());
            ttsa_map(&mut tape, &mut Ctx::eval(0), "m", q, k, v, 8, LifParams::binary()).unwrap();
        });
        assert_eq!(c.multiplies, 0, "ttsa");
    }
    for _ in 0..20 {
        let (n1, n2) = (r.random_range(1..8), r.random_range(1..8));
        let (q, k, v) = (
            rand_tensor(&mut r, &[1, n1, 32], -1.0, 1.0),
            rand_tensor(&mut r, &[1, n2, 32], -1.0, 1.0),
            rand_tensor(&mut r, &[1, n2, 32], -1.0, 1.0),
        );
        let (_, c) = count_ops(|| {
            let mut tape = Tape::inference();
            let (q, k, v) = (tape.leaf(q).unwrap(), tape.leaf(k).unwrap(), tape.leaf(v).unwrap());
            dense_attention(&mut tape, q, k, v, 8).unwrap();
        });
        // Per head n1 * n2 * d_k for the scores and again for the values.
        assert_eq!(c.multiplies, (2 * 8 * n1 * n2 * 4) as u64);
    }
}

fn data(store: &ParamStore, name: &str) -> Vec<f32> {
    store.get(store.find(name).unwrap()).data().to_vec()
}

#[test]
fn acceptance_07_dense_attention_matches_oracle() {
    let mut r = rng(107);
    for case in 0..50 {
        let (n1, n2) = (r.random_range(1..10), r.random_range(1..10));
        let mut store = ParamStore::new();
        let mut init = Init::new(r.random());
        let f = CrossFusion::new(&mut store, &mut init, "f", AttentionConfig::new(AttentionMode::Dense), n1, n2).unwrap();
        let x1 = rand_tensor(&mut r, &[1, n1, 32], -1.0, 1.0);
        let x2 = rand_tensor(&mut r, &[1, n2, 32], -1.0, 1.0);
        let mut tape = Tape::inference();
        let p = store.bind(&mut tape).unwrap();
        let (a, b) = (tape.leaf(x1.clone()).unwrap(), tape.leaf(x2.clone()).unwrap());
        let (out, w) = f.attend_dense(&mut tape, &p, a, b).unwrap();
        let (expect, _) = mha_f64(
            x1.data(),
            x2.data(),
            n1,
            n2,
            32,
            8,
            &data(&store, "f.w_q"),
            &data(&store, "f.w_k"),
            &data(&store, "f.w_v"),
            &data(&store, "f.w_o.weight"),
            &data(&store, "f.w_o.bias"),
        );
        for (got, want) in tape.value(out).data().iter().zip(&expect) {
            assert!((*got as f64 - want).abs() < 1e-5, "shape {case}: {got} vs {want}");
        }
        for row in tape.value(w).data().chunks(n2) {
            let s: f64 = row.iter().map(|v| *v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

fn mask_of(seq: &[f32], neuron: LifParams) -> Vec<f32> {
    let mut tape = Tape::inference();
    let m = tape.leaf(Tensor::new([seq.len(), 1, 1], seq.to_vec()).unwrap()).unwrap();
    let out = temporal_mask(&mut tape, &mut Ctx::eval(0), "m", m, seq.len(), neuron).unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn acceptance_08_temporal_mask_accumulates() {
    let seq = [0.6f32; T_STEPS];
    let stateful = mask_of(&seq, LifParams::binary());
    let fired = stateful.iter().position(|s| *s == 1.0).map(|i| i + 1);
    assert!(matches!(fired, Some(t) if t <= T_STEPS), "{stateful:?}");
    assert!(mask_of(&seq, LifParams::binary().stateless()).iter().all(|s| *s == 0.0));
}

fn replay(cfg: &ScenarioConfig, n: usize, seed: u64) -> Vec<(usize, u64, bool, Observation)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (mut env, _) = EnvState::reset(cfg).unwrap();
    let mut episode = 0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = r.random_range(0..Action::ALL.len());
        let o = env.step(a).unwrap();
        out.push((a, o.reward.to_bits(), o.done, o.obs));
        if o.done {
            episode += 1;
            env = EnvState::reset(&ScenarioConfig { seed: cfg.seed + episode, ..cfg.clone() }).unwrap().0;
        }
    }
    out
}

#[test]
fn acceptance_09_simulator_replay_and_rewards() {
    for cfg in [ScenarioConfig::highway(), ScenarioConfig::roundabout()] {
        assert!(replay(&cfg, 500, 109) == replay(&cfg, 500, 109));
    }
    assert_eq!(reward_highway(30.0, false), 1.0);
    assert_eq!(reward_highway(20.0, false), 0.0);
    // a * v_norm + b * collision + c * on_lane + d * lane_change
    let (a, b, c, d) = (0.2, -1.0, 0.5, 0.05);
    let mut r = rng(109);
    for _ in 0..1000 {
        let v = r.random_range(0.0..40.0);
        let (crash, change, on_lane) = (r.random(), r.random(), r.random());
        let vn = ((v - 20.0) / 10.0f64).clamp(0.0, 1.0);
        let expect = a * vn + b * crash as u8 as f64 + c * on_lane as u8 as f64 + d * change as u8 as f64;
        let got = reward_roundabout(v, crash, change, on_lane);
        assert!((got - expect).abs() < 1e-9, "{v} {crash} {change} {on_lane}: {got} vs {expect}");
    }
}

fn one_beam(n: usize, r: f32, v: f32) -> Tensor {
    let mut data = [1.0f32, 0.0].repeat(n);
    data[0] = r;
    data[1] = v;
    Tensor::new([n, 2], data).unwrap()
}

/// Rows and columns spanned by the cells holding exactly `value`.
fn extent(raster: &LidarRaster, value: f64) -> (usize, usize) {
    let cells: BTreeSet<(usize, usize)> = (0..raster.side)
        .flat_map(|r| (0..raster.side).map(move |c| (r, c)))
        .filter(|&(r, c)| raster.at(r, c) == value)
        .collect();
    let rows: BTreeSet<usize> = cells.iter().map(|c| c.0).collect();
    let cols: BTreeSet<usize> = cells.iter().map(|c| c.1).collect();
    (rows.len(), cols.len())
}

#[test]
fn acceptance_10_lidar_image() {
    let spec = LidarImageSpec::default();
    let (v, ego) = (-5.0f64, 25.0f64);
    let raster = lidar_raster(&one_beam(32, 0.5, v as f32), ego, 0.0, &spec).unwrap();
    let at = |d: f64| {
        let (r, c) = raster.cell_of(d, 0.0).unwrap();
        raster.at(r, c)
    };
    // The beam hits at 30 m; samples step 1 m outward from there.
    assert_eq!(at(30.0), v + ego);
    assert!((at(40.0) - 0.98f64.powi(10) * (v + ego)).abs() < 1e-6);

    let beams = one_beam(32, 1.0, 0.0);
    let r0 = lidar_raster(&beams, 20.0, 0.0, &spec).unwrap();
    let r90 = lidar_raster(&beams, 20.0, std::f64::consts::FRAC_PI_2, &spec).unwrap();
    let (rows0, cols0) = extent(&r0, 20.0);
    let (rows90, cols90) = extent(&r90, 20.0);
    // Heading 0 lays the 5 m length along the columns.
    assert_eq!((rows0, cols0), (2, 6));
    assert_eq!((rows90, cols90), (cols0, rows0));
}

fn benchmark_env() -> ScenarioConfig {
    ScenarioConfig { lanes: 2, n_vehicles: 8, ..ScenarioConfig::highway() }
}

fn benchmark_cfg() -> TrainConfig {
    TrainConfig { total_steps: 10_000, checkpoint_every: 10_000, eval_episodes: 20, seed: 11, ..TrainConfig::default() }
}

#[test]
fn acceptance_11_training_beats_random_and_spiking_runs_are_healthy() {
    let env = benchmark_env();
    let random = random_policy_metrics(&env, 20, 11).unwrap();
    println!("random: {random:?}");

    let dense = train(benchmark_cfg(), env.clone(), NetworkSpec::new(Variant::Dense), None).unwrap();
    let dense_eval = dense.last_eval.expect("final evaluation");
    println!("dense: {dense_eval:?}");

    let mut spiking = Vec::new();
    for v in [Variant::Ssa, Variant::Ttsa] {
        let out = train(benchmark_cfg(), env.clone(), NetworkSpec::new(v), None).unwrap();
        let eval = out.last_eval.expect("final evaluation");
        println!("{v:?}: {eval:?}");
        assert!(out.rows.iter().filter_map(|r| r.loss).all(f32::is_finite), "{v:?} loss diverged");
        let density = out.density.expect("spiking runs report density");
        for (layer, c) in density.layers() {
            println!("  {layer}: {:.6}", c.density());
            assert!(c.density() > 0.0 && c.density() < 1.0, "{v:?} {layer} density {}", c.density());
        }
        spiking.push(eval.avg_reward);
    }
    let order = if spiking[1] > spiking[0] { "ttsa > ssa" } else { "ssa >= ttsa" };
    println!("spiking order: {order}");

    assert!(
        dense_eval.avg_reward >= 1.5 * random.avg_reward,
        "dense {} vs random {}",
        dense_eval.avg_reward,
        random.avg_reward
    );
}

#[test]
fn acceptance_12_checkpoint_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let env = ScenarioConfig { episode_len: 10.0, ..benchmark_env() };
    let cfg = TrainConfig {
        batch_size: 8,
        warmup: 16,
        total_steps: 60,
        checkpoint_every: 60,
        eval_episodes: 3,
        replay_capacity: 200,
        seed: 12,
        ..TrainConfig::default()
    };
    for v in [Variant::Dense, Variant::Ttsa] {
        let run = dir.path().join(format!("{v:?}"));
        std::fs::create_dir_all(&run).unwrap();
        let out = train(cfg.clone(), env.clone(), NetworkSpec::new(v), Some(&run)).unwrap();
        let path = out.checkpoints.last().expect("a checkpoint");
        let ckpt = Checkpoint::load(path).unwrap();
        let again = run.join("again.mmdqn");
        ckpt.save(&again).unwrap();
        assert_eq!(std::fs::read(path).unwrap(), std::fs::read(&again).unwrap());

        let before = out.last_eval.expect("evaluation at the checkpoint");
        let after = evaluate_checkpoint(&Checkpoint::load(&again).unwrap(), &env, 3).unwrap();
        let bits = |m: &EvalMetrics| [m.avg_reward.to_bits(), m.crash_frequency.to_bits(), m.avg_speed.to_bits()];
        assert_eq!(bits(&before), bits(&after), "{v:?}");
    }
}
