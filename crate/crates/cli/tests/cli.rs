use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
[train]
batch_size = 4
warmup = 8
replay_capacity = 64
eval_episodes = 1
checkpoint_every = 12

[env]
n_vehicles = 3
episode_len = 8.0
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spiketrans"));
    c.env_remove("SPIKETRANS_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status, stdout(&o), stderr(&o));
    o
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Trains a 12-step run and returns its checkpoint.
fn quick_checkpoint(dir: &Path, variant: &str) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join(format!("run_{variant}"));
    ok(run(&["train", "--variant", variant, "--steps", "12", "--seed", "3", "--config", p(&cfg), "--out", p(&out)]));
    out.join("ckpt_12.mmdqn")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn zero_steps_writes_manifest_and_empty_metrics() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    ok(run(&["train", "--steps", "0", "--out", p(&out)]));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1, "{metrics}");
    assert!(metrics.starts_with("step,loss,epsilon"));
    let m = manifest(&out);
    assert_eq!(m["status"], "complete");
    assert_eq!(m["config"]["train"]["total_steps"], 0);
    assert!(m["timings"]["wall_seconds"].is_number());
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert_eq!(artifacts, ["config.toml", "metrics.csv"]);
}

#[test]
fn ttsa_on_roundabout_is_accepted() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    ok(run(&[
        "train", "--variant", "ttsa", "--scenario", "roundabout", "--steps", "2", "--config", p(&cfg), "--out", p(&out),
    ]));
    let m = manifest(&out);
    assert_eq!(m["config"]["env"]["scenario"], "roundabout");
    assert_eq!(m["config"]["model"]["variant"], "ttsa");
    assert!(out.join("ckpt_2.mmdqn").exists());
    assert!(out.join("density.csv").exists());
}

#[test]
fn unknown_scenario_exits_nonzero_with_usage() {
    let dir = TempDir::new().unwrap();
    let o = run(&["train", "--scenario", "motorway", "--out", p(dir.path())]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("motorway") && err.contains("Usage"), "{err}");
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn flag_conflicting_with_config_names_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\ntotal_steps = 5\nseed = 2\n").unwrap();
    let out = dir.path().join("run");
    let o = run(&["train", "--steps", "7", "--config", p(&cfg), "--out", p(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train.total_steps"), "{}", stderr(&o));
    let o = run(&["train", "--seed", "9", "--steps", "5", "--config", p(&cfg), "--out", p(&out)]);
    assert!(stderr(&o).contains("train.seed"), "{}", stderr(&o));
    // The environment fallback never overrides the file, only fills gaps.
    let seeded = dir.path().join("seeded.toml");
    std::fs::write(&seeded, "[train]\nseed = 2\n").unwrap();
    let with_env = |cfg: &[&str], out: &Path| {
        let mut args = vec!["train", "--steps", "0", "--out", p(out)];
        args.extend_from_slice(cfg);
        ok(bin().args(args).env("SPIKETRANS_SEED", "9").output().unwrap());
        manifest(out)["seeds"].clone()
    };
    assert_eq!(with_env(&["--config", p(&seeded)], &dir.path().join("a")), serde_json::json!([2]));
    assert_eq!(with_env(&[], &dir.path().join("b")), serde_json::json!([9]));
}

#[test]
fn missing_checkpoint_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.mmdqn");
    let o = run(&["eval", "--ckpt", p(&missing), "--episodes", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope.mmdqn"));
    let o = run(&["analyze", "--ckpt", p(&missing), "--density"]);
    assert!(!o.status.success());
}

#[test]
fn eval_is_reproducible_and_seeds_fan_out() {
    let dir = TempDir::new().unwrap();
    let ck = quick_checkpoint(dir.path(), "dense");
    let cfg = small_config(dir.path());
    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--ckpt", p(&ck), "--episodes", "2", "--config", p(&cfg)];
        args.extend_from_slice(extra);
        stdout(&ok(run(&args)))
    };
    let one = eval(&["--seed", "5"]);
    assert!(one.starts_with("seed=5 avg_reward="), "{one}");
    assert_eq!(one, eval(&["--seed", "5"]));
    let fan = eval(&["--seeds", "4,5,6"]);
    let lines: Vec<&str> = fan.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], one.trim_end());
    assert_eq!(lines[0], eval(&["--seed", "4"]).trim_end());
    let by_env = bin()
        .args(["eval", "--ckpt", p(&ck), "--episodes", "2", "--config", p(&cfg)])
        .env("SPIKETRANS_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(stdout(&ok(by_env)), one);

    let out = dir.path().join("eval");
    eval(&["--seeds", "4,5", "--out", p(&out)]);
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(manifest(&out)["seeds"], serde_json::json!([4, 5]));
}

#[test]
fn analyze_prop2_reports_full_violation() {
    let o = ok(run(&["analyze", "--prop2"]));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "prop2.violation_rate: 1.0"), "{text}");
    assert!(text.lines().any(|l| l == "prop2.dot_positive_rate: 1.0"), "{text}");
}

#[test]
fn analyze_needs_a_report_flag() {
    let o = run(&["analyze"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn analyze_density_and_energy_of_spiking_checkpoint() {
    let dir = TempDir::new().unwrap();
    let ck = quick_checkpoint(dir.path(), "ssa");
    let out = dir.path().join("analysis");
    let o = ok(run(&["analyze", "--ckpt", p(&ck), "--density", "--energy", "--states", "8", "--out", p(&out)]));
    let text = stdout(&o);
    assert!(text.contains("variant: ssa"));
    assert!(text.contains("density.mean: "));
    assert!(text.contains("energy.ann_pj_per_op: 4.6000"));
    assert_eq!(std::fs::read_to_string(out.join("report.txt")).unwrap(), text);
    assert!(out.join("density.csv").exists());

    let o = ok(run(&["analyze", "--ckpt", p(&ck), "--energy", "--rate", "0.17"]));
    assert!(stdout(&o).contains("energy.snn_pj_per_op: 0.7650"), "{}", stdout(&o));

    let dense = quick_checkpoint(dir.path(), "dense");
    let o = run(&["analyze", "--ckpt", p(&dense), "--density"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("spiking"));
}

#[test]
fn lidar_image_demo_writes_a_120_square_pgm() {
    let dir = TempDir::new().unwrap();
    let beams = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/beams.csv");
    ok(run(&["demo", "--lidar-image", "--beams", p(&beams), "--ego-speed", "25", "--out", p(dir.path())]));
    let bytes = std::fs::read(dir.path().join("lidar.pgm")).unwrap();
    let header = b"P5\n120 120\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 120 * 120);
    assert!(bytes[header.len()..].iter().any(|&b| b > 0));
    assert_eq!(manifest(dir.path())["artifacts"], serde_json::json!(["lidar.pgm"]));
}

#[test]
fn lidar_image_demo_rejects_malformed_beams() {
    let dir = TempDir::new().unwrap();
    let beams = dir.path().join("bad.csv");
    std::fs::write(&beams, "range,speed\n0.5,1\n").unwrap();
    let o = run(&["demo", "--lidar-image", "--beams", p(&beams), "--out", p(&dir.path().join("o"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("distance,velocity"));
}

#[test]
fn env_rollout_dumps_rasters_and_trajectory() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("demo");
    ok(run(&["demo", "--env-rollout", "--dump-pgm", "--steps", "3", "--seed", "1", "--out", p(&out)]));
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,action,reward,crashed,ego_speed,ego_x,ego_y\n"));
    let rows = traj.lines().count() - 1;
    assert!((1..=3).contains(&rows));
    for step in 0..=rows {
        let bev = std::fs::read(out.join(format!("frames/bev_{step:04}.pgm"))).unwrap();
        assert!(bev.starts_with(b"P5\n64 64\n255\n"));
        let lidar = std::fs::read(out.join(format!("frames/lidar_{step:04}.pgm"))).unwrap();
        assert!(lidar.starts_with(b"P5\n120 120\n255\n"));
    }
    let again = dir.path().join("demo2");
    ok(run(&["demo", "--env-rollout", "--steps", "3", "--seed", "1", "--out", p(&again)]));
    assert_eq!(std::fs::read_to_string(again.join("trajectory.csv")).unwrap(), traj);
}

#[test]
fn rerun_into_fresh_directory_is_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let train = |name: &str| {
        let out = dir.path().join(name);
        ok(run(&["train", "--steps", "14", "--seed", "8", "--config", p(&cfg), "--out", p(&out)]));
        out
    };
    let (a, b) = (train("a"), train("b"));
    for f in ["metrics.csv", "config.toml", "ckpt_12.mmdqn", "ckpt_14.mmdqn"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["run_id"], mb["run_id"]);
    assert_eq!(ma["artifacts"], mb["artifacts"]);
}
