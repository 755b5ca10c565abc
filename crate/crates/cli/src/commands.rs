use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use spiketrans_core::analysis::{energy_estimate, network_macs, prop2_demo, AnalysisReport, SpikeStats};
use spiketrans_core::dqn::{self, argmax, batch_input, derive_seed, evaluate, AgentObs, EvalMetrics, ObsEncoder};
use spiketrans_core::model::{Checkpoint, NetworkSpec, QNetwork};
use spiketrans_core::sim::{
    lidar_to_image, write_pgm, Action, EnvState, Observation, ScenarioConfig, TrajectoryLog, TrajectoryRow,
};
use spiketrans_core::Tensor;

use crate::cli::{value_name, AnalyzeArgs, DemoArgs, EvalArgs, ScenarioArg, TrainArgs};
use crate::config::{self, env_seed, Override, RunConfig};
use crate::manifest::ManifestWriter;

fn int(flag: &str, v: u64) -> Result<i64> {
    i64::try_from(v).with_context(|| format!("{flag} {v} does not fit a config integer"))
}

fn scenario_override(s: Option<ScenarioArg>) -> Option<Override> {
    s.map(|s| Override::new("--scenario", "env.scenario", value_name(&s)))
}

/// `--seed` when given, otherwise `SPIKETRANS_SEED` for keys the config
/// leaves unset.
fn seed_override(seed: Option<u64>, key: &'static str) -> Result<Option<Override>> {
    Ok(match (seed, env_seed()?) {
        (Some(s), _) => Some(Override::new("--seed", key, int("--seed", s)?)),
        (None, Some(s)) => Some(Override::fallback("SPIKETRANS_SEED", key, int("SPIKETRANS_SEED", s)?)),
        (None, None) => None,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut ov: Vec<Override> = scenario_override(a.scenario).into_iter().collect();
    if let Some(v) = a.variant {
        ov.push(Override::new("--variant", "model.variant", value_name(&v)));
    }
    if let Some(n) = a.steps {
        ov.push(Override::new("--steps", "train.total_steps", int("--steps", n)?));
    }
    ov.extend(seed_override(a.seed, "train.seed")?);
    let cfg = config::load(a.config.as_deref(), &ov)?;

    let writer = ManifestWriter::start(&a.out, "train", &cfg, vec![cfg.train.seed])?;
    let cfg_path = a.out.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()?)?;
    let RunConfig { train, env, model } = cfg;
    let out = dqn::train(train, env, model, Some(&a.out))?;

    let mut artifacts = vec![cfg_path, a.out.join("metrics.csv")];
    artifacts.extend(out.checkpoints.iter().cloned());
    if out.density.is_some() {
        artifacts.push(a.out.join("density.csv"));
    }
    let steps = out.rows.last().map_or(0, |r| r.step);
    match out.last_eval {
        Some(m) => println!("trained {steps} steps: {}", triple(&m)),
        None => println!("trained {steps} steps"),
    }
    writer.finish(artifacts)?;
    Ok(())
}

fn triple(m: &EvalMetrics) -> String {
    format!("avg_reward={} crash_frequency={} avg_speed={}", m.avg_reward, m.crash_frequency, m.avg_speed)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let mut ov: Vec<Override> = scenario_override(a.scenario).into_iter().collect();
    if a.seeds.is_empty() {
        ov.extend(seed_override(a.seed, "env.seed")?);
    }
    let env = config::load(a.config.as_deref(), &ov)?.env;
    let seeds = if a.seeds.is_empty() { vec![env.seed] } else { a.seeds.clone() };
    let writer = match &a.out {
        Some(dir) => {
            let snapshot = json!({ "checkpoint": a.ckpt, "episodes": a.episodes, "env": env, "model": ckpt.spec });
            Some(ManifestWriter::start(dir, "eval", &snapshot, seeds.clone())?)
        }
        None => None,
    };

    let net = QNetwork::from_checkpoint(&ckpt)?;
    // One worker per seed; each evaluation is deterministic on its own.
    let results: Vec<Result<EvalMetrics>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let (net, env) = (&net, ScenarioConfig { seed, ..env.clone() });
                s.spawn(move || Ok(evaluate(net, &env, a.episodes)?))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(seeds.len());
    for (seed, r) in seeds.iter().zip(results) {
        let m = r.with_context(|| format!("evaluating seed {seed}"))?;
        println!("seed={seed} {}", triple(&m));
        rows.push((*seed, m));
    }

    if let (Some(w), Some(dir)) = (writer, &a.out) {
        let path = dir.join("eval.csv");
        let mut csv = csv::Writer::from_path(&path)?;
        csv.write_record(["seed", "avg_reward", "crash_frequency", "avg_speed"])?;
        for (seed, m) in &rows {
            csv.write_record([seed.to_string(), m.avg_reward.to_string(), m.crash_frequency.to_string(), m.avg_speed.to_string()])?;
        }
        csv.flush()?;
        w.finish([path])?;
    }
    Ok(())
}

/// Agent states along seeded random-action rollouts, restarting finished
/// episodes.
fn rollout_states(spec: &NetworkSpec, env: &ScenarioConfig, n: usize, seed: u64) -> Result<Vec<AgentObs>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = ObsEncoder::new(spec, env.lidar_image_spec());
    let mut episode = 0;
    let reset = |episode: u64| EnvState::reset(&ScenarioConfig { seed: derive_seed(seed, episode), ..env.clone() });
    let (mut sim, obs) = reset(episode)?;
    let mut states = vec![enc.start(&obs)?];
    while states.len() < n {
        let out = sim.step(rng.random_range(0..Action::ALL.len()))?;
        if out.done {
            episode += 1;
            let (next, obs) = reset(episode)?;
            sim = next;
            states.push(enc.start(&obs)?);
        } else {
            states.push(enc.push(&out.obs)?);
        }
    }
    Ok(states)
}

fn measure_density(net: &QNetwork, env: &ScenarioConfig, n: usize, seed: u64) -> Result<SpikeStats> {
    if n == 0 {
        bail!("--states must be positive");
    }
    let states = rollout_states(net.spec(), env, n, seed)?;
    let refs: Vec<&AgentObs> = states.iter().collect();
    let (_, stats) = net.q_values_recorded(&batch_input(&refs)?, seed)?;
    Ok(stats)
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let ov: Vec<Override> = scenario_override(a.scenario).into_iter().collect();
    let env = ScenarioConfig { seed, ..config::load(a.config.as_deref(), &ov)?.env };
    let ckpt = a.ckpt.as_deref().map(load_checkpoint).transpose()?;
    let writer = match &a.out {
        Some(dir) => {
            let snapshot = json!({
                "checkpoint": a.ckpt, "density": a.density, "energy": a.energy, "prop2": a.prop2,
                "rate": a.rate, "states": a.states, "dim": a.dim, "trials": a.trials, "env": env,
            });
            Some(ManifestWriter::start(dir, "analyze", &snapshot, vec![seed])?)
        }
        None => None,
    };

    let mut report = AnalysisReport::default();
    if let Some(ck) = &ckpt {
        report.variant = Some(ck.spec.variant.name().to_string());
        let needs_density = a.density || (a.energy && a.rate.is_none());
        let measured = if needs_density {
            if !ck.spec.variant.is_spiking() {
                bail!(
                    "spike density needs a spiking checkpoint (ssa or ttsa), got {}; pass --rate for an energy estimate",
                    ck.spec.variant.name()
                );
            }
            Some(measure_density(&QNetwork::from_checkpoint(ck)?, &env, a.states, seed)?)
        } else {
            None
        };
        if a.energy {
            let rate = match (a.rate, &measured) {
                (Some(r), _) => r,
                (None, Some(m)) => m.aggregate().density(),
                (None, None) => unreachable!("density measured above"),
            };
            report.energy = Some(energy_estimate(network_macs(&ck.spec)?, rate, ck.spec.t_len)?);
        }
        if a.density {
            report.density = measured;
        }
    }
    if a.prop2 {
        report.prop2 = Some(prop2_demo(a.dim, a.trials, seed)?);
    }
    let text = report.to_text();
    print!("{text}");

    if let (Some(w), Some(dir)) = (writer, &a.out) {
        let mut artifacts = vec![dir.join("report.txt")];
        fs::write(&artifacts[0], &text)?;
        if let Some(d) = &report.density {
            let path = dir.join("density.csv");
            d.write_csv(fs::File::create(&path)?)?;
            artifacts.push(path);
        }
        w.finish(artifacts)?;
    }
    Ok(())
}

/// Beam file: CSV with header `distance,velocity`, one row per beam;
/// distance is a fraction of the sensor range, velocity is radial in m/s.
pub fn read_beams(path: &Path) -> Result<Tensor> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening beam file {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "distance" || &headers[1] != "velocity" {
        bail!("{}: expected header `distance,velocity`, got `{}`", path.display(), headers.iter().collect::<Vec<_>>().join(","));
    }
    let mut data = Vec::new();
    for (i, rec) in rdr.deserialize::<(f32, f32)>().enumerate() {
        let (d, v) = rec.with_context(|| format!("{}: beam {i}", path.display()))?;
        data.extend([d, v]);
    }
    if data.is_empty() {
        bail!("{}: no beams", path.display());
    }
    Ok(Tensor::new([data.len() / 2, 2], data)?)
}

/// First channel of the LiDAR image as a `[1, side, side]` plane.
fn lidar_plane(beams: &Tensor, speed: f64, heading: f64, env: &ScenarioConfig) -> Result<Tensor> {
    let img = lidar_to_image(beams, speed, heading, &env.lidar_image_spec())?;
    let side = img.shape()[1];
    Ok(Tensor::new([1, side, side], img.data()[..side * side].to_vec())?)
}

pub fn demo(a: &DemoArgs) -> Result<()> {
    let ov: Vec<Override> = scenario_override(a.scenario).into_iter().chain(seed_override(a.seed, "env.seed")?).collect();
    let env = config::load(a.config.as_deref(), &ov)?.env;
    let mode = if a.lidar_image { "lidar-image" } else { "env-rollout" };
    let snapshot = json!({
        "mode": mode, "beams": a.beams, "ego_speed": a.ego_speed, "heading": a.heading,
        "checkpoint": a.ckpt, "steps": a.steps, "dump_pgm": a.dump_pgm, "env": env,
    });
    let writer = ManifestWriter::start(&a.out, "demo", &snapshot, vec![env.seed])?;
    let artifacts = if a.lidar_image {
        let beams = read_beams(a.beams.as_deref().expect("clap requires --beams"))?;
        let path = a.out.join("lidar.pgm");
        let plane = lidar_plane(&beams, a.ego_speed, a.heading, &env)?;
        write_pgm(&path, &plane)?;
        println!("wrote {} ({}x{})", path.display(), plane.shape()[2], plane.shape()[1]);
        vec![path]
    } else {
        rollout(a, &env)?
    };
    writer.finish(artifacts)?;
    Ok(())
}

fn rollout(a: &DemoArgs, env: &ScenarioConfig) -> Result<Vec<PathBuf>> {
    let net = a.ckpt.as_deref().map(load_checkpoint).transpose()?.map(|c| QNetwork::from_checkpoint(&c)).transpose()?;
    let mut encoder = net.as_ref().map(|n| ObsEncoder::new(n.spec(), env.lidar_image_spec()));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(env.seed, 0xde70));
    let frames = a.out.join("frames");
    if a.dump_pgm {
        fs::create_dir_all(&frames)?;
    }
    let traj_path = a.out.join("trajectory.csv");
    let mut log = TrajectoryLog::create(&traj_path)?;
    let mut artifacts = vec![traj_path];
    let mut dump = |step: u64, obs: &Observation| -> Result<()> {
        if a.dump_pgm {
            let bev = frames.join(format!("bev_{step:04}.pgm"));
            let lidar = frames.join(format!("lidar_{step:04}.pgm"));
            write_pgm(&bev, &obs.bev)?;
            write_pgm(&lidar, &lidar_plane(&obs.lidar_beams, obs.ego_speed, obs.ego_heading, env)?)?;
            artifacts.extend([bev, lidar]);
        }
        Ok(())
    };

    let (mut sim, mut obs) = EnvState::reset(env)?;
    dump(0, &obs)?;
    let mut total = 0.0;
    for step in 0..a.steps {
        let action = match (&net, encoder.as_mut()) {
            (Some(net), Some(enc)) => {
                let state = if step == 0 { enc.start(&obs)? } else { enc.push(&obs)? };
                argmax(net.q_values(&batch_input(&[&state])?, derive_seed(env.seed, step))?.data())
            }
            _ => rng.random_range(0..Action::ALL.len()),
        };
        let out = sim.step(action)?;
        total += out.reward;
        log.push(&TrajectoryRow {
            step: step + 1,
            action,
            reward: out.reward,
            crashed: out.info.crashed,
            ego_speed: out.info.ego_speed,
            ego_x: sim.ego().x,
            ego_y: sim.ego().y,
        })?;
        dump(step + 1, &out.obs)?;
        obs = out.obs;
        if out.done {
            break;
        }
    }
    log.finish()?;
    println!("rollout: {} decisions, return {total}", sim.steps());
    Ok(artifacts)
}
