//! The training loop and greedy evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, batch_input, derive_seed, epsilon_greedy, td_loss_from_q, td_targets};
use super::{AgentObs, ObsEncoder, ReplayBuffer, TrainConfig, Transition};
use crate::analysis::SpikeStats;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, NetworkSpec, QNetwork};
use crate::nn::Ctx;
use crate::sim::{Action, EnvState, Observation, ScenarioConfig, BEV_SIZE};
use crate::tensor::{Adam, Tape};

const TRAIN_EPISODES: u64 = 0x5452_4149_4e00_0000;
const EVAL_EPISODES: u64 = 0x4556_414c_0000_0000;
const RANDOM_POLICY: u64 = 0x5241_4e44_0000_0000;
/// States fed through the network for the density report.
const DENSITY_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean undiscounted return per episode.
    pub avg_reward: f64,
    /// Crashes per decision step.
    pub crash_frequency: f64,
    /// Mean ego speed over all decision steps.
    pub avg_speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: Option<f32>,
    pub epsilon: f64,
    pub eval: Option<EvalMetrics>,
}

impl MetricsRow {
    fn record(&self) -> [String; 6] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.step.to_string(),
            self.loss.map(|l| l.to_string()).unwrap_or_default(),
            self.epsilon.to_string(),
            opt(self.eval.map(|e| e.avg_reward)),
            opt(self.eval.map(|e| e.crash_frequency)),
            opt(self.eval.map(|e| e.avg_speed)),
        ]
    }
}

pub const METRICS_HEADER: [&str; 6] = [
    "step",
    "loss",
    "epsilon",
    "eval_avg_reward",
    "eval_crash_freq",
    "eval_avg_speed",
];

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<PathBuf>,
    /// Latest greedy evaluation, if any ran.
    pub last_eval: Option<EvalMetrics>,
    /// Spike density over recent replay states (spiking variants only).
    pub density: Option<SpikeStats>,
}

/// Single-threaded DQN loop; every random draw comes from seeds derived
/// from the training seed, so a run is reproducible bit for bit.
pub struct Trainer {
    cfg: TrainConfig,
    env_cfg: ScenarioConfig,
    online: QNetwork,
    target: QNetwork,
    adam: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    encoder: ObsEncoder,
    env: EnvState,
    state: Arc<AgentObs>,
    episode: u64,
    step: u64,
    run_dir: Option<PathBuf>,
    metrics: Option<csv::Writer<BufWriter<File>>>,
    checkpoints: Vec<PathBuf>,
    last_eval: Option<EvalMetrics>,
}

fn env_for_episode(base: &ScenarioConfig, seed: u64) -> ScenarioConfig {
    ScenarioConfig { seed, ..base.clone() }
}

fn check_compat(spec: &NetworkSpec) -> Result<()> {
    if spec.input_size != BEV_SIZE || spec.n_actions != Action::ALL.len() {
        return Err(Error::Config(format!(
            "network expects {0}x{0} inputs and {1} actions; the simulator provides {BEV_SIZE}x{BEV_SIZE} and {2}",
            spec.input_size,
            spec.n_actions,
            Action::ALL.len()
        )));
    }
    Ok(())
}

impl Trainer {
    /// `run_dir`, when given, receives `metrics.csv` and the checkpoints.
    pub fn new(cfg: TrainConfig, env_cfg: ScenarioConfig, spec: NetworkSpec, run_dir: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        env_cfg.validate()?;
        check_compat(&spec)?;
        let online = QNetwork::new(spec.clone(), derive_seed(cfg.seed, 1))?;
        let target = online.clone();
        let replay = ReplayBuffer::new(cfg.replay_capacity, derive_seed(cfg.seed, 2))?;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));
        let mut encoder = ObsEncoder::new(&spec, env_cfg.lidar_image_spec());
        let (env, obs) = EnvState::reset(&env_for_episode(&env_cfg, derive_seed(cfg.seed, TRAIN_EPISODES)))?;
        let state = Arc::new(encoder.start(&obs)?);
        let metrics = match run_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let mut w = csv::WriterBuilder::new()
                    .has_headers(false)
                    .from_writer(BufWriter::new(File::create(dir.join("metrics.csv"))?));
                w.write_record(METRICS_HEADER)?;
                w.flush()?;
                Some(w)
            }
            None => None,
        };
        Ok(Trainer {
            adam: Adam::new(cfg.lr as f32),
            cfg,
            env_cfg,
            online,
            target,
            replay,
            rng,
            encoder,
            env,
            state,
            episode: 0,
            step: 0,
            run_dir: run_dir.map(Path::to_path_buf),
            metrics,
            checkpoints: Vec::new(),
            last_eval: None,
        })
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// One environment decision, at most one gradient update, then the
    /// target-sync, checkpoint and evaluation schedules.
    pub fn step(&mut self) -> Result<MetricsRow> {
        let eps = self.cfg.epsilon(self.step);
        let act_seed: u64 = self.rng.random();
        let online = &self.online;
        let state = &self.state;
        let action = epsilon_greedy(Action::ALL.len(), eps, &mut self.rng, || {
            let q = online.q_values(&batch_input(&[state.as_ref()])?, act_seed)?;
            Ok(q.data().to_vec())
        })?;
        let out = self.env.step(action)?;
        let next = Arc::new(self.encoder.push(&out.obs)?);
        self.replay.push(Transition {
            obs: self.state.clone(),
            action,
            reward: out.reward as f32,
            next_obs: next.clone(),
            done: out.done,
        })?;
        self.state = next;
        if out.done {
            self.episode += 1;
            let seed = derive_seed(self.cfg.seed, TRAIN_EPISODES + self.episode);
            let (env, obs) = EnvState::reset(&env_for_episode(&self.env_cfg, seed))?;
            self.env = env;
            self.state = Arc::new(self.encoder.start(&obs)?);
        }
        self.step += 1;

        let loss = if self.replay.len() >= self.cfg.warmup.max(self.cfg.batch_size) {
            Some(self.update()?)
        } else {
            None
        };
        if self.step % self.cfg.target_update == 0 {
            self.target.params.copy_from(&self.online.params)?;
        }
        let eval = if self.step % self.cfg.checkpoint_every == 0 || self.step == self.cfg.total_steps {
            self.checkpoint()?;
            let m = evaluate(&self.online, &self.env_cfg, self.cfg.eval_episodes)?;
            self.last_eval = Some(m);
            Some(m)
        } else {
            None
        };
        let row = MetricsRow {
            step: self.step,
            loss,
            epsilon: eps,
            eval,
        };
        if let Some(w) = self.metrics.as_mut() {
            w.write_record(row.record())?;
            w.flush()?;
        }
        Ok(row)
    }

    fn update(&mut self) -> Result<f32> {
        let batch: Vec<Transition> = self.replay.sample(self.cfg.batch_size)?.into_iter().cloned().collect();
        let target_seed: u64 = self.rng.random();
        let online_seed: u64 = self.rng.random();
        let next: Vec<&AgentObs> = batch.iter().map(|t| t.next_obs.as_ref()).collect();
        let q_next = self.target.q_values(&batch_input(&next)?, target_seed)?;
        let n_act = q_next.shape()[1];
        let next_max: Vec<f32> = q_next.data().chunks_exact(n_act).map(|r| r[argmax(r)]).collect();
        let rewards: Vec<f32> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let targets = td_targets(&rewards, &dones, &next_max, self.cfg.gamma);

        let obs: Vec<&AgentObs> = batch.iter().map(|t| t.obs.as_ref()).collect();
        let input = batch_input(&obs)?;
        let mut tape = Tape::new();
        let p = self.online.params.bind(&mut tape)?;
        let mut ctx = Ctx::train(online_seed);
        let q = self.online.forward(&mut tape, &p, &mut ctx, &input)?;
        let loss = td_loss_from_q(&mut tape, q, &actions, &targets)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "td_loss" });
        }
        let grads = tape.backward(loss)?;
        self.online.params.apply_adam(&mut self.adam, &p, &grads)?;
        ctx.commit_batch_norm(&mut self.online.params, self.cfg.bn_momentum as f32);
        Ok(value)
    }

    fn checkpoint(&mut self) -> Result<()> {
        if let Some(dir) = &self.run_dir {
            let path = dir.join(format!("ckpt_{}.mmdqn", self.step));
            self.online.to_checkpoint(self.step, self.cfg.seed).save(&path)?;
            self.checkpoints.push(path);
        }
        Ok(())
    }

    /// Spike density of the online network over the newest replay states.
    pub fn density_report(&self) -> Result<Option<SpikeStats>> {
        if !self.online.spec().variant.is_spiking() || self.replay.is_empty() {
            return Ok(None);
        }
        let n = self.replay.len();
        let states: Vec<&AgentObs> = self.replay.iter().skip(n.saturating_sub(DENSITY_BATCH)).map(|t| t.obs.as_ref()).collect();
        let (_, stats) = self.online.q_values_recorded(&batch_input(&states)?, derive_seed(self.cfg.seed, 4))?;
        Ok(Some(stats))
    }

    /// Runs the remaining steps and writes the density report for spiking
    /// variants.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let mut rows = Vec::with_capacity(self.cfg.total_steps as usize);
        while self.step < self.cfg.total_steps {
            rows.push(self.step()?);
        }
        let density = self.density_report()?;
        if let (Some(d), Some(dir)) = (&density, &self.run_dir) {
            d.write_csv(File::create(dir.join("density.csv"))?)?;
        }
        if let Some(mut w) = self.metrics.take() {
            w.flush()?;
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
        }
        Ok(TrainOutcome {
            net: self.online,
            rows,
            checkpoints: self.checkpoints,
            last_eval: self.last_eval,
            density,
        })
    }
}

pub fn train(cfg: TrainConfig, env_cfg: ScenarioConfig, spec: NetworkSpec, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    Trainer::new(cfg, env_cfg, spec, run_dir)?.run()
}

/// Environment seed of evaluation episode `ep`.
pub fn eval_episode_seed(env_cfg: &ScenarioConfig, ep: usize) -> u64 {
    derive_seed(env_cfg.seed, EVAL_EPISODES + ep as u64)
}

/// Runs `n_episodes` on the evaluation seeds of `env_cfg`. The policy sees
/// each observation with its episode index and decision step.
pub fn evaluate_policy(
    env_cfg: &ScenarioConfig,
    n_episodes: usize,
    mut policy: impl FnMut(&Observation, usize, u64) -> Result<usize>,
) -> Result<EvalMetrics> {
    if n_episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    let (mut total_reward, mut crashes, mut steps, mut speed) = (0.0f64, 0u64, 0u64, 0.0f64);
    for ep in 0..n_episodes {
        let cfg = env_for_episode(env_cfg, eval_episode_seed(env_cfg, ep));
        let (mut env, mut obs) = EnvState::reset(&cfg)?;
        loop {
            let a = policy(&obs, ep, env.steps())?;
            let out = env.step(a)?;
            total_reward += out.reward;
            crashes += out.info.crashed as u64;
            speed += out.info.ego_speed;
            steps += 1;
            obs = out.obs;
            if out.done {
                break;
            }
        }
    }
    Ok(EvalMetrics {
        avg_reward: total_reward / n_episodes as f64,
        crash_frequency: crashes as f64 / steps as f64,
        avg_speed: speed / steps as f64,
    })
}

/// Greedy evaluation. Spiking encoders are seeded from the episode and step
/// so the result depends only on the network and `env_cfg`.
pub fn evaluate(net: &QNetwork, env_cfg: &ScenarioConfig, n_episodes: usize) -> Result<EvalMetrics> {
    check_compat(net.spec())?;
    let mut encoder = ObsEncoder::new(net.spec(), env_cfg.lidar_image_spec());
    evaluate_policy(env_cfg, n_episodes, |obs, ep, step| {
        let state = if step == 0 { encoder.start(obs)? } else { encoder.push(obs)? };
        let seed = derive_seed(EVAL_EPISODES ^ ep as u64, step);
        let q = net.q_values(&batch_input(&[&state])?, seed)?;
        Ok(argmax(q.data()))
    })
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, env_cfg: &ScenarioConfig, n_episodes: usize) -> Result<EvalMetrics> {
    check_compat(&ckpt.spec)?;
    evaluate(&QNetwork::from_checkpoint(ckpt)?, env_cfg, n_episodes)
}

/// Uniform random actions on the same evaluation seeds as [`evaluate`].
pub fn random_policy_metrics(env_cfg: &ScenarioConfig, n_episodes: usize, seed: u64) -> Result<EvalMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, RANDOM_POLICY));
    evaluate_policy(env_cfg, n_episodes, |_, _, _| Ok(rng.random_range(0..Action::ALL.len())))
}
