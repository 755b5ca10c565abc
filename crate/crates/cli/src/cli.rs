use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "spiketrans", version, about = "Multi-modal spiking DQN: train, evaluate, analyze, demo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a Q-network and write metrics, checkpoints and a manifest.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint; prints the metric triple per seed.
    Eval(EvalArgs),
    /// Spike density, energy estimate and the binary-spike information-loss demo.
    Analyze(AnalyzeArgs),
    /// LiDAR image conversion or an environment rollout with raster dumps.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Highway,
    Roundabout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Dense,
    Ssa,
    Ttsa,
    Unimodal4,
    Unimodal1,
}

/// Lower-case name as accepted on the command line and in config files.
pub fn value_name(v: &impl ValueEnum) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Environment steps; 0 writes the manifest and an empty metrics file.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Training seed; falls back to SPIKETRANS_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with [train], [env] and [model] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// Environment seed; falls back to SPIKETRANS_SEED.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated environment seeds, evaluated on parallel threads.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write eval.csv and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("report").required(true).multiple(true).args(["density", "energy", "prop2"])))]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Per-layer spike density over rollout states.
    #[arg(long, requires = "ckpt")]
    pub density: bool,
    /// ANN vs SNN energy per operation.
    #[arg(long, requires = "ckpt")]
    pub energy: bool,
    /// Random all-negative (q, k) pairs through binary and ternary neurons.
    #[arg(long)]
    pub prop2: bool,
    /// Spike density for the energy estimate instead of the measured one.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Rollout states used for the density measurement.
    #[arg(long, default_value_t = 64)]
    pub states: usize,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Falls back to SPIKETRANS_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write report.txt (and density.csv) and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["lidar_image", "env_rollout"])))]
pub struct DemoArgs {
    /// Convert a beam file (CSV `distance,velocity`) to a LiDAR image PGM.
    #[arg(long, requires = "beams")]
    pub lidar_image: bool,
    /// Roll out a policy and log the trajectory.
    #[arg(long)]
    pub env_rollout: bool,
    /// Write BEV and LiDAR image PGMs for every rollout step.
    #[arg(long, requires = "env_rollout")]
    pub dump_pgm: bool,
    #[arg(long)]
    pub beams: Option<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    pub ego_speed: f64,
    /// Ego heading in radians.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub heading: f64,
    /// Greedy policy from this checkpoint; seeded random actions otherwise.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pub steps: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
