//! Run configuration: `[train]`, `[env]` and `[model]` tables layered over
//! the built-in defaults, then command-line overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use spiketrans_core::dqn::TrainConfig;
use spiketrans_core::model::{NetworkSpec, Variant};
use spiketrans_core::sim::ScenarioConfig;
use spiketrans_core::tensor::LifParams;
use toml::{Table, Value};

const SECTIONS: [&str; 3] = ["train", "env", "model"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub env: ScenarioConfig,
    pub model: NetworkSpec,
}

/// A command-line value for a dotted config key such as `train.seed`.
#[derive(Clone, Debug)]
pub struct Override {
    pub flag: &'static str,
    pub key: &'static str,
    pub value: Value,
    /// Fallbacks fill a key the file leaves unset and never conflict.
    pub fallback: bool,
}

impl Override {
    pub fn new(flag: &'static str, key: &'static str, value: impl Into<Value>) -> Self {
        Override { flag, key, value: value.into(), fallback: false }
    }

    pub fn fallback(flag: &'static str, key: &'static str, value: impl Into<Value>) -> Self {
        Override { fallback: true, ..Override::new(flag, key, value) }
    }
}

/// Reads the TOML file (when given) and applies `overrides`. A flag whose
/// value differs from the file is an error naming the key.
pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<RunConfig> {
    let (mut user, source) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let table: Table = text.parse().with_context(|| format!("parsing config {}", p.display()))?;
            (table, p.display().to_string())
        }
        None => (Table::new(), String::new()),
    };
    for (k, v) in &user {
        if !SECTIONS.contains(&k.as_str()) {
            bail!("unknown config section `{k}` (expected one of {})", SECTIONS.join(", "));
        }
        if !v.is_table() {
            bail!("config key `{k}` must be a [{k}] section");
        }
    }
    for o in overrides {
        let (section, key) = o.key.split_once('.').expect("dotted override key");
        let table = user
            .entry(section)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("sections are tables");
        match table.get(key) {
            Some(_) if o.fallback => {}
            Some(existing) if *existing != o.value => {
                bail!("{} {} conflicts with `{} = {}` in {}", o.flag, o.value, o.key, existing, source);
            }
            _ => {
                table.insert(key.to_string(), o.value.clone());
            }
        }
    }
    let section = |name: &str| user.get(name).and_then(Value::as_table).cloned().unwrap_or_default();
    let train: TrainConfig = section("train").try_into().map_err(|e| anyhow!("[train] {e}"))?;
    train.validate()?;
    let env = ScenarioConfig::from_table(&section("env")).map_err(|e| anyhow!("[env] {e}"))?;
    let model = network_spec(section("model"))?;
    Ok(RunConfig { train, env, model })
}

/// `[model]` keys mirror [`NetworkSpec`]; `tau_m` sets the decay of every
/// neuron as `1 - 1/tau_m`.
fn network_spec(mut user: Table) -> Result<NetworkSpec> {
    let variant: Variant = match user.get("variant") {
        Some(Value::String(s)) => s.parse()?,
        Some(other) => bail!("[model] `variant` must be a string, found {other}"),
        None => Variant::Dense,
    };
    let tau = user.remove("tau_m");
    let mut spec = NetworkSpec::new(variant);
    if let Some(tau) = tau {
        let tau = tau.as_float().or_else(|| tau.as_integer().map(|i| i as f64));
        let tau = tau.ok_or_else(|| anyhow!("[model] `tau_m` must be a number"))?;
        let beta = LifParams::beta_from_tau(tau as f32)?;
        spec.neuron.beta = beta;
        spec.ternary.beta = beta;
    }
    let mut base = Table::try_from(&spec).context("serializing model defaults")?;
    check_known(&base, &user, "model")?;
    merge(&mut base, &user);
    let spec: NetworkSpec = base.try_into().map_err(|e| anyhow!("[model] {e}"))?;
    spec.validate()?;
    Ok(spec)
}

fn check_known(base: &Table, user: &Table, path: &str) -> Result<()> {
    for (k, v) in user {
        match (base.get(k), v) {
            (None, _) => bail!("unknown config key `{path}.{k}`"),
            (Some(Value::Table(b)), Value::Table(u)) => check_known(b, u, &format!("{path}.{k}"))?,
            _ => {}
        }
    }
    Ok(())
}

fn merge(base: &mut Table, user: &Table) {
    for (k, v) in user {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing resolved config")
    }
}

/// `SPIKETRANS_SEED`, when set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var("SPIKETRANS_SEED") {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("SPIKETRANS_SEED must be an integer, got `{s}`"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("SPIKETRANS_SEED: {e}"),
    }
}
