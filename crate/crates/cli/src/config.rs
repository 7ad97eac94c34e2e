use std::path::Path;

use anyhow::{bail, Context};
use dpmerge_core::{Accountant, DpGuarantee, DpSgdSpec, MechanismSpec, OrderGrid};
use dpmerge_experiments::dpsgd::DpsgdSimConfig;
use dpmerge_experiments::mean_est::MeanEstConfig;
use dpmerge_experiments::MergeRule;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// A problem with the configuration itself, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub mechanisms: Vec<MechanismConfig>,
    pub target: Option<TargetConfig>,
    pub accountant: Option<Accountant>,
    pub merge: Option<MergeRule>,
    pub resolution: Option<f64>,
    pub orders: Option<Vec<f64>>,
    pub pld_spacing: Option<f64>,
    pub enumeration_cap: Option<u64>,
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub mean_est: Option<MeanEstConfig>,
    pub dpsgd_sim: Option<DpsgdSimConfig>,
    pub compare: Option<CompareConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            mechanisms: Vec::new(),
            target: None,
            accountant: None,
            merge: None,
            resolution: None,
            orders: None,
            pld_spacing: None,
            enumeration_cap: None,
            seed: None,
            output: None,
            mean_est: None,
            dpsgd_sim: None,
            compare: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub eps: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub t: f64,
    pub n: u32,
    pub delta: f64,
    /// Defaults to `delta / 10`.
    pub delta0: Option<f64>,
}

/// A value that is either constant over all steps or given per step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStep {
    Constant(f64),
    Steps(Vec<f64>),
}

impl PerStep {
    fn expand(&self, name: &str, steps: usize) -> Result<Vec<f64>, ConfigError> {
        match self {
            PerStep::Constant(v) => Ok(vec![*v; steps]),
            PerStep::Steps(v) if v.len() == steps => Ok(v.clone()),
            PerStep::Steps(v) => Err(ConfigError(format!(
                "`{name}` has {} entries but `steps` is {steps}",
                v.len()
            ))),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismConfig {
    Gaussian {
        sensitivity: f64,
        noise: f64,
    },
    DpSgd {
        steps: usize,
        sampling_rate: PerStep,
        clip: PerStep,
        noise_multiplier: PerStep,
        learning_rate: PerStep,
        #[serde(default = "yes")]
        independent_noise: bool,
    },
}

impl MechanismConfig {
    pub fn to_spec(&self) -> anyhow::Result<MechanismSpec> {
        Ok(match self {
            MechanismConfig::Gaussian { sensitivity, noise } => MechanismSpec::gaussian(*sensitivity, *noise)?,
            MechanismConfig::DpSgd {
                steps,
                sampling_rate,
                clip,
                noise_multiplier,
                learning_rate,
                independent_noise,
            } => MechanismSpec::DpSgd(DpSgdSpec::new(
                sampling_rate.expand("sampling_rate", *steps)?,
                clip.expand("clip", *steps)?,
                noise_multiplier.expand("noise_multiplier", *steps)?,
                learning_rate.expand("learning_rate", *steps)?,
                *independent_noise,
            )?),
        })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        if config.schema_version != SCHEMA_VERSION {
            bail!(ConfigError(format!(
                "unsupported `schema_version` {} (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        Ok(config)
    }

    pub fn mechanism_specs(&self) -> anyhow::Result<Vec<MechanismSpec>> {
        if self.mechanisms.is_empty() {
            bail!(ConfigError("`mechanisms` must list at least one mechanism".into()));
        }
        self.mechanisms.iter().map(MechanismConfig::to_spec).collect()
    }

    pub fn target(&self) -> anyhow::Result<DpGuarantee> {
        let t = self
            .target
            .ok_or_else(|| ConfigError("`target` is required for this command".into()))?;
        Ok(DpGuarantee::new(t.eps, t.delta)?)
    }

    pub fn grid(&self) -> anyhow::Result<Option<OrderGrid>> {
        Ok(match &self.orders {
            Some(o) => Some(OrderGrid::new(o.clone())?),
            None => None,
        })
    }
}
