//! Run configuration: one JSON file covering task, network, training, and
//! evaluation, with dotted-path `--set key=value` overrides for sweeps.
//! Unknown keys are rejected with the offending field path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::net::NetConfig;
use crate::tasks::{GmmTaskSpec, PointMassConfig};
use crate::trainer::TrainConfig;

/// Which desk-scale task to generate, train on, and evaluate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Gmm {
        preset: GmmPreset,
        /// Training pairs to generate.
        n_train: usize,
        /// Chunk horizon for the preset.
        horizon: usize,
        /// Per-mode standard deviation.
        spread: f64,
        seed: u64,
    },
    PointMass {
        env: PointMassConfig,
        n_demos: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmPreset {
    TwoAtom1d,
    EightMode,
}

impl TaskConfig {
    pub fn task_id(&self) -> &'static str {
        match self {
            TaskConfig::Gmm { .. } => "gmm",
            TaskConfig::PointMass { .. } => "pointmass",
        }
    }

    pub fn gmm_spec(&self) -> Option<GmmTaskSpec> {
        match self {
            TaskConfig::Gmm { preset, horizon, spread, .. } => Some(match preset {
                GmmPreset::TwoAtom1d => GmmTaskSpec::two_atom_1d(),
                GmmPreset::EightMode => GmmTaskSpec::eight_mode_conditional(*horizon, *spread),
            }),
            TaskConfig::PointMass { .. } => None,
        }
    }

    /// (d_o, d_a, horizon) implied by the task.
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            TaskConfig::Gmm { .. } => {
                let spec = self.gmm_spec().expect("gmm task");
                (spec.d_o, spec.d_a, spec.horizon)
            }
            TaskConfig::PointMass { env, .. } => (env.d_o(), env.d_a(), env.horizon),
        }
    }
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::Gmm {
            preset: GmmPreset::EightMode,
            n_train: 4096,
            horizon: 2,
            spread: 0.05,
            seed: 0,
        }
    }
}

/// The whole run configuration. Defaults reproduce the best reported
/// hyperparameter cells: sub-batch fractions p_sc = 0.2 and p_sg = 0.1,
/// guidance weight 0.05, condition dropout 0.1, warm-start noise
/// t_w = 0.15, Beta(1, 1.5) start times, and a logit-normal interval
/// width from N(-0.2, 1).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    /// Make the network dimensions agree with the task.
    pub fn reconcile(&mut self) -> Result<()> {
        let (d_o, d_a, horizon) = self.task.dims();
        self.net.d_o = d_o;
        self.net.d_a = d_a;
        self.net.horizon = horizon;
        self.net.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Generate the task's dataset deterministically from the config.
    pub fn build_dataset(&self) -> Result<crate::tasks::Dataset> {
        match &self.task {
            TaskConfig::Gmm { n_train, seed, .. } => crate::tasks::make_gmm_dataset(
                &self.task.gmm_spec().expect("gmm task"),
                *n_train,
                *seed,
            ),
            TaskConfig::PointMass { env, n_demos, seed } => {
                crate::tasks::make_pointmass_dataset(env, *n_demos, *seed)
            }
        }
    }

    /// Override every seed in the config (CLI `--seed` / `OFP_SEED`).
    pub fn override_seed(&mut self, seed: u64) {
        self.net.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        match &mut self.task {
            TaskConfig::Gmm { seed: s, .. } => *s = seed,
            TaskConfig::PointMass { seed: s, .. } => *s = seed,
        }
    }
}

/// Parse `key=value`, JSON-typed value with a plain-string fallback.
fn parse_override(spec: &str) -> Result<(Vec<String>, serde_json::Value)> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config {
        path: spec.to_string(),
        msg: "override must look like path.to.key=value".into(),
    })?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config { path: key.into(), msg: "empty path segment".into() });
    }
    let value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(
    root: &mut serde_json::Value,
    path: &[String],
    value: serde_json::Value,
) -> Result<()> {
    let mut node = root;
    for key in &path[..path.len() - 1] {
        node = node
            .as_object_mut()
            .ok_or_else(|| Error::Config {
                path: path.join("."),
                msg: format!("`{key}` is not an object"),
            })?
            .entry(key.clone())
            .or_insert(serde_json::Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| Error::Config {
        path: path.join("."),
        msg: "parent is not an object".into(),
    })?;
    obj.insert(path.last().unwrap().clone(), value);
    Ok(())
}

/// Load a JSON config (or the built-in defaults when `path` is `None`) and
/// apply `--set` overrides. Schema violations name the failing field path.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config {
                path: p.display().to_string(),
                msg: format!("invalid JSON: {e}"),
            })?
        }
        None => serde_json::to_value(RunConfig::default())?,
    };
    for spec in overrides {
        let (opath, ovalue) = parse_override(spec)?;
        apply_override(&mut value, &opath, ovalue)?;
    }
    let deserializer = value.clone();
    let mut config: RunConfig = serde_path_to_error::deserialize(deserializer).map_err(|e| {
        Error::Config { path: e.path().to_string(), msg: e.inner().to_string() }
    })?;
    config.reconcile()?;
    Ok(config)
}

/// Serialize the effective config into an output directory for provenance.
pub fn write_effective_config(config: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(dir.join("effective_config.json"), text)?;
    Ok(())
}
