use std::path::Path;

use crowd_irl::baselines::GmmConfig;
use crowd_irl::eval::{SvgStyle, DEFAULT_ENTROPY_BINS};
use crowd_irl::features::NUM_FEATURES;
use crowd_irl::pipeline::{PreprocessConfig, DEFAULT_CATEGORIES};
use crowd_irl::{ProximityConfig, SolverConfig, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub beta: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub rollouts: usize,
    pub active: [bool; NUM_FEATURES],
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            beta: t.beta,
            max_iters: t.max_iters,
            tol: t.tol,
            rollouts: t.rollouts,
            active: t.active,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogSection {
    pub categories: Vec<String>,
    pub tracks_per_direction: usize,
}

impl Default for CatalogSection {
    fn default() -> Self {
        Self {
            categories: DEFAULT_CATEGORIES.map(String::from).to_vec(),
            tracks_per_direction: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub preset: String,
    pub n_demos: usize,
    /// One weight vector per agent, or a single one shared by all.
    pub theta_star: Vec<[f64; NUM_FEATURES]>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            preset: "intersection".into(),
            n_demos: 20,
            theta_star: vec![[0.5, 2.0, 10.0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub best_of: usize,
    /// Train on a seeded 60% of the demonstrations and score the other 40%.
    pub split: bool,
    pub entropy_bins: usize,
    pub gmm: GmmConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            best_of: 1,
            split: true,
            entropy_bins: DEFAULT_ENTROPY_BINS,
            gmm: GmmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub training: TrainingSection,
    pub solver: SolverConfig,
    pub proximity: ProximityConfig,
    pub preprocess: PreprocessConfig,
    pub catalog: CatalogSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
    pub plot: SvgStyle,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            beta: self.training.beta,
            max_iters: self.training.max_iters,
            tol: self.training.tol,
            rollouts: self.training.rollouts,
            seed: self.seed,
            active: self.training.active,
            solver: self.solver,
            proximity: self.proximity,
        }
    }
}

/// `key = default` for every configuration key, in dotted form.
pub fn describe_defaults() -> String {
    let value = toml::Value::try_from(RunConfig::default()).expect("config serialises");
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    lines.join("\n")
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => out.push(format!("  {prefix} = {other}")),
    }
}
