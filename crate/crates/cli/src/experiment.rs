//! Experiment files: one JSON document describing a full run.
//!
//! ```json
//! {
//!   "meta": { "variant": "ga_reptile", "inner_rate": 0.02, ... },
//!   "network": { "hidden": [64, 64], "activation": "tanh" },
//!   "tasks": { "sine": { "support_points": 10, "query_points": 50 } },
//!   "eval": { "n_tasks": 1000, "seed": 12345, "seeds": [1, 2, 3] },
//!   "output_dir": "runs/ga_reptile"
//! }
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use anyhow::Context;
use metagree::numcore::HiddenActivation;
use metagree::{MetaConfig, MlpSpec, TaskFamily, TaskSource};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBlock {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: HiddenActivation,
}

fn default_n_tasks() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBlock {
    #[serde(default = "default_n_tasks")]
    pub n_tasks: usize,
    /// Seed of the held-out task stream.
    pub seed: u64,
    /// Training seeds used by `compare`.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub name: Option<String>,
    pub meta: MetaConfig,
    pub network: NetworkBlock,
    pub tasks: TaskFamily,
    pub eval: EvalBlock,
    pub output_dir: PathBuf,
}

/// An experiment file with its task source loaded and network resolved.
pub struct Experiment {
    pub file: ExperimentFile,
    pub source: TaskSource,
    pub spec: MlpSpec,
}

impl Experiment {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading experiment file {}", path.display()))?;
        let file: ExperimentFile = serde_json::from_str(&text)
            .with_context(|| format!("invalid experiment file {}", path.display()))?;
        Self::from_file(file).with_context(|| format!("invalid experiment {}", path.display()))
    }

    pub fn from_file(file: ExperimentFile) -> anyhow::Result<Self> {
        let source = TaskSource::from_family(&file.tasks)?;
        let spec = source.network(&file.network.hidden, file.network.activation)?;
        file.meta.validate_for(&source, &spec)?;
        if file.eval.n_tasks == 0 {
            anyhow::bail!("eval.n_tasks must be positive");
        }
        Ok(Experiment { file, source, spec })
    }

    pub fn name(&self, path: &Path) -> String {
        self.file.name.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.file.meta.variant.to_string())
        })
    }
}
