use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::peft::{AdapterHyper, LoraHyper, Method, ParaHyper};
use crate::serving::BenchSpec;
use crate::tensor::Precision;
use crate::training::{TaskKind, TaskSpec, TrainConfig};

use super::CliError;

/// Everything a command needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed: backbone init, adapter init, batch order and bench prompt.
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: PathBuf,
    /// Preset name (`desk`, `bench`, `llama2-7b`) or path to a model TOML.
    pub model: String,
    /// Backbone weights; defaults to `<output_dir>/model.bin`.
    pub weights: Option<PathBuf>,
    pub adapter: AdapterSection,
    pub task: TaskSpec,
    pub train: TrainConfig,
    pub pretrain: PretrainSection,
    pub bench: BenchSpec,
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    pub method: Method,
    pub para: ParaHyper,
    pub lora: LoraHyper,
}

impl Default for AdapterSection {
    fn default() -> Self {
        AdapterSection {
            method: Method::Para,
            para: ParaHyper::default(),
            lora: LoraHyper::default(),
        }
    }
}

impl AdapterSection {
    pub fn hyper(&self) -> AdapterHyper {
        AdapterHyper {
            para: self.para,
            lora: self.lora.clone(),
        }
    }
}

/// Optional copy-task pretraining run by `init`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub enabled: bool,
    pub task: TaskSpec,
    pub train: TrainConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            enabled: false,
            task: TaskSpec {
                kind: TaskKind::Copy,
                specials: 8,
                n_train: 8000,
                ..TaskSpec::default()
            },
            train: TrainConfig {
                lr: 3e-3,
                max_epochs: 6,
                patience: 1000,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    /// Training examples in the checked batch.
    pub examples: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Std of the perturbation applied to fresh adapter parameters so that
    /// every block receives a nonzero gradient.
    pub perturb_std: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            examples: 2,
            epsilon: 1e-4,
            tolerance: 1e-5,
            perturb_std: 0.1,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F64,
            output_dir: PathBuf::from("out"),
            model: "desk".into(),
            weights: None,
            adapter: AdapterSection::default(),
            task: TaskSpec {
                kind: TaskKind::Shift(1),
                seed: 100,
                ..TaskSpec::default()
            },
            train: TrainConfig {
                lr: 3e-3,
                max_epochs: 30,
                ..TrainConfig::default()
            },
            pretrain: PretrainSection::default(),
            bench: BenchSpec::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

/// A parsed config together with its resolved model shape.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub run: RunConfig,
    pub model: ModelConfig,
    pub output_dir: PathBuf,
    pub weights: PathBuf,
}

fn preset(name: &str) -> Option<ModelConfig> {
    match name {
        "desk" => Some(ModelConfig::desk()),
        "bench" => Some(ModelConfig::bench()),
        "llama2-7b" | "llama2_7b" | "7b" => Some(ModelConfig::llama2_7b()),
        _ => None,
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))
    }

    /// Loads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Resolved, CliError> {
        let (mut run, base) = match path {
            Some(p) => (
                RunConfig::parse(&read(p)?, p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (RunConfig::default(), PathBuf::new()),
        };
        if let Some(s) = seed {
            run.seed = s;
        }
        run.train.seed = run.seed;
        run.pretrain.train.seed = run.seed;
        run.bench.seed = run.seed;

        let model = match preset(&run.model) {
            Some(c) => c,
            None => {
                let p = base.join(&run.model);
                let text = read(&p)?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        model
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        let output_dir = base.join(&run.output_dir);
        let weights = match &run.weights {
            Some(w) => base.join(w),
            None => output_dir.join("model.bin"),
        };
        Ok(Resolved { run, model, output_dir, weights })
    }
}
