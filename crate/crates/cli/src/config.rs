//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use interpcl_core::diagnostics::{DEFAULT_COLLAPSE_THRESHOLD, DEFAULT_GRID, DEFAULT_PROBE_LAYER, DEFAULT_PROBE_SIZE};
use interpcl_core::interp::{BlockMask, Consolidation, HeadMerge, LambdaPolicy, PathKind};
use interpcl_core::scenarios::{CsvSchema, DriftConfig, StreamVariant};
use interpcl_core::trainer::{ClMethod, TrainSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENV_OUTPUT_DIR: &str = "INTERPCL_OUTPUT_DIR";
pub const ENV_JOBS: &str = "INTERPCL_JOBS";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub training: TrainSettings,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub stream: StreamVariant,
    /// Synthetic drifting Gaussians; the run seed is added to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<DriftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
}

/// One CSV per time step; a single file serves every Class-IL task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub paths: Vec<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
}

fn default_label_column() -> String {
    CsvSchema::default().label_column
}

impl CsvSource {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            label_column: self.label_column.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    None {
        #[serde(default)]
        label: Option<String>,
    },
    Joint {
        #[serde(default)]
        label: Option<String>,
    },
    Consolidate {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_path")]
        path: PathKind,
        #[serde(default)]
        policy: LambdaPolicy,
        /// Layer-name prefixes to interpolate; empty means every layer.
        #[serde(default)]
        blocks: Vec<String>,
        #[serde(default)]
        head: HeadMerge,
        /// When non-empty, one fixed-lambda cell per value replaces `policy`.
        #[serde(default)]
        lambda_grid: Vec<f64>,
    },
    Ewc {
        #[serde(default)]
        label: Option<String>,
        reg: f64,
        #[serde(default = "default_fisher_samples")]
        fisher_samples: usize,
    },
}

fn default_path() -> PathKind {
    PathKind::Linear
}

fn default_fisher_samples() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub barrier: bool,
    pub barrier_grid: usize,
    pub variance: bool,
    pub probe_layer: String,
    pub probe_size: usize,
    pub collapse_threshold: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            barrier: true,
            barrier_grid: DEFAULT_GRID,
            variance: true,
            probe_layer: DEFAULT_PROBE_LAYER.into(),
            probe_size: DEFAULT_PROBE_SIZE,
            collapse_threshold: DEFAULT_COLLAPSE_THRESHOLD,
        }
    }
}

/// A single (method, lambda) setting, run once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub method: ClMethod,
}

fn fmt_lambda(l: f64) -> String {
    format!("{l}")
}

impl MethodSpec {
    pub fn cells(&self) -> Vec<Cell> {
        match self {
            MethodSpec::None { label } => vec![Cell {
                label: label.clone().unwrap_or_else(|| "none".into()),
                method: ClMethod::None,
            }],
            MethodSpec::Joint { label } => vec![Cell {
                label: label.clone().unwrap_or_else(|| "joint".into()),
                method: ClMethod::Joint,
            }],
            MethodSpec::Ewc {
                label,
                reg,
                fisher_samples,
            } => vec![Cell {
                label: label.clone().unwrap_or_else(|| "ewc".into()),
                method: ClMethod::Ewc {
                    reg: *reg,
                    fisher_samples: *fisher_samples,
                },
            }],
            MethodSpec::Consolidate {
                label,
                path,
                policy,
                blocks,
                head,
                lambda_grid,
            } => {
                let mask = if blocks.is_empty() {
                    BlockMask::all()
                } else {
                    BlockMask::only(blocks.iter().cloned())
                };
                let base = label.clone().unwrap_or_else(|| "consolidate".into());
                let make = |policy: LambdaPolicy| {
                    ClMethod::Consolidate(Consolidation {
                        path: *path,
                        policy,
                        mask: mask.clone(),
                        head: *head,
                    })
                };
                if lambda_grid.is_empty() {
                    vec![Cell {
                        label: base,
                        method: make(*policy),
                    }]
                } else {
                    lambda_grid
                        .iter()
                        .map(|&l| Cell {
                            label: format!("{base}@{}", fmt_lambda(l)),
                            method: make(LambdaPolicy::FixedGlobal(l)),
                        })
                        .collect()
                }
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.methods.iter().flat_map(MethodSpec::cells).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return invalid("`seeds` must list at least one seed".into());
        }
        if self.methods.is_empty() {
            return invalid("`methods` must list at least one method".into());
        }
        match (&self.scenario.synthetic, &self.scenario.csv) {
            (Some(d), None) => d.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            (None, Some(c)) if !c.paths.is_empty() => {}
            (None, Some(_)) => return invalid("`scenario.csv.paths` is empty".into()),
            _ => return invalid("exactly one of `scenario.synthetic` and `scenario.csv` is required".into()),
        }
        if self.scenario.stream.n_tasks() == 0 {
            return invalid("stream needs at least one task".into());
        }
        self.training
            .sgd
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let cells = self.cells();
        for cell in &cells {
            cell.method
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("method `{}`: {e}", cell.label)))?;
        }
        let mut labels: Vec<&str> = cells.iter().map(|c| c.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return invalid(format!("duplicate method label `{}`", w[0]));
        }
        let d = &self.diagnostics;
        if d.barrier_grid < 3 {
            return invalid("`diagnostics.barrier_grid` must be >= 3".into());
        }
        if d.probe_size == 0 || !(d.collapse_threshold > 0.0) {
            return invalid("`diagnostics.probe_size` and `collapse_threshold` must be positive".into());
        }
        Ok(())
    }

    /// Hash of the parsed configuration (independent of formatting).
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Hash of what determines the data: scenario and seeds.
    pub fn scenario_hash(&self) -> String {
        hash_json(&(&self.scenario, &self.seeds))
    }
}

fn hash_json(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}
