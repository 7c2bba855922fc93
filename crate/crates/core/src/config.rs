//! Declarative experiment configuration.
//!
//! A config document (JSON or TOML) fully describes one run: strategy,
//! scale, model, dataset, schedule and seeds. An optional `axes` table turns
//! it into a sweep over strategies, worker counts and seeds; every sweep
//! cell shares the base dataset seed so all strategies see identical data.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{generate_dataset, load_csv_dataset_path, DataError, Dataset, DatasetSpec};
use crate::engine::schedule::{
    AdaParams, LrScaling, LrSchedule, ScheduleError, DEFAULT_REFERENCE_BATCH,
};
use crate::engine::{EngineError, RunConfig, Strategy, StrategyKind, UpdateOrder};
use crate::model::ModelKind;
use crate::num::Scalar;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse `{path}`: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config file `{0}` must end in .json or .toml")]
    UnknownFormat(PathBuf),
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("unknown update order `{0}`")]
    UnknownUpdateOrder(String),
    #[error("unknown model kind `{0}`")]
    UnknownModelKind(String),
    #[error("unknown schedule kind `{0}`")]
    UnknownScheduleKind(String),
    #[error("unknown scaling `{0}`")]
    UnknownScaling(String),
    #[error("strategy `{strategy}` requires `{field}`")]
    MissingField {
        strategy: String,
        field: &'static str,
    },
    #[error("`{field}` is only valid for the adaptive strategy")]
    UnexpectedAdaField { field: &'static str },
    #[error("`{field}` must be at least 1")]
    ZeroField { field: &'static str },
    #[error("schedule `{kind}` requires `{field}`")]
    MissingScheduleField { kind: String, field: &'static str },
    #[error("sweep axis `{axis}` must not be empty")]
    EmptyAxis { axis: &'static str },
    #[error(
        "strategy `decentralized` needs `topology.kind` (complete, ring, torus or exponential)"
    )]
    MissingTopologyKind,
    #[error("strategy `{strategy}` conflicts with topology kind `{topology}`")]
    ConflictingTopology { strategy: String, topology: String },
    #[error("a static ring lattice is not a run strategy; use the adaptive strategy")]
    StaticRingLattice,
    #[error("unknown emit format `{0}` (expected csv or ndjson)")]
    UnknownEmitFormat(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        n_samples: usize,
        input_dim: usize,
        n_classes: usize,
        #[serde(default = "default_cluster_spread")]
        cluster_spread: f64,
        seed: u64,
        #[serde(default = "default_holdout")]
        holdout_fraction: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_holdout")]
        holdout_fraction: f64,
    },
}

fn default_cluster_spread() -> f64 {
    1.0
}

fn default_holdout() -> f64 {
    0.2
}

impl DatasetConfig {
    pub fn seed(&self) -> u64 {
        match self {
            DatasetConfig::Synthetic { seed, .. } | DatasetConfig::Csv { seed, .. } => *seed,
        }
    }

    pub fn holdout_fraction(&self) -> f64 {
        match self {
            DatasetConfig::Synthetic {
                holdout_fraction, ..
            }
            | DatasetConfig::Csv {
                holdout_fraction, ..
            } => *holdout_fraction,
        }
    }
}

/// Model architecture; dimensions come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
}

/// Learning-rate schedule description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: String,
    pub base_lr: f64,
    #[serde(default = "default_scaling")]
    pub scaling: String,
    #[serde(default = "default_reference_batch")]
    pub reference_batch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    /// `[[epoch, factor], ...]` for warmup_multistep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestones: Option<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_up_end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_down_end: Option<usize>,
}

fn default_scaling() -> String {
    "none".to_string()
}

fn default_reference_batch() -> usize {
    DEFAULT_REFERENCE_BATCH
}

/// Graph selection and knobs.
///
/// `kind` is only needed when `strategy` is the generic `"decentralized"`;
/// the compact strategy names (`d_ring`, ...) already carry their graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    /// Torus grid; the most-square factorization is used when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus_dims: Option<(usize, usize)>,
}

/// Sweep axes over the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub strategies: Vec<String>,
    #[serde(default)]
    pub n_workers: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// One run (or, with `axes`, a sweep) described declaratively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: String,
    #[serde(default, skip_serializing_if = "is_default_topology")]
    pub topology: TopologyConfig,
    pub n_workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_k: Option<f64>,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_update_order")]
    pub update_order: String,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Artifact formats: `csv` and/or `ndjson`.
    #[serde(default = "default_emit")]
    pub emit: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<SweepAxes>,
}

fn default_emit() -> Vec<String> {
    vec!["csv".to_string()]
}

fn is_default_topology(t: &TopologyConfig) -> bool {
    *t == TopologyConfig::default()
}

fn default_k_min() -> usize {
    AdaParams::DEFAULT_K_MIN
}

fn default_update_order() -> String {
    "gradient_then_average".to_string()
}

/// Resolve the strategy name (plus the optional `topology.kind`) into one of
/// the six strategy kinds.
pub fn parse_strategy_kind(
    name: &str,
    topology_kind: Option<&str>,
) -> Result<StrategyKind, ConfigError> {
    let compact = match name {
        "c_complete" | "centralized_complete" | "centralized" => {
            Some(StrategyKind::CentralizedComplete)
        }
        "d_complete" | "decentralized_complete" => Some(StrategyKind::DecentralizedComplete),
        "d_ring" | "decentralized_ring" => Some(StrategyKind::DecentralizedRing),
        "d_torus" | "decentralized_torus" => Some(StrategyKind::DecentralizedTorus),
        "d_exponential" | "decentralized_exponential" => {
            Some(StrategyKind::DecentralizedExponential)
        }
        "d_adaptive" | "decentralized_adaptive" | "adaptive" | "ada" => {
            Some(StrategyKind::DecentralizedAdaptive)
        }
        _ => None,
    };
    if let Some(kind) = compact {
        // an explicit topology must agree with the graph the name carries
        if let Some(topology) = topology_kind {
            let expected = match kind {
                StrategyKind::CentralizedComplete | StrategyKind::DecentralizedComplete => {
                    "complete"
                }
                StrategyKind::DecentralizedRing => "ring",
                StrategyKind::DecentralizedTorus => "torus",
                StrategyKind::DecentralizedExponential => "exponential",
                StrategyKind::DecentralizedAdaptive => "ring_lattice",
            };
            if topology != expected {
                return Err(ConfigError::ConflictingTopology {
                    strategy: name.to_string(),
                    topology: topology.to_string(),
                });
            }
        }
        return Ok(kind);
    }
    if name == "decentralized" {
        return match topology_kind {
            Some("complete") => Ok(StrategyKind::DecentralizedComplete),
            Some("ring") => Ok(StrategyKind::DecentralizedRing),
            Some("torus") => Ok(StrategyKind::DecentralizedTorus),
            Some("exponential") => Ok(StrategyKind::DecentralizedExponential),
            Some("ring_lattice") => Err(ConfigError::StaticRingLattice),
            Some(other) => Err(ConfigError::ConflictingTopology {
                strategy: name.to_string(),
                topology: other.to_string(),
            }),
            None => Err(ConfigError::MissingTopologyKind),
        };
    }
    Err(ConfigError::UnknownStrategy(name.to_string()))
}

fn parse_update_order(name: &str) -> Result<UpdateOrder, ConfigError> {
    match name {
        "gradient_then_average" => Ok(UpdateOrder::GradientThenAverage),
        "average_then_gradient" => Ok(UpdateOrder::AverageThenGradient),
        other => Err(ConfigError::UnknownUpdateOrder(other.to_string())),
    }
}

fn parse_model_kind(name: &str) -> Result<ModelKind, ConfigError> {
    match name {
        "linear" => Ok(ModelKind::Linear),
        "mlp" => Ok(ModelKind::Mlp),
        other => Err(ConfigError::UnknownModelKind(other.to_string())),
    }
}

fn parse_scaling(name: &str) -> Result<LrScaling, ConfigError> {
    match name {
        "none" => Ok(LrScaling::None),
        "linear" => Ok(LrScaling::Linear),
        "sqrt" => Ok(LrScaling::Sqrt),
        other => Err(ConfigError::UnknownScaling(other.to_string())),
    }
}

impl ScheduleConfig {
    pub fn build(&self, total_epochs: usize) -> Result<LrSchedule, ConfigError> {
        let scaling = parse_scaling(&self.scaling)?;
        let missing = |field| ConfigError::MissingScheduleField {
            kind: self.kind.clone(),
            field,
        };
        match self.kind.as_str() {
            "constant" => Ok(LrSchedule::constant(self.base_lr)?),
            "warmup_multistep" => Ok(LrSchedule::warmup_multistep(
                self.base_lr,
                scaling,
                self.reference_batch,
                self.warmup_epochs.unwrap_or(0),
                self.milestones.as_deref().unwrap_or(&[]),
                total_epochs,
            )?),
            "one_cycle" => Ok(LrSchedule::one_cycle(
                self.base_lr,
                self.peak_lr.ok_or_else(|| missing("peak_lr"))?,
                self.final_lr.ok_or_else(|| missing("final_lr"))?,
                scaling,
                self.reference_batch,
                self.ramp_up_end.ok_or_else(|| missing("ramp_up_end"))?,
                self.ramp_down_end.ok_or_else(|| missing("ramp_down_end"))?,
                total_epochs,
            )?),
            other => Err(ConfigError::UnknownScheduleKind(other.to_string())),
        }
    }
}

impl ExperimentConfig {
    /// Load from a `.json` or `.toml` file.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text, path),
            Some("toml") => toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            }),
            _ => Err(ConfigError::UnknownFormat(path.to_path_buf())),
        }
    }

    /// Parse JSON; a summary document with an embedded `config` object is
    /// accepted too, so a run can be reproduced straight from its summary.
    fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        match serde_json::from_value(value.clone()) {
            Ok(config) => Ok(config),
            Err(primary) => match value.get("config") {
                Some(embedded) => {
                    serde_json::from_value(embedded.clone()).map_err(|e| ConfigError::Parse {
                        path: path.to_path_buf(),
                        message: e.to_string(),
                    })
                }
                None => Err(ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: primary.to_string(),
                }),
            },
        }
    }

    pub fn is_sweep(&self) -> bool {
        self.axes.is_some()
    }

    /// Expand the sweep axes into per-cell configs (base config when no
    /// axes). Cells enumerate the cartesian product in declaration order:
    /// worker counts, then seeds, then strategies. The dataset (content and
    /// seed) is shared by every cell.
    pub fn cells(&self) -> Result<Vec<ExperimentConfig>, ConfigError> {
        let Some(axes) = &self.axes else {
            return Ok(vec![self.without_axes()]);
        };
        let strategies = if axes.strategies.is_empty() {
            vec![self.strategy.clone()]
        } else {
            axes.strategies.clone()
        };
        let workers = if axes.n_workers.is_empty() {
            vec![self.n_workers]
        } else {
            axes.n_workers.clone()
        };
        let seeds = if axes.seeds.is_empty() {
            vec![self.seed]
        } else {
            axes.seeds.clone()
        };
        if strategies.is_empty() {
            return Err(ConfigError::EmptyAxis { axis: "strategies" });
        }
        let mut cells = Vec::with_capacity(strategies.len() * workers.len() * seeds.len());
        for &n in &workers {
            for &seed in &seeds {
                for strategy in &strategies {
                    let mut cell = self.without_axes();
                    if *strategy != cell.strategy {
                        // axis names carry their own graph
                        cell.topology.kind = None;
                    }
                    cell.strategy = strategy.clone();
                    cell.n_workers = n;
                    cell.seed = seed;
                    // the lattice knobs only belong to adaptive cells
                    let adaptive = matches!(
                        parse_strategy_kind(strategy, cell.topology.kind.as_deref()),
                        Ok(StrategyKind::DecentralizedAdaptive)
                    );
                    if !adaptive {
                        cell.k0 = None;
                        cell.gamma_k = None;
                    }
                    cells.push(cell);
                }
            }
        }
        Ok(cells)
    }

    fn without_axes(&self) -> ExperimentConfig {
        let mut cell = self.clone();
        cell.axes = None;
        cell
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for (value, field) in [
            (self.n_workers, "n_workers"),
            (self.epochs, "epochs"),
            (self.batch_size, "batch_size"),
        ] {
            if value == 0 {
                return Err(ConfigError::ZeroField { field });
            }
        }
        for format in &self.emit {
            if format != "csv" && format != "ndjson" {
                return Err(ConfigError::UnknownEmitFormat(format.clone()));
            }
        }
        Ok(())
    }

    pub fn strategy(&self) -> Result<Strategy, ConfigError> {
        let kind = parse_strategy_kind(&self.strategy, self.topology.kind.as_deref())?;
        let update_order = parse_update_order(&self.update_order)?;
        if kind == StrategyKind::DecentralizedAdaptive {
            let k0 = self.k0.ok_or_else(|| ConfigError::MissingField {
                strategy: self.strategy.clone(),
                field: "k0",
            })?;
            let gamma_k = self.gamma_k.ok_or_else(|| ConfigError::MissingField {
                strategy: self.strategy.clone(),
                field: "gamma_k",
            })?;
            let ada = AdaParams::new(k0, gamma_k, self.k_min)?;
            if self.n_workers >= 3 {
                ada.validate_for_workers(self.n_workers)?;
            }
            Ok(Strategy::adaptive(ada, update_order))
        } else {
            if self.k0.is_some() {
                return Err(ConfigError::UnexpectedAdaField { field: "k0" });
            }
            if self.gamma_k.is_some() {
                return Err(ConfigError::UnexpectedAdaField { field: "gamma_k" });
            }
            Ok(Strategy::new(kind, update_order)?)
        }
    }

    /// Materialize the dataset. Relative CSV paths resolve against `base_dir`.
    pub fn load_dataset<T: Scalar>(&self, base_dir: &Path) -> Result<Dataset<T>, ConfigError> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                n_samples,
                input_dim,
                n_classes,
                cluster_spread,
                seed,
                ..
            } => {
                let spec = DatasetSpec {
                    n_samples: *n_samples,
                    input_dim: *input_dim,
                    n_classes: *n_classes,
                    cluster_spread: *cluster_spread,
                    heterogeneity: self.heterogeneity,
                    seed: *seed,
                };
                Ok(generate_dataset(&spec)?)
            }
            DatasetConfig::Csv { path, .. } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                Ok(load_csv_dataset_path(&full)?)
            }
        }
    }

    /// Lower into the engine-level run description.
    pub fn to_run_config(&self) -> Result<RunConfig, ConfigError> {
        self.validate()?;
        let strategy = self.strategy()?;
        Ok(RunConfig {
            run_id: String::new(),
            strategy,
            n_workers: self.n_workers,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            data_seed: self.dataset.seed(),
            heterogeneity: self.heterogeneity,
            holdout_fraction: self.dataset.holdout_fraction(),
            torus_dims: self.topology.torus_dims,
            model_kind: parse_model_kind(&self.model.kind)?,
            hidden_dim: self.model.hidden_dim,
            schedule: self.schedule.build(self.epochs)?,
        })
    }
}
