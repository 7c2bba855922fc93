//! Deterministic simulator and analysis toolkit for decentralized
//! data-parallel SGD.
//!
//! The crate simulates `n` virtual workers training small differentiable
//! models in lockstep under six synchronization strategies: centralized
//! gradient averaging and decentralized parameter averaging over complete,
//! ring, torus and exponential graphs, plus an adaptive ring lattice whose
//! coordination number decays across epochs. Per iteration it captures
//! cross-replica dispersion statistics (Gini coefficient, index of
//! dispersion, coefficient of variation, quartile coefficient of dispersion)
//! of the per-tensor parameter norms before averaging, which is what links
//! graph connectivity to convergence behaviour.
//!
//! The numeric core is generic over the scalar type through [`num::Scalar`];
//! the `*64` aliases at the crate root pin the `f64` instantiations used by
//! the CLI and the test suites.

pub mod config;
pub mod data;
pub mod emit;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod num;
pub mod spectral;
pub mod topology;

pub use config::{ConfigError, DatasetConfig, ExperimentConfig, SweepAxes};
pub use data::{generate_dataset, shard, train_test_split, DataError, DatasetSpec, ShardPlan};
pub use engine::schedule::{ada_degree, effective_lr, AdaParams, LrScaling, LrSchedule};
pub use engine::{
    mean_params, mixing_for, run_experiment, run_experiment_with, sync_step, total_message_volume,
    EngineError, RunConfig, RunState, RunSummary, Strategy, StrategyKind, UpdateOrder,
};
pub use metrics::{
    capture_dispersion, coefficient_of_variation, gini, index_of_dispersion, quartile_coefficient,
    rank_strategies, MetricsError, MetricsRecord, RankReducer, RankTable,
};
pub use model::{Batch, ModelError, ModelKind, ModelSpec, ParamVector};
pub use num::Scalar;
pub use spectral::{spectral_report, SpectralError, SpectralReport};
pub use topology::{
    build_topology, exponential_neighbors, mixing_matrix, MixingMatrix, Topology, TopologyError,
    TopologyKind,
};

/// `f64` instantiations, the precision everything ships with.
pub type MixingMatrix64 = topology::MixingMatrix<f64>;
pub type ParamVector64 = model::ParamVector<f64>;
pub type Batch64 = model::Batch<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type MetricsRecord64 = metrics::MetricsRecord<f64>;
pub type RunState64 = engine::RunState<f64>;
pub type RunSummary64 = engine::RunSummary<f64>;
