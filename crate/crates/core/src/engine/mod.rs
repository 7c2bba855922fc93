//! Lockstep training runs under the synchronization strategies.
//!
//! Every iteration each worker draws its batch, computes loss and gradient,
//! dispersion of the pre-averaging parameters is captured, and one
//! synchronization step is applied. Centralized complete averages gradients
//! globally; the decentralized strategies average parameters over a
//! communication graph; the adaptive strategy rebuilds its ring lattice at
//! each epoch boundary from the coordination-number schedule.
//!
//! All reductions use a fixed pairwise tree over ascending worker index, so
//! results do not depend on how many threads execute the per-worker work.

pub mod schedule;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{derive_seed, shard, train_test_split, DataError, Dataset};
use crate::metrics::{capture_dispersion, MetricsError, MetricsRecord, TensorDispersion};
use crate::model::{ModelError, ModelKind, ModelSpec, ParamVector};
use crate::num::{mean, Scalar};
use crate::topology::{build_topology, MixingMatrix, Topology, TopologyError, TopologyKind};
use schedule::{AdaParams, LrSchedule, ScheduleError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{strategy}: diverged (non-finite values) at epoch {epoch}, iteration {iteration}")]
    Diverged {
        strategy: &'static str,
        epoch: usize,
        iteration: usize,
    },
    #[error("adaptive strategy requires ada parameters")]
    MissingAdaParams,
    #[error("ada parameters are only valid for the adaptive strategy")]
    UnexpectedAdaParams,
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// The six synchronization strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    CentralizedComplete,
    DecentralizedComplete,
    DecentralizedRing,
    DecentralizedTorus,
    DecentralizedExponential,
    DecentralizedAdaptive,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::CentralizedComplete => "c_complete",
            StrategyKind::DecentralizedComplete => "d_complete",
            StrategyKind::DecentralizedRing => "d_ring",
            StrategyKind::DecentralizedTorus => "d_torus",
            StrategyKind::DecentralizedExponential => "d_exponential",
            StrategyKind::DecentralizedAdaptive => "d_adaptive",
        }
    }

    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::CentralizedComplete,
        StrategyKind::DecentralizedComplete,
        StrategyKind::DecentralizedRing,
        StrategyKind::DecentralizedTorus,
        StrategyKind::DecentralizedExponential,
        StrategyKind::DecentralizedAdaptive,
    ];
}

/// Whether the local gradient is applied before or after averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    GradientThenAverage,
    AverageThenGradient,
}

/// A synchronization strategy with its update order; adaptive runs carry
/// their coordination-number schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Strategy {
    kind: StrategyKind,
    update_order: UpdateOrder,
    ada: Option<AdaParams>,
}

impl Strategy {
    pub fn new(kind: StrategyKind, update_order: UpdateOrder) -> Result<Self, EngineError> {
        if kind == StrategyKind::DecentralizedAdaptive {
            return Err(EngineError::MissingAdaParams);
        }
        Ok(Strategy {
            kind,
            update_order,
            ada: None,
        })
    }

    pub fn adaptive(ada: AdaParams, update_order: UpdateOrder) -> Self {
        Strategy {
            kind: StrategyKind::DecentralizedAdaptive,
            update_order,
            ada: Some(ada),
        }
    }

    pub fn with_ada(
        kind: StrategyKind,
        update_order: UpdateOrder,
        ada: Option<AdaParams>,
    ) -> Result<Self, EngineError> {
        match (kind, ada) {
            (StrategyKind::DecentralizedAdaptive, Some(ada)) => {
                Ok(Strategy::adaptive(ada, update_order))
            }
            (StrategyKind::DecentralizedAdaptive, None) => Err(EngineError::MissingAdaParams),
            (_, Some(_)) => Err(EngineError::UnexpectedAdaParams),
            (kind, None) => Strategy::new(kind, update_order),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn update_order(&self) -> UpdateOrder {
        self.update_order
    }

    pub fn ada(&self) -> Option<&AdaParams> {
        self.ada.as_ref()
    }

    /// Per-node degree of the communication graph at an epoch.
    pub fn degree_at(&self, n_workers: usize, epoch: usize) -> usize {
        if n_workers <= 1 {
            return 0;
        }
        if n_workers == 2 {
            return 1;
        }
        match self.kind {
            StrategyKind::CentralizedComplete | StrategyKind::DecentralizedComplete => {
                n_workers - 1
            }
            StrategyKind::DecentralizedRing => 2,
            StrategyKind::DecentralizedTorus => 4,
            StrategyKind::DecentralizedExponential => (n_workers - 1).ilog2() as usize + 1,
            StrategyKind::DecentralizedAdaptive => {
                2 * self.ada.expect("adaptive carries params").degree_at(epoch)
            }
        }
    }
}

/// Replica parameters plus the lockstep cursor of a run in flight.
#[derive(Debug, Clone)]
pub struct RunState<T> {
    pub workers: Vec<ParamVector<T>>,
    pub epoch: usize,
    pub iteration: usize,
    pub topology_now: Option<Topology>,
    pub rng_seed: u64,
}

impl<T: Scalar> RunState<T> {
    pub fn from_replicas(workers: Vec<ParamVector<T>>, rng_seed: u64) -> Self {
        RunState {
            workers,
            epoch: 0,
            iteration: 0,
            topology_now: None,
            rng_seed,
        }
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }
}

/// Fixed-shape pairwise reduction of weighted vectors, elementwise.
/// The tree over ascending index is the one reduction order used everywhere,
/// so results are identical no matter how the callers parallelize.
fn weighted_tree_sum<T: Scalar>(entries: &[(T, &[T])], out: &mut [T]) {
    fn term<T: Scalar>(entries: &[(T, &[T])], idx: usize) -> T {
        match entries {
            [(w, values)] => *w * values[idx],
            _ => {
                let mid = entries.len() / 2;
                term(&entries[..mid], idx) + term(&entries[mid..], idx)
            }
        }
    }
    for (idx, slot) in out.iter_mut().enumerate() {
        *slot = term(entries, idx);
    }
}

/// Mean of the worker parameter vectors (uniform tree reduction).
pub fn mean_params<T: Scalar>(workers: &[ParamVector<T>]) -> ParamVector<T> {
    let w = T::one() / T::from_count(workers.len());
    let entries: Vec<(T, &[T])> = workers.iter().map(|p| (w, p.values())).collect();
    let mut out = workers[0].zeros_like();
    weighted_tree_sum(&entries, out.values_mut());
    out
}

/// Apply one synchronization step to the run state.
///
/// Centralized complete averages the gradients and applies the same update
/// everywhere, keeping replicas bit-identical. Decentralized strategies
/// either average the locally-updated parameters (gradient-then-average) or
/// apply the local gradient to the averaged parameters
/// (average-then-gradient), with weights from the mixing matrix.
pub fn sync_step<T: Scalar>(
    state: &mut RunState<T>,
    strategy: &Strategy,
    mix: &MixingMatrix<T>,
    grads: &[ParamVector<T>],
    lr: T,
) -> Result<(), EngineError> {
    let n = state.workers.len();
    debug_assert_eq!(grads.len(), n);
    debug_assert_eq!(mix.n, n);
    match strategy.kind {
        StrategyKind::CentralizedComplete => {
            let w = T::one() / T::from_count(n);
            let entries: Vec<(T, &[T])> = grads.iter().map(|g| (w, g.values())).collect();
            let mut mean_grad = grads[0].zeros_like();
            weighted_tree_sum(&entries, mean_grad.values_mut());
            for worker in &mut state.workers {
                for (p, g) in worker.values_mut().iter_mut().zip(mean_grad.values()) {
                    *p = *p - lr * *g;
                }
            }
        }
        _ => match strategy.update_order {
            UpdateOrder::GradientThenAverage => {
                let locally_updated: Vec<ParamVector<T>> = state
                    .workers
                    .iter()
                    .zip(grads)
                    .map(|(p, g)| {
                        let mut updated = p.clone();
                        for (v, gv) in updated.values_mut().iter_mut().zip(g.values()) {
                            *v = *v - lr * *gv;
                        }
                        updated
                    })
                    .collect();
                for i in 0..n {
                    let entries: Vec<(T, &[T])> = mix
                        .row_entries(i)
                        .into_iter()
                        .map(|(j, w)| (w, locally_updated[j].values()))
                        .collect();
                    weighted_tree_sum(&entries, state.workers[i].values_mut());
                }
            }
            UpdateOrder::AverageThenGradient => {
                let previous = state.workers.clone();
                for (i, (worker, grad)) in state.workers.iter_mut().zip(grads).enumerate() {
                    let entries: Vec<(T, &[T])> = mix
                        .row_entries(i)
                        .into_iter()
                        .map(|(j, w)| (w, previous[j].values()))
                        .collect();
                    weighted_tree_sum(&entries, worker.values_mut());
                    for (v, gv) in worker.values_mut().iter_mut().zip(grad.values()) {
                        *v = *v - lr * *gv;
                    }
                }
            }
        },
    }
    if state.workers.iter().any(|w| !w.is_finite()) {
        return Err(EngineError::Diverged {
            strategy: strategy.name(),
            epoch: state.epoch,
            iteration: state.iteration,
        });
    }
    Ok(())
}

/// A mixing matrix paired with the graph it came from (none for the
/// degenerate one- and two-worker cases).
pub type GraphAndMix<T> = (Option<Topology>, MixingMatrix<T>);

/// Mixing matrix (and graph, when one exists) for a strategy at an epoch.
///
/// One or two workers have no graph in the usual sense; averaging degenerates
/// to the uniform complete mix on `n` nodes, which is the identity for n = 1
/// and pair averaging for n = 2.
pub fn mixing_for<T: Scalar>(
    strategy: &Strategy,
    n_workers: usize,
    epoch: usize,
    torus_dims: Option<(usize, usize)>,
) -> Result<GraphAndMix<T>, EngineError> {
    if n_workers <= 2 {
        return Ok((None, MixingMatrix::uniform(n_workers)));
    }
    let topology = match strategy.kind {
        StrategyKind::CentralizedComplete | StrategyKind::DecentralizedComplete => {
            build_topology(TopologyKind::Complete, n_workers, None, None)?
        }
        StrategyKind::DecentralizedRing => {
            build_topology(TopologyKind::Ring, n_workers, None, None)?
        }
        StrategyKind::DecentralizedTorus => {
            build_topology(TopologyKind::Torus, n_workers, None, torus_dims)?
        }
        StrategyKind::DecentralizedExponential => {
            build_topology(TopologyKind::Exponential, n_workers, None, None)?
        }
        StrategyKind::DecentralizedAdaptive => {
            let ada = strategy.ada.ok_or(EngineError::MissingAdaParams)?;
            let k = ada.degree_at(epoch);
            build_topology(TopologyKind::RingLattice, n_workers, Some(k), None)?
        }
    };
    let mix = MixingMatrix::from_topology(&topology);
    Ok((Some(topology), mix))
}

/// Everything that defines one run, with the dataset supplied separately.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub run_id: String,
    pub strategy: Strategy,
    pub n_workers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds model initialization; one cell of a sweep.
    pub seed: u64,
    /// Seeds split, shard and batch order; shared across the strategies of a
    /// sweep cell so they see identical data.
    pub data_seed: u64,
    pub heterogeneity: f64,
    pub holdout_fraction: f64,
    pub torus_dims: Option<(usize, usize)>,
    pub model_kind: ModelKind,
    pub hidden_dim: Option<usize>,
    pub schedule: LrSchedule,
}

impl RunConfig {
    pub fn new(strategy: Strategy, n_workers: usize, epochs: usize, batch_size: usize) -> Self {
        RunConfig {
            run_id: String::new(),
            strategy,
            n_workers,
            epochs,
            batch_size,
            seed: 0,
            data_seed: 0,
            heterogeneity: 0.0,
            holdout_fraction: 0.2,
            torus_dims: None,
            model_kind: ModelKind::Linear,
            hidden_dim: None,
            schedule: LrSchedule::constant(0.1).expect("positive rate"),
        }
    }

    pub fn resolved_run_id(&self) -> String {
        if self.run_id.is_empty() {
            format!(
                "{}-n{}-seed{}",
                self.strategy.name(),
                self.n_workers,
                self.seed
            )
        } else {
            self.run_id.clone()
        }
    }

    fn model_spec(
        &self,
        dataset_input_dim: usize,
        n_classes: usize,
    ) -> Result<ModelSpec, ModelError> {
        ModelSpec::new(
            self.model_kind,
            dataset_input_dim,
            self.hidden_dim,
            n_classes,
            derive_seed(self.seed, &[0x6d6f64656c]),
        )
    }
}

/// End-of-run results.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<T> {
    pub run_id: String,
    pub strategy: String,
    pub n_workers: usize,
    pub epochs: usize,
    pub iterations: usize,
    pub final_train_loss: T,
    pub final_test_accuracy: T,
    /// Held-out accuracy of the averaged model after each epoch.
    pub epoch_accuracy: Vec<T>,
    /// Parameter elements sent per worker over the whole run.
    pub message_volume_per_worker: f64,
    #[serde(skip)]
    pub final_params: Option<ParamVector<T>>,
}

/// Parameter elements one worker transmits over a full run.
///
/// Decentralized strategies send the parameter vector to each graph neighbor
/// every iteration; the centralized baseline is costed as a ring allreduce,
/// `2 |theta| (n-1)/n` per worker per iteration.
pub fn total_message_volume(
    strategy: &Strategy,
    n_workers: usize,
    epochs: usize,
    steps_per_epoch: usize,
    param_len: usize,
) -> f64 {
    let mut total = 0.0;
    for epoch in 0..epochs {
        total +=
            epoch_message_volume(strategy, n_workers, epoch, param_len) * steps_per_epoch as f64;
    }
    total
}

/// Per-worker parameter elements sent in one iteration of an epoch.
pub fn epoch_message_volume(
    strategy: &Strategy,
    n_workers: usize,
    epoch: usize,
    param_len: usize,
) -> f64 {
    match strategy.kind {
        StrategyKind::CentralizedComplete => {
            if n_workers <= 1 {
                0.0
            } else {
                2.0 * param_len as f64 * (n_workers as f64 - 1.0) / n_workers as f64
            }
        }
        _ => strategy.degree_at(n_workers, epoch) as f64 * param_len as f64,
    }
}

/// Run a full experiment, pushing one metrics record per iteration into the
/// sink, and return the summary.
///
/// Dispersion is captured over the replica parameters after the batch
/// gradients are computed and before the synchronization step. The held-out
/// set is evaluated with the worker-mean model at the end of each epoch; the
/// final model is the worker mean after the last iteration. With an empty
/// held-out split, accuracy falls back to the training samples.
pub fn run_experiment_with<T: Scalar>(
    config: &RunConfig,
    dataset: &Dataset<T>,
    mut sink: impl FnMut(MetricsRecord<T>),
) -> Result<RunSummary<T>, EngineError> {
    let run_id = config.resolved_run_id();
    let strategy = config.strategy;
    let n = config.n_workers;
    if let Some(ada) = strategy.ada() {
        if n >= 3 {
            ada.validate_for_workers(n)?;
        }
    }
    let model = config.model_spec(dataset.input_dim, dataset.n_classes)?;

    let (train_idx, test_idx) =
        train_test_split(dataset.len(), config.holdout_fraction, config.data_seed)?;
    let train_labels: Vec<usize> = train_idx.iter().map(|&s| dataset.labels[s]).collect();
    let shard_seed = derive_seed(config.data_seed, &[0x73686172, config.seed]);
    let plan = shard(
        train_idx.len(),
        n,
        config.heterogeneity,
        &train_labels,
        shard_seed,
    )?;
    let steps_per_epoch = plan.steps_per_epoch(config.batch_size)?;

    let eval_ids: &[usize] = if test_idx.is_empty() {
        &train_idx
    } else {
        &test_idx
    };
    let eval_batch = dataset.batch(eval_ids);

    let init = model.init_params::<T>();
    let mut state = RunState::from_replicas(vec![init; n], config.seed);

    let mut static_mix: Option<GraphAndMix<T>> = None;
    let mut ada_mix: Option<(usize, GraphAndMix<T>)> = None;

    let mut last_loss = T::zero();
    let mut epoch_accuracy = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        state.epoch = epoch;
        let (topology_now, mix) = match strategy.kind() {
            StrategyKind::DecentralizedAdaptive => {
                let k = strategy.ada().expect("adaptive").degree_at(epoch);
                if ada_mix.as_ref().map(|(built_k, _)| *built_k) != Some(k) {
                    ada_mix = Some((k, mixing_for(&strategy, n, epoch, config.torus_dims)?));
                }
                &ada_mix.as_ref().expect("built above").1
            }
            _ => {
                if static_mix.is_none() {
                    static_mix = Some(mixing_for(&strategy, n, epoch, config.torus_dims)?);
                }
                static_mix.as_ref().expect("built above")
            }
        };
        state.topology_now = topology_now.clone();
        let degree = strategy.degree_at(n, epoch);
        let lr = T::from_f64_lossy(config.schedule.effective_lr(
            epoch,
            config.batch_size,
            degree,
        )?);

        for step in 0..steps_per_epoch {
            state.iteration = epoch * steps_per_epoch + step;
            let results: Vec<Result<(T, ParamVector<T>), EngineError>> = (0..n)
                .into_par_iter()
                .map(|w| {
                    let local_ids =
                        plan.batch_indices(w, config.batch_size, epoch, step, shard_seed)?;
                    let global_ids: Vec<usize> =
                        local_ids.into_iter().map(|i| train_idx[i]).collect();
                    let batch = dataset.batch(&global_ids);
                    Ok(model.loss_and_grad(&state.workers[w], &batch)?)
                })
                .collect();
            let mut losses = Vec::with_capacity(n);
            let mut grads = Vec::with_capacity(n);
            for result in results {
                match result {
                    Ok((loss, grad)) => {
                        losses.push(loss);
                        grads.push(grad);
                    }
                    Err(EngineError::Model(ModelError::NonFiniteLoss)) => {
                        return Err(EngineError::Diverged {
                            strategy: strategy.name(),
                            epoch,
                            iteration: state.iteration,
                        })
                    }
                    Err(other) => return Err(other),
                }
            }
            let mean_train_loss = mean(&losses);
            last_loss = mean_train_loss;

            // dispersion of the tensors as they enter the averaging step:
            // with gradient-then-average that is the locally updated
            // parameters, otherwise the current replicas
            let tensors: Vec<TensorDispersion<T>> = if n >= 2 {
                let pre_averaging: Vec<ParamVector<T>>;
                let capture_target: &[ParamVector<T>] = if strategy.kind()
                    != StrategyKind::CentralizedComplete
                    && strategy.update_order() == UpdateOrder::GradientThenAverage
                {
                    pre_averaging = state
                        .workers
                        .iter()
                        .zip(&grads)
                        .map(|(p, g)| {
                            let mut updated = p.clone();
                            for (v, gv) in updated.values_mut().iter_mut().zip(g.values()) {
                                *v = *v - lr * *gv;
                            }
                            updated
                        })
                        .collect();
                    &pre_averaging
                } else {
                    &state.workers
                };
                // parameters can still be finite while their squared norms
                // overflow; that is a diverged run, not a metrics bug
                match capture_dispersion(capture_target) {
                    Ok(tensors) => tensors,
                    Err(MetricsError::NonFiniteValue) => {
                        return Err(EngineError::Diverged {
                            strategy: strategy.name(),
                            epoch,
                            iteration: state.iteration,
                        })
                    }
                    Err(other) => return Err(other.into()),
                }
            } else {
                Vec::new()
            };

            sync_step(&mut state, &strategy, mix, &grads, lr)?;

            let test_accuracy = if step == steps_per_epoch - 1 {
                let averaged = mean_params(&state.workers);
                let acc = model.accuracy(&averaged, &eval_batch)?;
                epoch_accuracy.push(acc);
                Some(acc)
            } else {
                None
            };

            sink(MetricsRecord {
                run_id: run_id.clone(),
                strategy: strategy.name().to_string(),
                epoch,
                iteration: state.iteration,
                mean_train_loss,
                test_accuracy,
                tensors,
            });
        }
    }

    let final_params = mean_params(&state.workers);
    let final_test_accuracy = model.accuracy(&final_params, &eval_batch)?;
    Ok(RunSummary {
        run_id,
        strategy: strategy.name().to_string(),
        n_workers: n,
        epochs: config.epochs,
        iterations: config.epochs * steps_per_epoch,
        final_train_loss: last_loss,
        final_test_accuracy,
        epoch_accuracy,
        message_volume_per_worker: total_message_volume(
            &strategy,
            n,
            config.epochs,
            steps_per_epoch,
            model.param_len(),
        ),
        final_params: Some(final_params),
    })
}

/// [`run_experiment_with`] collecting the record stream into a vector.
pub fn run_experiment<T: Scalar>(
    config: &RunConfig,
    dataset: &Dataset<T>,
) -> Result<(Vec<MetricsRecord<T>>, RunSummary<T>), EngineError> {
    let mut records = Vec::new();
    let summary = run_experiment_with(config, dataset, |record| records.push(record))?;
    Ok((records, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DatasetSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_grads(state: &RunState<f64>) -> Vec<ParamVector<f64>> {
        state.workers.iter().map(|w| w.zeros_like()).collect()
    }

    fn random_state(n: usize, dim_seed: u64) -> RunState<f64> {
        let spec = ModelSpec::new(ModelKind::Linear, 5, None, 3, dim_seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(dim_seed);
        let workers = (0..n)
            .map(|_| {
                let mut p = spec.init_params::<f64>();
                for v in p.values_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                p
            })
            .collect();
        RunState::from_replicas(workers, dim_seed)
    }

    fn disagreement(workers: &[ParamVector<f64>]) -> f64 {
        let center = mean_params(workers);
        workers
            .iter()
            .map(|w| {
                w.values()
                    .iter()
                    .zip(center.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn complete_consensus_in_one_step() {
        let strategy = Strategy::new(
            StrategyKind::DecentralizedComplete,
            UpdateOrder::AverageThenGradient,
        )
        .unwrap();
        let mut state = random_state(8, 3);
        let before_mean = mean_params(&state.workers);
        let mix = mixing_for::<f64>(&strategy, 8, 0, None).unwrap().1;
        let grads = zero_grads(&state);
        sync_step(&mut state, &strategy, &mix, &grads, 0.1).unwrap();
        for w in &state.workers {
            for (a, b) in w.values().iter().zip(before_mean.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(disagreement(&state.workers) < 1e-12);
    }

    #[test]
    fn two_workers_average_to_the_midpoint() {
        let strategy = Strategy::new(
            StrategyKind::DecentralizedRing,
            UpdateOrder::AverageThenGradient,
        )
        .unwrap();
        let spec = ModelSpec::new(ModelKind::Linear, 1, None, 1, 0).unwrap();
        let mut a = spec.init_params::<f64>();
        a.values_mut().fill(0.0);
        let mut b = spec.init_params::<f64>();
        b.values_mut().fill(2.0);
        let mut state = RunState::from_replicas(vec![a, b], 0);
        let mix = mixing_for::<f64>(&strategy, 2, 0, None).unwrap().1;
        let grads = zero_grads(&state);
        sync_step(&mut state, &strategy, &mix, &grads, 0.5).unwrap();
        for w in &state.workers {
            assert!(w.values().iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn zero_gradient_mixing_preserves_the_mean() {
        for kind in [
            StrategyKind::DecentralizedRing,
            StrategyKind::DecentralizedTorus,
            StrategyKind::DecentralizedExponential,
            StrategyKind::DecentralizedComplete,
        ] {
            let strategy = Strategy::new(kind, UpdateOrder::GradientThenAverage).unwrap();
            let mut state = random_state(9, 5);
            let before = mean_params(&state.workers);
            let mix = mixing_for::<f64>(&strategy, 9, 0, None).unwrap().1;
            for _ in 0..20 {
                let grads = zero_grads(&state);
                sync_step(&mut state, &strategy, &mix, &grads, 0.1).unwrap();
                let after = mean_params(&state.workers);
                for (a, b) in after.values().iter().zip(before.values()) {
                    // exponential is asymmetric but circulant, so the drift
                    // stays at rounding level; 1e-6 per step is the contract
                    assert!((a - b).abs() < 1e-6, "{kind:?}");
                }
            }
            let after = mean_params(&state.workers);
            for (a, b) in after.values().iter().zip(before.values()) {
                assert!((a - b).abs() < 1e-12, "{kind:?}");
            }
        }
    }

    #[test]
    fn centralized_keeps_replicas_bit_identical() {
        let strategy = Strategy::new(
            StrategyKind::CentralizedComplete,
            UpdateOrder::GradientThenAverage,
        )
        .unwrap();
        let spec = ModelSpec::new(ModelKind::Linear, 5, None, 3, 9).unwrap();
        let init = spec.init_params::<f64>();
        let mut state = RunState::from_replicas(vec![init; 6], 9);
        let mix = MixingMatrix::uniform(6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let grads: Vec<ParamVector<f64>> = (0..6)
                .map(|_| {
                    let mut g = state.workers[0].zeros_like();
                    for v in g.values_mut() {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                    g
                })
                .collect();
            sync_step(&mut state, &strategy, &mix, &grads, 0.05).unwrap();
            for w in &state.workers[1..] {
                assert_eq!(w.values(), state.workers[0].values());
            }
        }
    }

    #[test]
    fn update_orders_agree_on_complete_graph_with_shared_gradient() {
        let spec = ModelSpec::new(ModelKind::Linear, 4, None, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let workers: Vec<ParamVector<f64>> = (0..5)
            .map(|_| {
                let mut p = spec.init_params::<f64>();
                for v in p.values_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                p
            })
            .collect();
        let mut shared = workers[0].zeros_like();
        for v in shared.values_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let grads = vec![shared; 5];
        let mix = MixingMatrix::uniform(5);

        let gta = Strategy::new(
            StrategyKind::DecentralizedComplete,
            UpdateOrder::GradientThenAverage,
        )
        .unwrap();
        let atg = Strategy::new(
            StrategyKind::DecentralizedComplete,
            UpdateOrder::AverageThenGradient,
        )
        .unwrap();
        let mut state_a = RunState::from_replicas(workers.clone(), 0);
        let mut state_b = RunState::from_replicas(workers, 0);
        sync_step(&mut state_a, &gta, &mix, &grads, 0.3).unwrap();
        sync_step(&mut state_b, &atg, &mix, &grads, 0.3).unwrap();
        for (a, b) in state_a.workers.iter().zip(&state_b.workers) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consensus_decay_tracks_the_spectral_modulus() {
        // ring at n = 16: lambda_2 = (1 + 2 cos(2 pi / 16)) / 3
        let strategy = Strategy::new(
            StrategyKind::DecentralizedRing,
            UpdateOrder::GradientThenAverage,
        )
        .unwrap();
        let mut state = random_state(16, 13);
        let mix = mixing_for::<f64>(&strategy, 16, 0, None).unwrap().1;
        let expected = (1.0 + 2.0 * (2.0 * std::f64::consts::PI / 16.0).cos()) / 3.0;
        let mut history = Vec::new();
        for _ in 0..60 {
            let grads = zero_grads(&state);
            sync_step(&mut state, &strategy, &mix, &grads, 0.0).unwrap();
            history.push(disagreement(&state.workers));
        }
        let ratio = (history[59] / history[19]).powf(1.0 / 40.0);
        assert!(ratio <= expected + 0.02, "ratio {ratio} vs {expected}");
    }

    #[test]
    fn strategy_construction_enforces_ada_pairing() {
        assert!(matches!(
            Strategy::new(StrategyKind::DecentralizedAdaptive, UpdateOrder::default()),
            Err(EngineError::MissingAdaParams)
        ));
        let ada = AdaParams::new(4, 0.5, 2).unwrap();
        assert!(matches!(
            Strategy::with_ada(
                StrategyKind::DecentralizedRing,
                UpdateOrder::default(),
                Some(ada)
            ),
            Err(EngineError::UnexpectedAdaParams)
        ));
        let s = Strategy::adaptive(ada, UpdateOrder::default());
        assert_eq!(s.degree_at(16, 0), 8);
        assert_eq!(s.degree_at(16, 4), 4);
        assert_eq!(s.degree_at(16, 100), 4); // clamped at k_min = 2
    }

    #[test]
    fn message_volume_matches_degree_sums() {
        let ring = Strategy::new(StrategyKind::DecentralizedRing, UpdateOrder::default()).unwrap();
        assert_eq!(total_message_volume(&ring, 12, 10, 1, 100), 2000.0);
        let complete =
            Strategy::new(StrategyKind::DecentralizedComplete, UpdateOrder::default()).unwrap();
        assert_eq!(total_message_volume(&complete, 9, 1, 1, 10), 80.0);
        // ada with k = 4, 3, 2 over three one-step epochs
        let ada = Strategy::adaptive(AdaParams::new(4, 1.0, 2).unwrap(), UpdateOrder::default());
        assert_eq!(total_message_volume(&ada, 16, 3, 1, 10), 180.0);
        let centralized =
            Strategy::new(StrategyKind::CentralizedComplete, UpdateOrder::default()).unwrap();
        assert_eq!(total_message_volume(&centralized, 4, 1, 1, 100), 150.0);
        assert_eq!(total_message_volume(&centralized, 1, 5, 3, 100), 0.0);
    }

    #[test]
    fn single_worker_run_matches_plain_sgd() {
        let dataset_spec = DatasetSpec {
            n_samples: 60,
            input_dim: 4,
            n_classes: 3,
            cluster_spread: 0.5,
            heterogeneity: 0.0,
            seed: 41,
        };
        let dataset = generate_dataset::<f64>(&dataset_spec).unwrap();
        for kind in StrategyKind::ALL {
            let strategy = if kind == StrategyKind::DecentralizedAdaptive {
                Strategy::adaptive(AdaParams::new(2, 1.0, 1).unwrap(), UpdateOrder::default())
            } else {
                Strategy::new(kind, UpdateOrder::default()).unwrap()
            };
            let mut config = RunConfig::new(strategy, 1, 3, 8);
            config.seed = 7;
            config.data_seed = 41;
            let (_, summary) = run_experiment(&config, &dataset).unwrap();

            // plain SGD over the same batch stream
            let model = config.model_spec(4, 3).unwrap();
            let (train_idx, _) = train_test_split(60, 0.2, 41).unwrap();
            let labels: Vec<usize> = train_idx.iter().map(|&s| dataset.labels[s]).collect();
            let shard_seed = derive_seed(41, &[0x73686172, 7]);
            let plan = shard(train_idx.len(), 1, 0.0, &labels, shard_seed).unwrap();
            let steps = plan.steps_per_epoch(8).unwrap();
            let mut params = model.init_params::<f64>();
            for epoch in 0..3 {
                for step in 0..steps {
                    let local = plan.batch_indices(0, 8, epoch, step, shard_seed).unwrap();
                    let ids: Vec<usize> = local.into_iter().map(|i| train_idx[i]).collect();
                    let batch = dataset.batch(&ids);
                    let (_, grad) = model.loss_and_grad(&params, &batch).unwrap();
                    for (p, g) in params.values_mut().iter_mut().zip(grad.values()) {
                        *p -= 0.1 * g;
                    }
                }
            }
            let engine_params = summary.final_params.as_ref().unwrap();
            assert_eq!(engine_params.values(), params.values(), "{kind:?}");
        }
    }

    #[test]
    fn saturated_ada_first_epoch_matches_decentralized_complete() {
        // k0 = (n-1)/2 makes the epoch-0 lattice the complete graph
        let dataset_spec = DatasetSpec {
            n_samples: 180,
            input_dim: 6,
            n_classes: 3,
            cluster_spread: 0.8,
            heterogeneity: 0.5,
            seed: 31,
        };
        let dataset = generate_dataset::<f64>(&dataset_spec).unwrap();
        let ada = Strategy::adaptive(AdaParams::new(4, 10.0, 2).unwrap(), UpdateOrder::default());
        let complete =
            Strategy::new(StrategyKind::DecentralizedComplete, UpdateOrder::default()).unwrap();
        let run = |strategy: Strategy| {
            let mut config = RunConfig::new(strategy, 9, 1, 4);
            config.seed = 2;
            config.data_seed = 31;
            config.heterogeneity = 0.5;
            run_experiment(&config, &dataset).unwrap().1
        };
        let ada_params = run(ada).final_params.unwrap();
        let complete_params = run(complete).final_params.unwrap();
        assert_eq!(ada_params.values(), complete_params.values());
    }

    #[test]
    fn all_strategies_learn_a_separable_task() {
        // tight clusters; every strategy reaches full training accuracy well
        // inside 50 epochs (n = 9 so the torus grid exists)
        let dataset_spec = DatasetSpec {
            n_samples: 360,
            input_dim: 6,
            n_classes: 3,
            cluster_spread: 0.05,
            heterogeneity: 0.0,
            seed: 77,
        };
        let dataset = generate_dataset::<f64>(&dataset_spec).unwrap();
        for kind in StrategyKind::ALL {
            let strategy = if kind == StrategyKind::DecentralizedAdaptive {
                Strategy::adaptive(AdaParams::new(4, 0.2, 2).unwrap(), UpdateOrder::default())
            } else {
                Strategy::new(kind, UpdateOrder::default()).unwrap()
            };
            let mut config = RunConfig::new(strategy, 9, 50, 8);
            config.seed = 5;
            config.data_seed = 77;
            config.holdout_fraction = 0.0; // accuracy evaluated on the train set
            config.schedule = LrSchedule::constant(0.5).unwrap();
            let (_, summary) = run_experiment(&config, &dataset).unwrap();
            let reached = summary.epoch_accuracy.contains(&1.0);
            assert!(reached, "{kind:?} never hit training accuracy 1.0");
        }
    }

    #[test]
    fn divergence_is_reported_with_context() {
        let strategy =
            Strategy::new(StrategyKind::DecentralizedRing, UpdateOrder::default()).unwrap();
        let dataset_spec = DatasetSpec {
            n_samples: 64,
            input_dim: 4,
            n_classes: 2,
            cluster_spread: 1.0,
            heterogeneity: 0.0,
            seed: 5,
        };
        let dataset = generate_dataset::<f64>(&dataset_spec).unwrap();
        // cross-entropy gradients are bounded by the input scale, so only a
        // rate near the f64 overflow threshold can push the logits to inf
        let mut config = RunConfig::new(strategy, 4, 8, 4);
        config.data_seed = 5;
        config.schedule = LrSchedule::constant(1e306).unwrap();
        match run_experiment(&config, &dataset) {
            Err(EngineError::Diverged { strategy, .. }) => assert_eq!(strategy, "d_ring"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
