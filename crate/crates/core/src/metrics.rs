//! Cross-replica dispersion statistics and the ranking analysis.
//!
//! For every parameter tensor we take its L2 norm on each worker, then
//! summarize how those norms spread across workers with four statistics:
//! Gini coefficient, index of dispersion, coefficient of variation and
//! quartile coefficient of dispersion. A ranking pass turns the per-strategy
//! dispersion scalars into ordinal ranks per iteration (1 = lowest variance).

use serde::Serialize;
use thiserror::Error;

use crate::model::ParamVector;
use crate::num::{mean, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("dispersion metrics need at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("dispersion metrics are defined for nonnegative values, got {0}")]
    NegativeValue(f64),
    #[error("dispersion metrics need finite values")]
    NonFiniteValue,
    #[error("dispersion capture needs at least 2 workers, got {0}")]
    TooFewWorkers(usize),
    #[error("workers do not share one tensor segmentation")]
    SegmentationMismatch,
    #[error("strategy streams misaligned at iteration {iteration}")]
    MisalignedStreams { iteration: usize },
    #[error("strategy `{0}` has an empty record stream")]
    EmptyStream(String),
}

fn validate<T: Scalar>(values: &[T]) -> Result<(), MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFewValues(values.len()));
    }
    for &v in values {
        if !v.is_finite() {
            return Err(MetricsError::NonFiniteValue);
        }
        if v < T::zero() {
            return Err(MetricsError::NegativeValue(v.to_f64().unwrap_or(f64::NAN)));
        }
    }
    Ok(())
}

/// A constant vector has zero dispersion exactly; the accumulations below
/// would leave rounding residue instead.
fn all_equal<T: Scalar>(values: &[T]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Gini coefficient: mean absolute pairwise difference normalized by twice
/// the mean. Zero mean returns zero by convention.
///
/// Computed from the sorted form `sum_i (2i - n - 1) x_(i) / (n^2 mu)`, which
/// equals the double sum `sum_ij |x_i - x_j| / (2 n^2 mu)`.
pub fn gini<T: Scalar>(values: &[T]) -> Result<T, MetricsError> {
    validate(values)?;
    if all_equal(values) {
        return Ok(T::zero());
    }
    let mu = mean(values);
    if mu == T::zero() {
        return Ok(T::zero());
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("validated finite"));
    let n = sorted.len();
    let weighted = sorted.iter().enumerate().fold(T::zero(), |acc, (i, &x)| {
        // (2(i+1) - n - 1) as a signed count
        let coeff = 2 * (i as i64 + 1) - n as i64 - 1;
        acc + T::from_f64_lossy(coeff as f64) * x
    });
    Ok(weighted / (T::from_count(n * n) * mu))
}

/// Population variance (divide by n) to mean ratio. Zero mean returns zero.
pub fn index_of_dispersion<T: Scalar>(values: &[T]) -> Result<T, MetricsError> {
    validate(values)?;
    if all_equal(values) {
        return Ok(T::zero());
    }
    let mu = mean(values);
    if mu == T::zero() {
        return Ok(T::zero());
    }
    Ok(population_variance(values, mu) / mu)
}

/// Population standard deviation to mean ratio. Zero mean returns zero.
pub fn coefficient_of_variation<T: Scalar>(values: &[T]) -> Result<T, MetricsError> {
    validate(values)?;
    if all_equal(values) {
        return Ok(T::zero());
    }
    let mu = mean(values);
    if mu == T::zero() {
        return Ok(T::zero());
    }
    Ok(population_variance(values, mu).sqrt() / mu)
}

/// `(Q3 - Q1) / (Q3 + Q1)` with linearly interpolated quartiles.
/// Zero `Q3 + Q1` returns zero by convention.
pub fn quartile_coefficient<T: Scalar>(values: &[T]) -> Result<T, MetricsError> {
    validate(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("validated finite"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let denom = q3 + q1;
    if denom == T::zero() {
        return Ok(T::zero());
    }
    Ok((q3 - q1) / denom)
}

fn population_variance<T: Scalar>(values: &[T], mu: T) -> T {
    let acc = values.iter().fold(T::zero(), |acc, &v| {
        let d = v - mu;
        acc + d * d
    });
    acc / T::from_count(values.len())
}

/// Quantile of a sorted slice by linear interpolation at position `(n-1) q`.
fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = T::from_f64_lossy(pos - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// True when a zero-denominator convention would fire for `values`.
fn is_degenerate<T: Scalar>(values: &[T]) -> bool {
    let mu = mean(values);
    if mu == T::zero() {
        return true;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    quantile_sorted(&sorted, 0.25) + quantile_sorted(&sorted, 0.75) == T::zero()
}

/// All four dispersion statistics of one tensor's cross-worker norms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorDispersion<T> {
    pub tensor: String,
    pub gini: T,
    pub index_of_dispersion: T,
    pub coefficient_of_variation: T,
    pub quartile_coefficient: T,
    /// Set when a zero-denominator convention fired while computing the row.
    pub degenerate: bool,
}

/// Per-tensor dispersion of the worker parameter vectors.
///
/// For each tensor segment the L2 norm is taken per worker and the four
/// statistics are computed over that `n_workers`-length vector.
pub fn capture_dispersion<T: Scalar>(
    workers: &[ParamVector<T>],
) -> Result<Vec<TensorDispersion<T>>, MetricsError> {
    if workers.len() < 2 {
        return Err(MetricsError::TooFewWorkers(workers.len()));
    }
    let layout = workers[0].layout();
    if workers.iter().any(|w| !w.shares_layout(&workers[0])) {
        return Err(MetricsError::SegmentationMismatch);
    }
    layout
        .segments()
        .iter()
        .enumerate()
        .map(|(seg_idx, seg)| {
            let norms: Vec<T> = workers.iter().map(|w| w.segment_norm(seg_idx)).collect();
            Ok(TensorDispersion {
                tensor: seg.name.clone(),
                gini: gini(&norms)?,
                index_of_dispersion: index_of_dispersion(&norms)?,
                coefficient_of_variation: coefficient_of_variation(&norms)?,
                quartile_coefficient: quartile_coefficient(&norms)?,
                degenerate: is_degenerate(&norms),
            })
        })
        .collect()
}

/// One emitted row of a training run: losses plus per-tensor dispersion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord<T> {
    pub run_id: String,
    pub strategy: String,
    pub epoch: usize,
    pub iteration: usize,
    pub mean_train_loss: T,
    /// Held-out accuracy; populated on the last iteration of each epoch.
    pub test_accuracy: Option<T>,
    pub tensors: Vec<TensorDispersion<T>>,
}

impl<T: Scalar> MetricsRecord<T> {
    /// Mean Gini over tensors, the default ranking reducer.
    pub fn mean_gini(&self) -> T {
        let vals: Vec<T> = self.tensors.iter().map(|t| t.gini).collect();
        mean(&vals)
    }
}

/// How per-tensor dispersion collapses to one scalar per strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RankReducer {
    MeanOverTensors,
}

/// Per-iteration ordinal ranks of the compared strategies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub strategies: Vec<String>,
    pub rows: Vec<RankRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub iteration: usize,
    /// `ranks[s]` is the rank of `strategies[s]`, 1 = lowest dispersion.
    pub ranks: Vec<usize>,
}

/// Rank strategies per iteration by their reduced dispersion scalar.
///
/// Streams must be aligned: same length, same iteration numbers. Ties break
/// by declaration order of the input streams.
pub fn rank_strategies<T: Scalar>(
    streams: &[(String, Vec<MetricsRecord<T>>)],
    reducer: RankReducer,
) -> Result<RankTable, MetricsError> {
    let strategies: Vec<String> = streams.iter().map(|(name, _)| name.clone()).collect();
    let Some((_, reference)) = streams.first() else {
        return Ok(RankTable {
            strategies,
            rows: Vec::new(),
        });
    };
    if reference.is_empty() {
        return Err(MetricsError::EmptyStream(strategies[0].clone()));
    }
    let mut rows = Vec::with_capacity(reference.len());
    for (idx, anchor) in reference.iter().enumerate() {
        let iteration = anchor.iteration;
        let mut scored: Vec<(usize, T)> = Vec::with_capacity(streams.len());
        for (s, (_, records)) in streams.iter().enumerate() {
            let record = records
                .get(idx)
                .filter(|r| r.iteration == iteration)
                .ok_or(MetricsError::MisalignedStreams { iteration })?;
            let scalar = match reducer {
                RankReducer::MeanOverTensors => record.mean_gini(),
            };
            scored.push((s, scalar));
        }
        // stable sort keeps declaration order on ties
        scored.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite dispersion"));
        let mut ranks = vec![0usize; streams.len()];
        for (rank0, (s, _)) in scored.iter().enumerate() {
            ranks[*s] = rank0 + 1;
        }
        rows.push(RankRow { iteration, ranks });
    }
    // a stream longer than the first one means the first is missing rows
    for (_, records) in streams {
        if records.len() > reference.len() {
            return Err(MetricsError::MisalignedStreams {
                iteration: records[reference.len()].iteration,
            });
        }
    }
    Ok(RankTable { strategies, rows })
}
