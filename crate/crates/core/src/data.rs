//! Deterministic synthetic datasets and per-worker shards.
//!
//! Datasets are Gaussian class clusters around deterministic means. Sharding
//! partitions the sample indices into equal-size per-worker shards; the
//! `heterogeneity` knob mixes a label-sorted assignment (h = 1, each shard
//! label-contiguous) with a uniform shuffle (h = 0, shards close to IID).
//! Everything is reproducible from the seeds alone.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::Batch;
use crate::num::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("n_samples={n_samples} violates n_samples >= n_classes={n_classes}")]
    TooFewSamples { n_samples: usize, n_classes: usize },
    #[error("heterogeneity {0} outside [0, 1]")]
    HeterogeneityOutOfRange(f64),
    #[error("cluster_spread must be positive, got {0}")]
    NonPositiveSpread(f64),
    #[error("dimension `{field}` must be at least 1")]
    ZeroDim { field: &'static str },
    #[error("n_workers={n_workers} exceeds n_samples={n_samples}")]
    TooManyWorkers { n_workers: usize, n_samples: usize },
    #[error("n_workers must be at least 1")]
    NoWorkers,
    #[error("batch_size={batch_size} exceeds shard size {shard_size}")]
    BatchTooLarge {
        batch_size: usize,
        shard_size: usize,
    },
    #[error("holdout fraction {0} outside [0, 1)")]
    BadHoldoutFraction(f64),
    #[error("csv import: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv import: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv import: expected header f0..f{{d-1}},label, got `{0}`")]
    BadHeader(String),
    #[error("csv import: row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("csv import: file has no data rows")]
    Empty,
}

/// Parameters of a synthetic classification dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub input_dim: usize,
    pub n_classes: usize,
    pub cluster_spread: f64,
    /// 0 = IID shards, 1 = fully label-sorted shards.
    pub heterogeneity: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.input_dim == 0 {
            return Err(DataError::ZeroDim { field: "input_dim" });
        }
        if self.n_classes == 0 {
            return Err(DataError::ZeroDim { field: "n_classes" });
        }
        if self.n_samples < self.n_classes {
            return Err(DataError::TooFewSamples {
                n_samples: self.n_samples,
                n_classes: self.n_classes,
            });
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return Err(DataError::HeterogeneityOutOfRange(self.heterogeneity));
        }
        if self.cluster_spread <= 0.0 {
            return Err(DataError::NonPositiveSpread(self.cluster_spread));
        }
        Ok(())
    }
}

/// A full in-memory dataset: row-major inputs plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Vec<T>,
    pub labels: Vec<usize>,
    pub input_dim: usize,
    pub n_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.inputs[s * self.input_dim..(s + 1) * self.input_dim]
    }

    /// Assemble a batch from sample indices.
    pub fn batch(&self, ids: &[usize]) -> Batch<T> {
        let mut inputs = Vec::with_capacity(ids.len() * self.input_dim);
        let mut labels = Vec::with_capacity(ids.len());
        for &s in ids {
            inputs.extend_from_slice(self.row(s));
            labels.push(self.labels[s]);
        }
        Batch {
            inputs,
            labels,
            input_dim: self.input_dim,
        }
    }
}

/// Class means: the standard simplex vertices `e_c` when the input
/// dimension allows it, otherwise seeded unit vectors.
fn class_means(n_classes: usize, input_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    if input_dim >= n_classes {
        (0..n_classes)
            .map(|c| {
                let mut mean = vec![0.0; input_dim];
                mean[c] = 1.0;
                mean
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6d65616e]));
        (0..n_classes)
            .map(|_| {
                let raw: Vec<f64> = (0..input_dim).map(|_| standard_normal(&mut rng)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                raw.into_iter().map(|v| v / norm).collect()
            })
            .collect()
    }
}

/// Standard normal draw via Box-Muller.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Deterministic sub-seed derivation (splitmix64 over the tag chain).
/// Part of the reproducibility contract: every seeded stream in a run is
/// derived from the config seeds through this function.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    for &tag in tags {
        state = state.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(tag);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        state = z ^ (z >> 31);
    }
    state
}

/// Seeded Fisher-Yates permutation of `0..n`.
fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order
}

/// Generate the Gaussian-cluster dataset. Labels round-robin over classes,
/// so class counts are exactly balanced when `n_classes` divides `n_samples`.
pub fn generate_dataset<T: Scalar>(spec: &DatasetSpec) -> Result<Dataset<T>, DataError> {
    spec.validate()?;
    let means = class_means(spec.n_classes, spec.input_dim, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x64617461]));
    let mut inputs = Vec::with_capacity(spec.n_samples * spec.input_dim);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for s in 0..spec.n_samples {
        let label = s % spec.n_classes;
        labels.push(label);
        for &mean in &means[label] {
            let v = mean + spec.cluster_spread * standard_normal(&mut rng);
            inputs.push(T::from_f64_lossy(v));
        }
    }
    Ok(Dataset {
        inputs,
        labels,
        input_dim: spec.input_dim,
        n_classes: spec.n_classes,
    })
}

/// Deterministic holdout split: a seeded shuffle, the first
/// `round(fraction * n)` indices held out, both sides sorted ascending.
pub fn train_test_split(
    n_samples: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(DataError::BadHoldoutFraction(holdout_fraction));
    }
    let n_test = ((n_samples as f64) * holdout_fraction).round() as usize;
    let order = permutation(n_samples, derive_seed(seed, &[0x73706c69]));
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Equal-size partition of `0..n_samples` into per-worker shards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShardPlan {
    pub n_workers: usize,
    pub shard_size: usize,
    /// `assignments[w]` lists the sample indices of worker `w`.
    pub assignments: Vec<Vec<usize>>,
}

/// Partition samples into equal shards, mixing label-sorted and shuffled
/// assignment by `heterogeneity`. Remainder samples that do not fill a full
/// shard are dropped from the tail of the shuffled order.
pub fn shard(
    n_samples: usize,
    n_workers: usize,
    heterogeneity: f64,
    labels: &[usize],
    seed: u64,
) -> Result<ShardPlan, DataError> {
    if n_workers == 0 {
        return Err(DataError::NoWorkers);
    }
    if n_workers > n_samples {
        return Err(DataError::TooManyWorkers {
            n_workers,
            n_samples,
        });
    }
    if !(0.0..=1.0).contains(&heterogeneity) {
        return Err(DataError::HeterogeneityOutOfRange(heterogeneity));
    }
    debug_assert_eq!(labels.len(), n_samples);
    let shard_size = n_samples / n_workers;
    let used = shard_size * n_workers;
    let mut order = permutation(n_samples, derive_seed(seed, &[0x73686172]));
    order.truncate(used);

    // first `sorted_count` entries of the shuffle are assigned label-contiguously
    let sorted_count = ((heterogeneity * used as f64).round() as usize).min(used);
    let mut sorted_pool: Vec<usize> = order[..sorted_count].to_vec();
    sorted_pool.sort_by_key(|&s| (labels[s], s));
    let random_pool = &order[sorted_count..];

    let mut assignments = Vec::with_capacity(n_workers);
    let (mut si, mut ri) = (0usize, 0usize);
    for w in 0..n_workers {
        let quota = sorted_count / n_workers + usize::from(w < sorted_count % n_workers);
        let mut shard = Vec::with_capacity(shard_size);
        shard.extend_from_slice(&sorted_pool[si..si + quota]);
        si += quota;
        let fill = shard_size - quota;
        shard.extend_from_slice(&random_pool[ri..ri + fill]);
        ri += fill;
        assignments.push(shard);
    }
    Ok(ShardPlan {
        n_workers,
        shard_size,
        assignments,
    })
}

impl ShardPlan {
    /// Number of full batches one worker can draw per epoch.
    pub fn steps_per_epoch(&self, batch_size: usize) -> Result<usize, DataError> {
        if batch_size == 0 || batch_size > self.shard_size {
            return Err(DataError::BatchTooLarge {
                batch_size,
                shard_size: self.shard_size,
            });
        }
        Ok(self.shard_size / batch_size)
    }

    /// Sample indices of one batch. The worker's shard is reshuffled once per
    /// epoch (seeded by worker and epoch); batches tile the shuffled shard,
    /// and `step` wraps modulo the per-epoch step count.
    pub fn batch_indices(
        &self,
        worker: usize,
        batch_size: usize,
        epoch: usize,
        step: usize,
        seed: u64,
    ) -> Result<Vec<usize>, DataError> {
        let steps = self.steps_per_epoch(batch_size)?;
        let perm = permutation(
            self.shard_size,
            derive_seed(seed, &[0x62617463, worker as u64, epoch as u64]),
        );
        let start = (step % steps) * batch_size;
        Ok(perm[start..start + batch_size]
            .iter()
            .map(|&local| self.assignments[worker][local])
            .collect())
    }
}

/// Import a dataset from CSV with header `f0,..,f{d-1},label`.
pub fn load_csv_dataset<T: Scalar, R: Read>(reader: R) -> Result<Dataset<T>, DataError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let width = headers.len();
    if width < 2 || headers.iter().next_back() != Some("label") {
        return Err(DataError::BadHeader(
            headers.iter().collect::<Vec<_>>().join(","),
        ));
    }
    for (d, field) in headers.iter().take(width - 1).enumerate() {
        if field != format!("f{d}") {
            return Err(DataError::BadHeader(
                headers.iter().collect::<Vec<_>>().join(","),
            ));
        }
    }
    let input_dim = width - 1;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, row) in csv_reader.records().enumerate() {
        let row = row?;
        if row.len() != width {
            return Err(DataError::BadRow {
                row: row_idx + 2,
                message: format!("expected {width} fields, got {}", row.len()),
            });
        }
        for field in row.iter().take(input_dim) {
            let v: f64 = field.parse().map_err(|e| DataError::BadRow {
                row: row_idx + 2,
                message: format!("bad feature `{field}`: {e}"),
            })?;
            inputs.push(T::from_f64_lossy(v));
        }
        let label: usize = row[input_dim].parse().map_err(|e| DataError::BadRow {
            row: row_idx + 2,
            message: format!("bad label `{}`: {e}", &row[input_dim]),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    let n_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Ok(Dataset {
        inputs,
        labels,
        input_dim,
        n_classes,
    })
}

/// Convenience wrapper over [`load_csv_dataset`] for a filesystem path.
pub fn load_csv_dataset_path<T: Scalar>(path: &Path) -> Result<Dataset<T>, DataError> {
    let file = std::fs::File::open(path)?;
    load_csv_dataset(file)
}
