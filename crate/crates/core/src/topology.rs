//! Communication graphs and their mixing matrices.
//!
//! Five graph families are supported: ring, torus, ring lattice, exponential
//! and complete. Each worker averages parameters with the neighbors listed
//! here; the mixing matrix assigns uniform weight `1/(degree+1)` to a node
//! itself and each of its neighbors, which keeps every row stochastic and,
//! for the regular undirected families, makes the matrix symmetric and
//! doubly stochastic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

/// Graph families used for decentralized parameter averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Torus,
    RingLattice,
    Exponential,
    Complete,
}

impl TopologyKind {
    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Torus => "torus",
            TopologyKind::RingLattice => "ring_lattice",
            TopologyKind::Exponential => "exponential",
            TopologyKind::Complete => "complete",
        }
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ring" => Ok(TopologyKind::Ring),
            "torus" => Ok(TopologyKind::Torus),
            "ring_lattice" | "ring-lattice" | "lattice" => Ok(TopologyKind::RingLattice),
            "exponential" => Ok(TopologyKind::Exponential),
            "complete" => Ok(TopologyKind::Complete),
            other => Err(TopologyError::UnknownKind(other.to_string())),
        }
    }
}

/// Errors from graph construction.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("unknown topology kind `{0}`")]
    UnknownKind(String),
    #[error("worker count n={n} violates n >= 3")]
    WorkerCountTooSmall { n: usize },
    #[error("ring lattice requires a coordination number k")]
    MissingCoordinationNumber,
    #[error("coordination number k={k} violates 1 <= k <= (n-1)/2 for n={n}")]
    InvalidCoordinationNumber { k: usize, n: usize },
    #[error("torus dims ({r}, {c}) violate r*c = n with r >= 3, c >= 3 for n={n}")]
    InvalidTorusDims { r: usize, c: usize, n: usize },
    #[error("no torus factorization r*c = {n} with r >= 3, c >= 3 exists")]
    NoTorusFactorization { n: usize },
    #[error("coordination number k is only meaningful for the ring lattice")]
    UnexpectedCoordinationNumber,
}

/// A named communication graph over `n` workers.
///
/// Neighbor lists never include the owning node and are deterministic given
/// the construction inputs. All kinds except [`TopologyKind::Exponential`]
/// are undirected with symmetric neighbor relations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub n: usize,
    /// Coordination number; present for ring lattices only.
    pub k: Option<usize>,
    /// Grid shape; present for tori only.
    pub torus_dims: Option<(usize, usize)>,
    pub directed: bool,
    /// Per-node ordered neighbor lists (self excluded).
    pub neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Node degree (out-degree for directed kinds).
    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// Undirected edge count, or arc count for directed kinds.
    pub fn edge_count(&self) -> usize {
        let total: usize = self.neighbors.iter().map(Vec::len).sum();
        if self.directed {
            total
        } else {
            total / 2
        }
    }
}

/// Build one of the five graphs.
///
/// `k` is required for [`TopologyKind::RingLattice`] and rejected elsewhere.
/// `torus_dims` selects the torus grid; when omitted the most-square
/// factorization of `n` with both sides at least 3 is chosen.
pub fn build_topology(
    kind: TopologyKind,
    n: usize,
    k: Option<usize>,
    torus_dims: Option<(usize, usize)>,
) -> Result<Topology, TopologyError> {
    if n < 3 {
        return Err(TopologyError::WorkerCountTooSmall { n });
    }
    if k.is_some() && kind != TopologyKind::RingLattice {
        return Err(TopologyError::UnexpectedCoordinationNumber);
    }
    match kind {
        TopologyKind::Ring => Ok(Topology {
            kind,
            n,
            k: None,
            torus_dims: None,
            directed: false,
            neighbors: (0..n).map(|i| ring_lattice_neighbors(i, n, 1)).collect(),
        }),
        TopologyKind::RingLattice => {
            let k = k.ok_or(TopologyError::MissingCoordinationNumber)?;
            if k < 1 || 2 * k > n - 1 {
                return Err(TopologyError::InvalidCoordinationNumber { k, n });
            }
            Ok(Topology {
                kind,
                n,
                k: Some(k),
                torus_dims: None,
                directed: false,
                neighbors: (0..n).map(|i| ring_lattice_neighbors(i, n, k)).collect(),
            })
        }
        TopologyKind::Torus => {
            let (r, c) = match torus_dims {
                Some(dims) => dims,
                None => most_square_torus_dims(n)?,
            };
            if r * c != n || r < 3 || c < 3 {
                return Err(TopologyError::InvalidTorusDims { r, c, n });
            }
            let neighbors = (0..n)
                .map(|i| {
                    let (row, col) = (i / c, i % c);
                    let mut out = vec![
                        ((row + r - 1) % r) * c + col,
                        ((row + 1) % r) * c + col,
                        row * c + (col + c - 1) % c,
                        row * c + (col + 1) % c,
                    ];
                    out.sort_unstable();
                    out
                })
                .collect();
            Ok(Topology {
                kind,
                n,
                k: None,
                torus_dims: Some((r, c)),
                directed: false,
                neighbors,
            })
        }
        TopologyKind::Exponential => Ok(Topology {
            kind,
            n,
            k: None,
            torus_dims: None,
            directed: true,
            neighbors: (0..n).map(|i| exponential_neighbors(i, n)).collect(),
        }),
        TopologyKind::Complete => Ok(Topology {
            kind,
            n,
            k: None,
            torus_dims: None,
            directed: false,
            neighbors: (0..n)
                .map(|i| (0..n).filter(|&j| j != i).collect())
                .collect(),
        }),
    }
}

/// Neighbors at ring distance `1..=k` on each side, ascending distance then index.
fn ring_lattice_neighbors(i: usize, n: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * k);
    for d in 1..=k {
        let mut pair = [(i + n - d) % n, (i + d) % n];
        pair.sort_unstable();
        out.extend_from_slice(&pair);
    }
    out
}

/// Out-neighbors `{(i + 2^m) mod n : m = 0..=floor(log2(n-1))}` in ascending
/// `m` order, with self hits and duplicates dropped.
pub fn exponential_neighbors(i: usize, n: usize) -> Vec<usize> {
    debug_assert!(n >= 3 && i < n);
    let mut out = Vec::new();
    let mut offset = 1usize;
    while offset < n {
        let j = (i + offset) % n;
        if j != i && !out.contains(&j) {
            out.push(j);
        }
        offset *= 2;
    }
    out
}

/// The most-square `(r, c)` with `r * c = n`, `r <= c`, both at least 3.
pub fn most_square_torus_dims(n: usize) -> Result<(usize, usize), TopologyError> {
    let mut best = None;
    let mut r = 3;
    while r * r <= n {
        if n.is_multiple_of(r) && n / r >= 3 {
            best = Some((r, n / r));
        }
        r += 1;
    }
    best.ok_or(TopologyError::NoTorusFactorization { n })
}

/// Row-stochastic averaging weights over a topology.
///
/// `weights[i][j]` is positive exactly when `j == i` or `j` is a neighbor of
/// `i`; every row sums to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingMatrix<T> {
    pub n: usize,
    /// Dense row-major `n * n` weights.
    pub weights: Vec<T>,
}

impl<T: Scalar> MixingMatrix<T> {
    /// Uniform `1/(d_i + 1)` weights over self plus neighbors.
    pub fn from_topology(topology: &Topology) -> Self {
        let n = topology.n;
        let mut weights = vec![T::zero(); n * n];
        for i in 0..n {
            let w = T::one() / T::from_count(topology.degree(i) + 1);
            weights[i * n + i] = w;
            for &j in &topology.neighbors[i] {
                weights[i * n + j] = w;
            }
        }
        MixingMatrix { n, weights }
    }

    /// The identity matrix: no mixing at all.
    pub fn identity(n: usize) -> Self {
        let mut weights = vec![T::zero(); n * n];
        for i in 0..n {
            weights[i * n + i] = T::one();
        }
        MixingMatrix { n, weights }
    }

    /// Uniform `1/n` everywhere, the complete-graph average. Valid for any
    /// `n >= 1`, which covers the degenerate one- and two-worker runs.
    pub fn uniform(n: usize) -> Self {
        let w = T::one() / T::from_count(n);
        MixingMatrix {
            n,
            weights: vec![w; n * n],
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// Nonzero entries of row `i` in ascending column order.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, T)> {
        self.row(i)
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > T::zero())
            .map(|(j, w)| (j, *w))
            .collect()
    }

    pub fn row_sum(&self, i: usize) -> T {
        self.row(i).iter().fold(T::zero(), |acc, &w| acc + w)
    }

    pub fn column_sum(&self, j: usize) -> T {
        (0..self.n).fold(T::zero(), |acc, i| acc + self.entry(i, j))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if (self.entry(i, j) - self.entry(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Shorthand for the uniform mixing matrix of a topology.
pub fn mixing_matrix<T: Scalar>(topology: &Topology) -> MixingMatrix<T> {
    MixingMatrix::from_topology(topology)
}
