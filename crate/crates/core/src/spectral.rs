//! Spectral diagnostics for mixing matrices.
//!
//! The second-largest eigenvalue modulus of the mixing matrix bounds how fast
//! repeated averaging contracts replica disagreement; its complement is the
//! spectral gap. The exponential graph is directed, so the general
//! (non-symmetric) eigenproblem is solved via a real Schur decomposition.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::num::Scalar;
use crate::topology::MixingMatrix;

const SCHUR_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SpectralError {
    #[error("eigensolve did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// Second eigenvalue modulus and spectral gap of a mixing matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Modulus of the second-largest eigenvalue, in `[0, 1]`.
    pub second_eigenvalue_modulus: f64,
    /// `1 - second_eigenvalue_modulus`.
    pub spectral_gap: f64,
}

/// Compute the spectral report of a row-stochastic mixing matrix.
///
/// Eigenvalue moduli are sorted descending and exactly one unit eigenvalue
/// (always present for a stochastic matrix) is dropped; the diagnostics are
/// reported in `f64` regardless of the matrix scalar type.
pub fn spectral_report<T: Scalar>(
    matrix: &MixingMatrix<T>,
) -> Result<SpectralReport, SpectralError> {
    let n = matrix.n;
    if n == 1 {
        return Ok(SpectralReport {
            second_eigenvalue_modulus: 0.0,
            spectral_gap: 1.0,
        });
    }
    let dense = DMatrix::from_fn(n, n, |i, j| {
        matrix
            .entry(i, j)
            .to_f64()
            .expect("mixing weight fits in f64")
    });
    let schur = nalgebra::linalg::Schur::try_new(dense, 1e-12, SCHUR_MAX_ITERATIONS).ok_or(
        SpectralError::NoConvergence {
            iterations: SCHUR_MAX_ITERATIONS,
        },
    )?;
    let mut moduli: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|ev| ev.norm())
        .collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).expect("eigenvalue moduli are finite"));
    let second = moduli[1].clamp(0.0, 1.0);
    Ok(SpectralReport {
        second_eigenvalue_modulus: second,
        spectral_gap: 1.0 - second,
    })
}
