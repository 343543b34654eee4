//! Snapshot dynamic mode decomposition: unconstrained and rank-constrained
//! operator fits, and the spectrum of the fitted operator.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{check_finite, eigenpairs, pinv, DenseMatrix, SchattenP, ToleranceConfig};
use crate::solver::{solve_lowrank, LowRankSolution};

/// Time-ordered states `s_0, ..., s_{T-1}` stored as the columns of an
/// `n x T` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSeries {
    states: DenseMatrix,
}

impl SnapshotSeries {
    pub fn new(states: DenseMatrix) -> Result<Self> {
        if states.ncols() < 2 {
            return Err(Error::TooFewSnapshots(states.ncols()));
        }
        check_finite(&states)?;
        Ok(Self { states })
    }

    /// Builds a series from a list of state vectors.
    pub fn from_states(states: &[Vec<f64>]) -> Result<Self> {
        let n = states.first().map_or(0, Vec::len);
        if let Some(bad) = states.iter().find(|s| s.len() != n) {
            return Err(Error::mismatch(format!(
                "state of dimension {} in a series of dimension {n}",
                bad.len()
            )));
        }
        let flat: Vec<f64> = states.iter().flatten().copied().collect();
        Self::new(DenseMatrix::from_column_slice(n, states.len(), &flat))
    }

    /// Generates `s_{t+1} = A s_t` for `count` states starting at `start`.
    pub fn from_linear_map(a: &DenseMatrix, start: &[f64], count: usize) -> Result<Self> {
        let n = start.len();
        if a.shape() != (n, n) {
            return Err(Error::mismatch(format!(
                "dynamics is {}x{} but the start state has dimension {n}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut states = DenseMatrix::zeros(n, count);
        if count > 0 {
            states.set_column(0, &nalgebra::DVector::from_column_slice(start));
        }
        for t in 1..count {
            let next = a * states.column(t - 1);
            states.set_column(t, &next);
        }
        Self::new(states)
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn count(&self) -> usize {
        self.states.ncols()
    }

    pub fn states(&self) -> &DenseMatrix {
        &self.states
    }
}

/// `X = [s_0 .. s_{T-2}]`, `Y = [s_1 .. s_{T-1}]`.
pub fn snapshot_pairs(series: &SnapshotSeries) -> (DenseMatrix, DenseMatrix) {
    let t = series.count();
    let x = series.states.columns(0, t - 1).into_owned();
    let y = series.states.columns(1, t - 1).into_owned();
    (x, y)
}

/// Least-squares operator `Y X^+` with no rank constraint.
pub fn unconstrained_dmd(
    x: &DenseMatrix,
    y: &DenseMatrix,
    tol: &ToleranceConfig,
) -> Result<DenseMatrix> {
    if x.shape() != y.shape() {
        return Err(Error::mismatch(format!(
            "X is {}x{} but Y is {}x{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(y * pinv(x, tol)?)
}

/// Optimal rank-`k` DMD operator of a snapshot series.
pub fn lowrank_dmd(
    series: &SnapshotSeries,
    k: usize,
    p: SchattenP,
    tol: &ToleranceConfig,
) -> Result<LowRankSolution> {
    let (x, y) = snapshot_pairs(series);
    solve_lowrank(&x, &y, k, p, tol)
}

/// Eigenvalues, unit-norm modes and eigen-residuals of a fitted operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<Complex64>,
    /// `n x k'`, one mode per column.
    pub modes: DMatrix<Complex64>,
    /// `||M w - lambda w||_2` for each pair, measured on the full operator.
    pub residuals: Vec<f64>,
}

/// Spectrum of `M*_k` via its `k' x k'` compression `Q^T Y X^+ Q`.
///
/// The nonzero eigenvalues of the compression are those of `M*_k`; modes are
/// lifted back as `Q w` and normalized.
pub fn dmd_modes(
    solution: &LowRankSolution,
    x: &DenseMatrix,
    y: &DenseMatrix,
    tol: &ToleranceConfig,
) -> Result<SpectralSummary> {
    let q = &solution.q_basis;
    let w = unconstrained_dmd(x, y, tol)?;
    if w.nrows() != q.nrows() {
        return Err(Error::mismatch(
            "solution was not produced from these snapshot matrices",
        ));
    }
    let compressed = q.transpose() * (&w * q);
    let pairs = eigenpairs(&compressed)?;

    let qc = q.map(|v| Complex64::new(v, 0.0));
    let mc = solution.m_star.map(|v| Complex64::new(v, 0.0));
    let mut modes = DMatrix::<Complex64>::zeros(q.nrows(), pairs.len());
    let mut eigenvalues = Vec::with_capacity(pairs.len());
    let mut residuals = Vec::with_capacity(pairs.len());
    for (j, pair) in pairs.iter().enumerate() {
        let lifted = &qc * &pair.vector;
        let norm = lifted.norm();
        let mode = if norm > 0.0 {
            lifted / Complex64::new(norm, 0.0)
        } else {
            lifted
        };
        residuals.push((&mc * &mode - &mode * pair.value).norm());
        modes.set_column(j, &mode);
        eigenvalues.push(pair.value);
    }
    Ok(SpectralSummary {
        eigenvalues,
        modes,
        residuals,
    })
}
