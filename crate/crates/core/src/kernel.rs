//! Rank-constrained operator regression in a reproducing-kernel feature space.
//!
//! Feature-space objects are never materialized. With `Psi_X`, `Psi_Y` the
//! (possibly infinite) feature matrices of the training points, everything is
//! expressed through the Gram blocks `G_XX = Psi_X^T Psi_X`,
//! `G_YY = Psi_Y^T Psi_Y` and `G_YX = Psi_Y^T Psi_X`:
//!
//! * `Pi`, the projector onto the row space of `Psi_X`, comes from the
//!   eigendecomposition of `G_XX`;
//! * `Z = Psi_Y Pi` has `Z^T Z = Pi G_YY Pi`, whose eigenpairs give the
//!   singular values `sigma_i` and right singular vectors `v_i` of `Z`;
//! * the left singular vectors are `Psi_Y a_i` with `a_i = Pi v_i / sigma_i`.
//!
//! The optimal operator is then `M* = Psi_Y A A^T G_YY G_XX^+ Psi_X^T`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, eigenpairs, DenseMatrix, ToleranceConfig};

/// Positive-definite kernel on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `x^T y`
    Linear,
    /// `(x^T y + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `exp(-||x - y||^2 / (2 bandwidth^2))`
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 || offset.is_nan() || offset < 0.0 || !offset.is_finite() {
                    Err(Error::InvalidArgument(format!(
                        "polynomial kernel needs degree >= 1 and offset >= 0, got ({degree}, {offset})"
                    )))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Gaussian { bandwidth } => {
                if bandwidth > 0.0 && bandwidth.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "gaussian bandwidth must be positive, got {bandwidth}"
                    )))
                }
            }
        }
    }

    pub fn evaluate(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { degree, offset } => (dot(a, b) + offset).powi(degree as i32),
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `G[i][j] = kernel(a_i, b_j)` for point sets stored as matrix columns.
pub fn gram(kernel: &KernelSpec, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::mismatch(format!(
            "points of dimension {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    check_finite(a)?;
    check_finite(b)?;
    Ok(DenseMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        kernel.evaluate(a.column(i).as_slice(), b.column(j).as_slice())
    }))
}

/// Output of [`kernel_lowrank_solve`], in coordinates over the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSolution {
    /// `q x k'`; column `i` holds `a_i`, so `phi_i(Z) = Psi_Y a_i`.
    pub coeff_projector: DenseMatrix,
    /// Singular values of `Z`, descending (length `q`).
    pub z_sigma: Vec<f64>,
    pub eigenvalues: Vec<Complex64>,
    /// `q x k'`; eigenfunction `i` is `x -> sum_j c_ji kernel(x_j, x)`.
    pub eigfn_coeffs: DMatrix<Complex64>,
    /// `||Psi_Y - M* Psi_X||_F^2` evaluated through Gram blocks.
    pub achieved_error_sq: f64,
    /// Tail of `sigma(Z)^2` plus `||Psi_Y (I - Pi)||_F^2`.
    pub predicted_error_sq: f64,
    /// Numerical rank of `G_XX`.
    pub rank_x: usize,
    pub k_requested: usize,
    /// Diagonal loading that was added to `G_XX`.
    pub jitter: f64,
}

impl KernelSolution {
    pub fn k_effective(&self) -> usize {
        self.coeff_projector.ncols()
    }

    /// Eigenfunction values at the training inputs (`q x k'`).
    pub fn training_grid_values(
        &self,
        kernel: &KernelSpec,
        training_points: &DenseMatrix,
    ) -> Result<DMatrix<Complex64>> {
        let g = gram(kernel, training_points, training_points)?;
        Ok(complexify(&g.transpose()) * &self.eigfn_coeffs)
    }
}

fn complexify(m: &DenseMatrix) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

struct SortedEigen {
    values: Vec<f64>,
    vectors: DenseMatrix,
}

fn sorted_symmetric_eigen(m: &DenseMatrix) -> Result<SortedEigen> {
    let sym = (m + m.transpose()) * 0.5;
    let dec = SymmetricEigen::try_new(sym, f64::EPSILON, 100_000)
        .ok_or(Error::NonConvergence("gram eigendecomposition"))?;
    let mut order: Vec<usize> = (0..dec.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| dec.eigenvalues[j].total_cmp(&dec.eigenvalues[i]));
    Ok(SortedEigen {
        values: order.iter().map(|&i| dec.eigenvalues[i]).collect(),
        vectors: dec.eigenvectors.select_columns(order.iter()),
    })
}

fn check_gram_psd(e: &SortedEigen, tol: &ToleranceConfig) -> Result<()> {
    let top = e.values.first().copied().unwrap_or(0.0).max(1.0);
    match e.values.last() {
        Some(&low) if low < -tol.psd_atol * top => Err(Error::NotPsd { eigenvalue: low }),
        _ => Ok(()),
    }
}

fn count_above(values: &[f64], rtol: f64) -> usize {
    match values.first() {
        Some(&top) if top > 0.0 => values.iter().take_while(|&&v| v > rtol * top).count(),
        _ => 0,
    }
}

/// Optimal rank-`k` operator between the feature embeddings of `x_points`
/// and `y_points` (columns are points, pairs matched by index).
pub fn kernel_lowrank_solve(
    kernel: &KernelSpec,
    x_points: &DenseMatrix,
    y_points: &DenseMatrix,
    k: usize,
    tol: &ToleranceConfig,
) -> Result<KernelSolution> {
    kernel_lowrank_solve_with_jitter(kernel, x_points, y_points, k, 0.0, tol)
}

/// [`kernel_lowrank_solve`] with `jitter * I` added to `G_XX`.
pub fn kernel_lowrank_solve_with_jitter(
    kernel: &KernelSpec,
    x_points: &DenseMatrix,
    y_points: &DenseMatrix,
    k: usize,
    jitter: f64,
    tol: &ToleranceConfig,
) -> Result<KernelSolution> {
    kernel.validate()?;
    tol.validate()?;
    if x_points.shape() != y_points.shape() {
        return Err(Error::mismatch(format!(
            "x points are {}x{} but y points are {}x{}",
            x_points.nrows(),
            x_points.ncols(),
            y_points.nrows(),
            y_points.ncols()
        )));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "jitter must be >= 0, got {jitter}"
        )));
    }
    let q = x_points.ncols();
    let eye = DenseMatrix::identity(q, q);

    let gxx = gram(kernel, x_points, x_points)? + &eye * jitter;
    let gyy = gram(kernel, y_points, y_points)?;
    let gxy = gram(kernel, y_points, x_points)?.transpose();

    let ex = sorted_symmetric_eigen(&gxx)?;
    check_gram_psd(&ex, tol)?;
    check_gram_psd(&sorted_symmetric_eigen(&gyy)?, tol)?;
    let rank_x = count_above(&ex.values, tol.rank_rtol);
    let vr = ex.vectors.columns(0, rank_x);
    let proj = vr * vr.transpose();
    let mut gxx_pinv = vr.into_owned();
    for j in 0..rank_x {
        gxx_pinv.column_mut(j).scale_mut(1.0 / ex.values[j]);
    }
    let gxx_pinv = gxx_pinv * vr.transpose();

    let ez = sorted_symmetric_eigen(&(&proj * &gyy * &proj))?;
    let z_sigma: Vec<f64> = ez.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let k_eff = k.min(count_above(&ez.values, tol.rank_rtol));
    let mut coeff = &proj * ez.vectors.columns(0, k_eff);
    for (j, s) in z_sigma.iter().take(k_eff).enumerate() {
        coeff.column_mut(j).scale_mut(1.0 / s);
    }

    // Residual Psi_Y - M* Psi_X = Psi_Y T with T = I - A A^T G_YY Pi.
    let t = &eye - &coeff * (coeff.transpose() * &gyy * &proj);
    let achieved_error_sq = (t.transpose() * &gyy * &t).trace().max(0.0);
    let outside = &eye - &proj;
    let tail: f64 = ez.values[k_eff..].iter().map(|v| v.max(0.0)).sum();
    let predicted_error_sq = tail + (&outside * &gyy * &outside).trace().max(0.0);

    // M* = Phi B with Phi = Psi_Y A and B = A^T G_YY G_XX^+ Psi_X^T; the
    // nonzero spectrum of M* is that of B Phi = A^T G_YY G_XX^+ G_XY A.
    let b_coeff = coeff.transpose() * &gyy * &gxx_pinv;
    let compressed = &b_coeff * &gxy * &coeff;
    let left = eigenpairs(&compressed.transpose())?;

    let gxx_plain = gram(kernel, x_points, x_points)?;
    let b_c = complexify(&b_coeff.transpose());
    let mut eigfn_coeffs = DMatrix::<Complex64>::zeros(q, left.len());
    let mut eigenvalues = Vec::with_capacity(left.len());
    for (i, pair) in left.iter().enumerate() {
        let c = &b_c * &pair.vector;
        let values = complexify(&gxx_plain) * &c;
        eigfn_coeffs.set_column(i, &rescale_like(c, &values));
        eigenvalues.push(pair.value);
    }

    Ok(KernelSolution {
        coeff_projector: coeff,
        z_sigma,
        eigenvalues,
        eigfn_coeffs,
        achieved_error_sq,
        predicted_error_sq,
        rank_x,
        k_requested: k,
        jitter,
    })
}

/// Scales `c` by the factor that gives `values` unit norm with its entry of
/// largest modulus real and positive.
pub(crate) fn rescale_like(
    c: DVector<Complex64>,
    values: &DVector<Complex64>,
) -> DVector<Complex64> {
    let normalized = crate::linalg::normalize_phase(values.clone());
    let idx = (0..values.len())
        .max_by(|&i, &j| {
            values[i]
                .norm()
                .total_cmp(&values[j].norm())
                .then(j.cmp(&i))
        })
        .unwrap_or(0);
    if values.is_empty() {
        return c;
    }
    if values[idx].norm() == 0.0 {
        return c;
    }
    let factor = normalized[idx] / values[idx];
    c * factor
}

/// Values of every eigenfunction at `x_new`.
pub fn eigenfunction_eval(
    solution: &KernelSolution,
    kernel: &KernelSpec,
    training_points: &DenseMatrix,
    x_new: &[f64],
) -> Result<Vec<Complex64>> {
    if x_new.len() != training_points.nrows() {
        return Err(Error::mismatch(format!(
            "evaluation point has dimension {} but training points have {}",
            x_new.len(),
            training_points.nrows()
        )));
    }
    if training_points.ncols() != solution.eigfn_coeffs.nrows() {
        return Err(Error::mismatch("training points do not match the solution"));
    }
    let kv: Vec<f64> = training_points
        .column_iter()
        .map(|col| kernel.evaluate(col.as_slice(), x_new))
        .collect();
    Ok(solution
        .eigfn_coeffs
        .column_iter()
        .map(|c| c.iter().zip(&kv).map(|(cj, kj)| cj * kj).sum())
        .collect())
}
