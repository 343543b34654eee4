//! Closed-form optimal rank-`k` solution of `min ||Y - M X||_{S,p}` over
//! `rank(M) <= k`, its error formula, and the weighted-norm variant.
//!
//! The minimizer is `M* = P_k Y X^+`, where `P_k` projects onto the leading
//! `k` left singular vectors of `Z = Y X^+ X`. It does not depend on `p`.

use crate::error::{Error, Result};
use crate::linalg::{
    check_finite, orthogonal_complement, pinv_from_svd, psd_sqrt, schatten_norm, svd, DenseMatrix,
    SchattenP, SvdFactors, ToleranceConfig,
};

/// Result of a rank-constrained solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankSolution {
    /// The optimal operator `M*_k` (`n x n`).
    pub m_star: DenseMatrix,
    /// Orthonormal basis of the range of the projector `P_k` (`n x k'`).
    ///
    /// For weighted solves this spans the range of `K^{1/2} M*_k`.
    pub q_basis: DenseMatrix,
    /// Singular values of `Z` (or `Z'` for weighted solves), descending.
    pub z_sigma: Vec<f64>,
    pub k_requested: usize,
    /// `||Y - M*_k X||_{S,p}` measured on the residual.
    pub achieved_error: f64,
    /// The same quantity from the closed-form error formula.
    pub predicted_error: f64,
    pub p: SchattenP,
    pub rank_x: usize,
    /// `sigma_k - sigma_{k+1}` of `Z`; `None` when `k = 0` or `k >= len(z_sigma)`.
    pub spectral_gap: Option<f64>,
}

impl LowRankSolution {
    /// Rank actually used, `min(k, rank(Z))`.
    pub fn k_effective(&self) -> usize {
        self.q_basis.ncols()
    }

    /// `P_k = Q Q^T`.
    pub fn projector(&self) -> DenseMatrix {
        &self.q_basis * self.q_basis.transpose()
    }
}

fn check_pair(x: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::mismatch(format!(
            "X is {}x{} but Y is {}x{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    check_finite(x)?;
    check_finite(y)
}

/// Quantities derived from `X` that every solve needs.
struct SourceSplit {
    rank_x: usize,
    /// Orthonormal basis of the row space of `X` (`q x r`).
    row_basis: DenseMatrix,
    x_pinv: DenseMatrix,
}

impl SourceSplit {
    fn new(x: &DenseMatrix, tol: &ToleranceConfig) -> Result<Self> {
        let f = svd(x)?;
        Ok(Self {
            rank_x: f.rank(tol),
            row_basis: f.row_space(tol),
            x_pinv: pinv_from_svd(&f, tol),
        })
    }

    /// `Y X^+ X`, i.e. `Y` restricted to the row space of `X`.
    fn restrict(&self, y: &DenseMatrix) -> DenseMatrix {
        (y * &self.row_basis) * self.row_basis.transpose()
    }
}

/// `Z = Y X^+ X`.
pub fn build_z(x: &DenseMatrix, y: &DenseMatrix, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    check_pair(x, y)?;
    Ok(SourceSplit::new(x, tol)?.restrict(y))
}

fn leading_basis(fz: &SvdFactors, k: usize, tol: &ToleranceConfig) -> DenseMatrix {
    let k_eff = k.min(fz.rank(tol));
    fz.u.columns(0, k_eff).into_owned()
}

/// First `min(k, rank(Z))` canonical left singular vectors of `Z`.
///
/// Ties `sigma_k = sigma_{k+1}` are resolved by index order, so the result is
/// deterministic even though the optimal subspace is then not unique.
pub fn projector_topk(z: &DenseMatrix, k: usize, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    Ok(leading_basis(&svd(z)?, k, tol))
}

fn spectral_gap(sigma: &[f64], k: usize) -> Option<f64> {
    (k >= 1 && k < sigma.len()).then(|| sigma[k - 1] - sigma[k])
}

fn combine_terms(first: f64, second: f64) -> f64 {
    first.hypot(second)
}

/// Solves the rank-constrained regression in closed form.
pub fn solve_lowrank(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    p: SchattenP,
    tol: &ToleranceConfig,
) -> Result<LowRankSolution> {
    tol.validate()?;
    check_pair(x, y)?;
    let split = SourceSplit::new(x, tol)?;
    let z = split.restrict(y);
    let fz = svd(&z)?;
    let q = leading_basis(&fz, k, tol);
    let w = y * &split.x_pinv;
    let m_star = &q * (q.transpose() * &w);

    let achieved_error = schatten_norm(&(y - &m_star * x), p)?;
    let tail = p.norm_of(&fz.sigma[q.ncols()..]);
    let predicted_error = combine_terms(tail, schatten_norm(&(y - &z), p)?);

    Ok(LowRankSolution {
        m_star,
        q_basis: q,
        spectral_gap: spectral_gap(&fz.sigma, k),
        z_sigma: fz.sigma,
        k_requested: k,
        achieved_error,
        predicted_error,
        p,
        rank_x: split.rank_x,
    })
}

/// Error predicted by the closed-form formula:
/// `sqrt( (sum_{i>k'} sigma_i(Z)^p)^{2/p} + ||Y (I - X^+ X)||_{S,p}^2 )`.
///
/// The tail starts after `k' = min(k, rank(Z))`, the rank actually used by
/// [`solve_lowrank`].
pub fn predicted_error(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    p: SchattenP,
    tol: &ToleranceConfig,
) -> Result<f64> {
    check_pair(x, y)?;
    let split = SourceSplit::new(x, tol)?;
    let z = split.restrict(y);
    let fz = svd(&z)?;
    let k_eff = k.min(fz.rank(tol));
    let tail = p.norm_of(&fz.sigma[k_eff..]);
    Ok(combine_terms(tail, schatten_norm(&(y - &z), p)?))
}

/// Second error term in its expanded inner-product form
/// `( sum_l ( sum_j sigma_j(Y)^2 <psi_j(Y), psi_l(X)>^2 )^{p/2} )^{1/p}`,
/// where `psi_l(X)` runs over an orthonormal basis of the null space of `X`
/// (the right singular vectors of `X` completed to the full source space).
///
/// This is a basis-sum and equals `||Y (I - X^+ X)||_{S,p}` for `p = 2`; for
/// other orders it is a diagnostic only.
pub fn second_term_expanded(
    x: &DenseMatrix,
    y: &DenseMatrix,
    p: SchattenP,
    tol: &ToleranceConfig,
) -> Result<f64> {
    check_pair(x, y)?;
    let fx = svd(x)?;
    let null_basis = orthogonal_complement(&fx.row_space(tol), x.ncols())?;
    let fy = svd(y)?;
    let coords = &fy.vt * &null_basis;
    let per_direction: Vec<f64> = (0..null_basis.ncols())
        .map(|l| {
            fy.sigma
                .iter()
                .enumerate()
                .map(|(j, s)| (s * coords[(j, l)]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(p.norm_of(&per_direction))
}

/// [`predicted_error`] with the second term taken from [`second_term_expanded`].
pub fn predicted_error_expanded(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    p: SchattenP,
    tol: &ToleranceConfig,
) -> Result<f64> {
    let z = build_z(x, y, tol)?;
    let fz = svd(&z)?;
    let k_eff = k.min(fz.rank(tol));
    let tail = p.norm_of(&fz.sigma[k_eff..]);
    Ok(combine_terms(tail, second_term_expanded(x, y, p, tol)?))
}

/// Optimal rank-`k` solution for the weighted norm `||K^{1/2} (.)||_{S,p}`:
/// `M* = (K^{1/2})^+ P'_k K^{1/2} Y X^+`, with `P'_k` built from
/// `Z' = K^{1/2} Y X^+ X`.
///
/// The reported errors are weighted errors. With `K = I` the result equals
/// [`solve_lowrank`] exactly.
pub fn solve_weighted(
    x: &DenseMatrix,
    y: &DenseMatrix,
    weight: &DenseMatrix,
    k: usize,
    p: SchattenP,
    tol: &ToleranceConfig,
) -> Result<LowRankSolution> {
    tol.validate()?;
    check_pair(x, y)?;
    if weight.shape() != (y.nrows(), y.nrows()) {
        return Err(Error::mismatch(format!(
            "weight operator must be {n}x{n}, got {}x{}",
            weight.nrows(),
            weight.ncols(),
            n = y.nrows()
        )));
    }
    let root = psd_sqrt(weight, tol)?;
    let split = SourceSplit::new(x, tol)?;
    let z = &root.sqrt * split.restrict(y);
    let fz = svd(&z)?;
    let q = leading_basis(&fz, k, tol);
    let w = &root.sqrt * (y * &split.x_pinv);
    let m_star = &root.sqrt_pinv * (&q * (q.transpose() * &w));

    let achieved_error = schatten_norm(&(&root.sqrt * (y - &m_star * x)), p)?;
    let tail = p.norm_of(&fz.sigma[q.ncols()..]);
    let predicted_error = combine_terms(tail, schatten_norm(&(&root.sqrt * y - &z), p)?);

    Ok(LowRankSolution {
        m_star,
        q_basis: q,
        spectral_gap: spectral_gap(&fz.sigma, k),
        z_sigma: fz.sigma,
        k_requested: k,
        achieved_error,
        predicted_error,
        p,
        rank_x: split.rank_x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_row_major;
    use approx::assert_abs_diff_eq;

    fn diag(d: &[f64]) -> DenseMatrix {
        DenseMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(d))
    }

    const P2: SchattenP = SchattenP::FROBENIUS;

    #[test]
    fn build_z_examples() {
        let tol = ToleranceConfig::default();
        let z = build_z(&diag(&[1.0, 1.0]), &diag(&[3.0, 1.0]), &tol).unwrap();
        assert_abs_diff_eq!(z, diag(&[3.0, 1.0]), epsilon = 1e-15);
        let z = build_z(&diag(&[1.0, 0.0]), &diag(&[1.0, 1.0]), &tol).unwrap();
        assert_abs_diff_eq!(z, diag(&[1.0, 0.0]), epsilon = 1e-15);
        let z = build_z(
            &DenseMatrix::zeros(2, 3),
            &DenseMatrix::repeat(2, 3, 1.0),
            &tol,
        )
        .unwrap();
        assert_eq!(z, DenseMatrix::zeros(2, 3));
        assert!(matches!(
            build_z(&DenseMatrix::zeros(2, 2), &DenseMatrix::zeros(3, 2), &tol),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn projector_examples() {
        let tol = ToleranceConfig::default();
        let z = diag(&[5.0, 2.0, 1.0]);
        let q = projector_topk(&z, 2, &tol).unwrap();
        assert_abs_diff_eq!(&q * q.transpose(), diag(&[1.0, 1.0, 0.0]), epsilon = 1e-15);
        let q = projector_topk(&z, 7, &tol).unwrap();
        assert_eq!(q.ncols(), 3);
        assert_abs_diff_eq!(
            &q * q.transpose(),
            DenseMatrix::identity(3, 3),
            epsilon = 1e-15
        );
        assert_eq!(projector_topk(&z, 0, &tol).unwrap().ncols(), 0);
    }

    #[test]
    fn solve_identity_source() {
        let tol = ToleranceConfig::default();
        let s = solve_lowrank(&diag(&[1.0, 1.0]), &diag(&[3.0, 1.0]), 1, P2, &tol).unwrap();
        assert_abs_diff_eq!(s.m_star, diag(&[3.0, 0.0]), epsilon = 1e-14);
        assert_abs_diff_eq!(s.achieved_error, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.predicted_error, 1.0, epsilon = 1e-14);
        assert_eq!(s.spectral_gap, Some(2.0));
        assert_eq!(s.rank_x, 2);
    }

    #[test]
    fn solve_rank_deficient_source() {
        let tol = ToleranceConfig::default();
        let (x, y) = (diag(&[1.0, 0.0]), diag(&[1.0, 1.0]));
        let s = solve_lowrank(&x, &y, 1, P2, &tol).unwrap();
        assert_abs_diff_eq!(s.m_star, diag(&[1.0, 0.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(s.achieved_error, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            predicted_error(&x, &y, 1, P2, &tol).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            predicted_error_expanded(&x, &y, 1, P2, &tol).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(s.rank_x, 1);
    }

    #[test]
    fn k_zero_and_zero_source() {
        let tol = ToleranceConfig::default();
        let x = from_row_major(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]).unwrap();
        let y = from_row_major(2, 3, &[0.5, 1.0, -2.0, 4.0, 1.0, 0.0]).unwrap();
        for p in [SchattenP::TRACE, P2, SchattenP::SPECTRAL] {
            let s = solve_lowrank(&x, &y, 0, p, &tol).unwrap();
            assert_eq!(s.m_star, DenseMatrix::zeros(2, 2));
            assert_eq!(s.achieved_error, schatten_norm(&y, p).unwrap());
        }
        let s = solve_lowrank(&DenseMatrix::zeros(2, 3), &y, 2, P2, &tol).unwrap();
        assert_eq!(s.m_star, DenseMatrix::zeros(2, 2));
        assert_eq!(s.rank_x, 0);
        assert_abs_diff_eq!(s.achieved_error, y.norm(), epsilon = 1e-14);
        assert_abs_diff_eq!(s.predicted_error, y.norm(), epsilon = 1e-14);
    }

    #[test]
    fn full_rank_source_has_no_second_term() {
        let tol = ToleranceConfig::default();
        let x = from_row_major(2, 2, &[2.0, 1.0, 0.5, 3.0]).unwrap();
        let y = from_row_major(2, 2, &[1.0, -1.0, 4.0, 2.0]).unwrap();
        let sy = crate::linalg::singular_values(&y).unwrap();
        for p in [
            SchattenP::TRACE,
            P2,
            SchattenP::new(3.0).unwrap(),
            SchattenP::SPECTRAL,
        ] {
            assert_abs_diff_eq!(second_term_expanded(&x, &y, p, &tol).unwrap(), 0.0);
            let e = predicted_error(&x, &y, 1, p, &tol).unwrap();
            assert_abs_diff_eq!(e, sy[1], epsilon = 1e-12);
            assert_abs_diff_eq!(
                predicted_error(&x, &y, 2, p, &tol).unwrap(),
                0.0,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn weighted_examples() {
        let tol = ToleranceConfig::default();
        let (x, y) = (diag(&[1.0, 1.0]), diag(&[3.0, 1.0]));
        let s = solve_weighted(&x, &y, &diag(&[1.0, 100.0]), 1, P2, &tol).unwrap();
        assert_abs_diff_eq!(s.m_star, diag(&[0.0, 1.0]), epsilon = 1e-14);
        assert_abs_diff_eq!(s.achieved_error, 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.predicted_error, 3.0, epsilon = 1e-14);

        let plain = solve_lowrank(&x, &y, 1, P2, &tol).unwrap();
        let ident = solve_weighted(&x, &y, &DenseMatrix::identity(2, 2), 1, P2, &tol).unwrap();
        assert_eq!(plain, ident);
    }

    #[test]
    fn weighted_errors() {
        let tol = ToleranceConfig::default();
        let x = DenseMatrix::identity(2, 2);
        let bad = from_row_major(2, 2, &[1.0, 3.0, 3.0, 1.0]).unwrap();
        assert!(matches!(
            solve_weighted(&x, &x, &bad, 1, P2, &tol),
            Err(Error::NotPsd { .. })
        ));
        assert!(matches!(
            solve_weighted(&x, &x, &DenseMatrix::identity(3, 3), 1, P2, &tol),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
