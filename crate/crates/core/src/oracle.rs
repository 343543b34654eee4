//! Independent checks of the closed-form solver.
//!
//! None of these routines call the closed form to produce their candidates'
//! errors: every candidate `M` is scored directly as `||Y - M X||_{S,p}`.
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with an explicit
//! `u64`, and every loop runs in a fixed order, so a report is a pure
//! function of `(X, Y, k, p, seed)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{
    pinv, pinv_from_svd, schatten_norm, svd, DenseMatrix, SchattenP, ToleranceConfig,
};
use crate::solver::solve_lowrank;

/// Relative radii of the perturbations applied to the closed-form factors.
pub const PERTURBATION_RADII: [f64; 3] = [1e-3, 1e-2, 1e-1];

/// Outcome of an oracle run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub p: SchattenP,
    pub closed_form_error: f64,
    pub best_candidate_error: f64,
    /// Position of the best candidate in generation order.
    pub best_candidate_index: Option<usize>,
    pub n_candidates: usize,
    pub n_refinements: usize,
    /// `best_candidate_error - closed_form_error`; negative means the closed
    /// form was beaten.
    pub margin: f64,
    /// `|achieved - predicted|` keyed by the order `p`.
    pub per_p_formula_gap: BTreeMap<String, f64>,
    /// Largest relative violation of the `p = 2` Pythagorean split, when checked.
    pub pythagorean_gap: Option<f64>,
    pub rng_seed: u64,
    pub instance_digest: String,
}

impl OracleReport {
    /// Whether some candidate beat the closed form by more than
    /// `rtol * closed_form_error`.
    pub fn beaten(&self, rtol: f64) -> bool {
        self.margin < -rtol * self.closed_form_error
    }

    fn consider(&mut self, index: usize, error: f64) {
        if error < self.best_candidate_error {
            self.best_candidate_error = error;
            self.best_candidate_index = Some(index);
        }
        self.margin = self.best_candidate_error - self.closed_form_error;
    }
}

/// Deterministic generator used by every oracle.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with independent standard normal entries, filled column by column.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random `rows x cols` matrix of rank `min(rank, rows, cols)`.
pub fn gaussian_low_rank<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rank: usize,
    rng: &mut R,
) -> DenseMatrix {
    let a = gaussian_matrix(rows, rank, rng);
    let b = gaussian_matrix(rank, cols, rng);
    a * b
}

/// `||Y - M X||_{S,p}` evaluated directly.
pub fn objective(x: &DenseMatrix, y: &DenseMatrix, m: &DenseMatrix, p: SchattenP) -> Result<f64> {
    if m.ncols() != x.nrows() || m.nrows() != y.nrows() || x.ncols() != y.ncols() {
        return Err(Error::mismatch("candidate does not fit the instance"));
    }
    schatten_norm(&(y - m * x), p)
}

/// SHA-256 over the shapes and bit patterns of `(X, Y, k, p)`, hex encoded.
pub fn instance_digest(x: &DenseMatrix, y: &DenseMatrix, k: usize, p: SchattenP) -> String {
    let mut h = Sha256::new();
    for m in [x, y] {
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.update((k as u64).to_le_bytes());
    h.update(p.value().to_bits().to_le_bytes());
    hex::encode(h.finalize())
}

fn empty_report(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    p: SchattenP,
    seed: u64,
    closed_form_error: f64,
) -> OracleReport {
    OracleReport {
        p,
        closed_form_error,
        best_candidate_error: f64::INFINITY,
        best_candidate_index: None,
        n_candidates: 0,
        n_refinements: 0,
        margin: f64::INFINITY,
        per_p_formula_gap: BTreeMap::new(),
        pythagorean_gap: None,
        rng_seed: seed,
        instance_digest: instance_digest(x, y, k, p),
    }
}

/// Balanced rank-`k` factors `M = L R^T`, zero-padded to `k` columns.
fn balanced_factors(m: &DenseMatrix, k: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let f = svd(m)?;
    let mut left = DenseMatrix::zeros(m.nrows(), k);
    let mut right = DenseMatrix::zeros(m.ncols(), k);
    for j in 0..k.min(f.sigma.len()) {
        let s = f.sigma[j].sqrt();
        left.set_column(j, &(f.u.column(j) * s));
        right.set_column(j, &(f.vt.row(j).transpose() * s));
    }
    Ok((left, right))
}

fn scaled_to(m: DenseMatrix, target: f64) -> DenseMatrix {
    let n = m.norm();
    if n > 0.0 {
        m * (target / n)
    } else {
        m
    }
}

fn perturb<R: Rng + ?Sized>(f: &DenseMatrix, radius: f64, rng: &mut R) -> DenseMatrix {
    let g = gaussian_matrix(f.nrows(), f.ncols(), rng);
    f + scaled_to(g, radius * f.norm())
}

/// Random search over rank-`k` candidates.
///
/// Draws `n_samples` global candidates `A B^T` (standard normal `n x k`
/// factors, rescaled to the Frobenius norm of the closed form) and
/// `n_samples` local candidates obtained by perturbing balanced factors of the
/// closed form at the relative radii in [`PERTURBATION_RADII`], cycling through
/// them. Every candidate has rank at most `k`.
pub fn random_rank_k_search(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    p: SchattenP,
    n_samples: usize,
    seed: u64,
    tol: &ToleranceConfig,
) -> Result<OracleReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let sol = solve_lowrank(x, y, k, p, tol)?;
    let closed = objective(x, y, &sol.m_star, p)?;
    let mut report = empty_report(x, y, k, p, seed, closed);
    report.per_p_formula_gap.insert(
        p.to_string(),
        (sol.achieved_error - sol.predicted_error).abs(),
    );

    let n = y.nrows();
    let scale = match sol.m_star.norm() {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let mut rng = seeded_rng(seed);
    let mut index = 0;
    for _ in 0..n_samples {
        let a = gaussian_matrix(n, k, &mut rng);
        let b = gaussian_matrix(n, k, &mut rng);
        let m = scaled_to(a * b.transpose(), scale);
        report.consider(index, objective(x, y, &m, p)?);
        index += 1;
    }
    let (left, right) = balanced_factors(&sol.m_star, k)?;
    for i in 0..n_samples {
        let r = PERTURBATION_RADII[i % PERTURBATION_RADII.len()];
        let l = perturb(&left, r, &mut rng);
        let rt = perturb(&right, r, &mut rng);
        report.consider(index, objective(x, y, &(l * rt.transpose()), p)?);
        index += 1;
    }
    report.n_candidates = index;
    Ok(report)
}

/// Result of [`als_refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlsOutcome {
    pub m: DenseMatrix,
    /// Final `p = 2` error.
    pub error: f64,
    /// Error before the first sweep followed by the error after each sweep.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// Some least-squares subproblem was rank deficient and was solved with
    /// the pseudoinverse.
    pub singular_subproblem: bool,
}

/// Alternating least squares on `M = A B^T` for `min ||Y - A B^T X||_F`.
///
/// The update of `A` for fixed `B` is `A = Y (B^T X)^+`; the update of `B`
/// for fixed `A` is `B^T = A^+ Y X^+`. Both are exact minimizers of their
/// subproblem, so the error never increases. Stops after `max_iters` sweeps
/// or when the relative change drops below `1e-12`.
pub fn als_refine(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    m_init: &DenseMatrix,
    max_iters: usize,
    tol: &ToleranceConfig,
) -> Result<AlsOutcome> {
    if k == 0 {
        return Err(Error::InvalidArgument("ALS needs k >= 1".into()));
    }
    let p2 = SchattenP::FROBENIUS;
    let e0 = objective(x, y, m_init, p2)?;
    let mut out = AlsOutcome {
        m: m_init.clone(),
        error: e0,
        history: vec![e0],
        iterations: 0,
        singular_subproblem: false,
    };
    if max_iters == 0 {
        return Ok(out);
    }
    let x_pinv = pinv(x, tol)?;
    let y_xp = y * &x_pinv;
    let (_, mut b) = balanced_factors(m_init, k)?;
    for _ in 0..max_iters {
        let c = b.transpose() * x;
        let fc = svd(&c)?;
        out.singular_subproblem |= fc.rank(tol) < k;
        let a = y * pinv_from_svd(&fc, tol);

        let fa = svd(&a)?;
        out.singular_subproblem |= fa.rank(tol) < k;
        b = (pinv_from_svd(&fa, tol) * &y_xp).transpose();

        let m = &a * b.transpose();
        let e = objective(x, y, &m, p2)?;
        let prev = out.error;
        out.m = m;
        out.error = e;
        out.history.push(e);
        out.iterations += 1;
        if (prev - e).abs() < 1e-12 * prev {
            break;
        }
    }
    Ok(out)
}

/// Rank-`k` truncated SVD of `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    pub matrix: DenseMatrix,
    pub sigma: Vec<f64>,
    pub k: usize,
}

impl TruncatedSvd {
    /// `(sum_{i>k} sigma_i^p)^(1/p)`.
    pub fn tail_error(&self, p: SchattenP) -> f64 {
        p.norm_of(&self.sigma[self.k.min(self.sigma.len())..])
    }
}

/// Best rank-`k` approximation of `Y` in every unitarily invariant norm.
pub fn eckart_young_reference(y: &DenseMatrix, k: usize) -> Result<TruncatedSvd> {
    let f = svd(y)?;
    let r = k.min(f.sigma.len());
    let mut us = f.u.columns(0, r).into_owned();
    for j in 0..r {
        us.column_mut(j).scale_mut(f.sigma[j]);
    }
    Ok(TruncatedSvd {
        matrix: us * f.vt.rows(0, r),
        sigma: f.sigma,
        k,
    })
}

/// Formula gaps for every `p` in `p_list`, plus a check of the `p = 2`
/// Pythagorean split
/// `||Y - M X||^2 = ||(Y - M X) X^+ X||^2 + ||Y (I - X^+ X)||^2`
/// on ten random rank-`k` operators `M`.
///
/// The report's candidate fields refer to those ten operators, scored at the
/// first order of `p_list`.
pub fn consistency_report(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    p_list: &[SchattenP],
    seed: u64,
    tol: &ToleranceConfig,
) -> Result<OracleReport> {
    let reference = *p_list
        .first()
        .ok_or_else(|| Error::InvalidArgument("p_list is empty".into()))?;
    let base = solve_lowrank(x, y, k, reference, tol)?;
    let mut report = empty_report(x, y, k, reference, seed, base.achieved_error);
    for &p in p_list {
        let sol = solve_lowrank(x, y, k, p, tol)?;
        report.per_p_formula_gap.insert(
            p.to_string(),
            (sol.achieved_error - sol.predicted_error).abs(),
        );
    }

    let proj = pinv(x, tol)? * x;
    let q = x.ncols();
    let outside = schatten_norm(
        &(y * (DenseMatrix::identity(q, q) - &proj)),
        SchattenP::FROBENIUS,
    )?;
    let n = y.nrows();
    let scale = match base.m_star.norm() {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let mut rng = seeded_rng(seed);
    let mut worst = 0.0_f64;
    for i in 0..10 {
        let m = scaled_to(
            gaussian_matrix(n, k, &mut rng) * gaussian_matrix(n, k, &mut rng).transpose(),
            scale,
        );
        let resid = y - &m * x;
        let total = schatten_norm(&resid, SchattenP::FROBENIUS)?;
        let inside = schatten_norm(&(&resid * &proj), SchattenP::FROBENIUS)?;
        let lhs = total * total;
        let rhs = inside * inside + outside * outside;
        if lhs > 0.0 {
            worst = worst.max((lhs - rhs).abs() / lhs);
        } else {
            worst = worst.max(rhs);
        }
        report.consider(i, objective(x, y, &m, reference)?);
    }
    report.n_candidates = 10;
    report.pythagorean_gap = Some(worst);
    Ok(report)
}

/// `p = 2` optimality check: [`random_rank_k_search`] followed by
/// [`als_refine`] from `als_starts` random rank-`k` starting points.
#[allow(clippy::too_many_arguments)]
pub fn optimality_certificate(
    x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    n_samples: usize,
    als_starts: usize,
    als_iters: usize,
    seed: u64,
    tol: &ToleranceConfig,
) -> Result<OracleReport> {
    let p2 = SchattenP::FROBENIUS;
    let mut report = random_rank_k_search(x, y, k, p2, n_samples, seed, tol)?;
    if k == 0 {
        return Ok(report);
    }
    let n = y.nrows();
    let mut rng = seeded_rng(seed ^ 0x9E37_79B9_7F4A_7C15);
    for s in 0..als_starts {
        let init = gaussian_matrix(n, k, &mut rng) * gaussian_matrix(n, k, &mut rng).transpose();
        let out = als_refine(x, y, k, &init, als_iters, tol)?;
        report.consider(report.n_candidates + s, out.error);
        report.n_refinements += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag(d: &[f64]) -> DenseMatrix {
        DenseMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(d))
    }

    #[test]
    fn search_never_beats_identity_case() {
        let tol = ToleranceConfig::default();
        let (x, y) = (DenseMatrix::identity(2, 2), diag(&[3.0, 1.0]));
        let r = random_rank_k_search(&x, &y, 1, SchattenP::FROBENIUS, 500, 7, &tol).unwrap();
        assert!(r.margin >= 0.0);
        assert_eq!(r.n_candidates, 1000);
        assert_abs_diff_eq!(r.closed_form_error, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn search_with_k_zero_has_zero_margin() {
        let tol = ToleranceConfig::default();
        let (x, y) = (diag(&[1.0, 2.0]), diag(&[3.0, 1.0]));
        let r = random_rank_k_search(&x, &y, 0, SchattenP::TRACE, 20, 1, &tol).unwrap();
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn search_is_deterministic() {
        let tol = ToleranceConfig::default();
        let mut rng = seeded_rng(3);
        let x = gaussian_low_rank(4, 6, 2, &mut rng);
        let y = gaussian_matrix(4, 6, &mut rng);
        let a =
            random_rank_k_search(&x, &y, 2, SchattenP::new(3.0).unwrap(), 50, 11, &tol).unwrap();
        let b =
            random_rank_k_search(&x, &y, 2, SchattenP::new(3.0).unwrap(), 50, 11, &tol).unwrap();
        assert_eq!(a, b);
        let c =
            random_rank_k_search(&x, &y, 2, SchattenP::new(3.0).unwrap(), 50, 12, &tol).unwrap();
        assert_ne!(a.best_candidate_error, c.best_candidate_error);
    }

    #[test]
    fn als_examples() {
        let tol = ToleranceConfig::default();
        let (x, y) = (DenseMatrix::identity(2, 2), diag(&[3.0, 1.0]));
        let init = DenseMatrix::from_row_slice(2, 2, &[0.3, -0.8, 0.5, 0.2]);
        let rank_one = init.column(0) * init.row(1);
        let out = als_refine(&x, &y, 1, &rank_one, 200, &tol).unwrap();
        assert!((out.error - 1.0).abs() <= 1e-8);
        for w in out.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let same = als_refine(&x, &y, 1, &init, 0, &tol).unwrap();
        assert_eq!(same.m, init);
        assert_eq!(same.iterations, 0);
        assert!(als_refine(&x, &y, 0, &init, 5, &tol).is_err());
    }

    #[test]
    fn als_is_stationary_at_closed_form() {
        let tol = ToleranceConfig::default();
        let mut rng = seeded_rng(5);
        let x = gaussian_low_rank(5, 7, 3, &mut rng);
        let y = gaussian_matrix(5, 7, &mut rng);
        let sol = solve_lowrank(&x, &y, 2, SchattenP::FROBENIUS, &tol).unwrap();
        let out = als_refine(&x, &y, 2, &sol.m_star, 50, &tol).unwrap();
        assert!((out.error - sol.achieved_error).abs() <= 1e-10);
    }

    #[test]
    fn eckart_young_examples() {
        let t = eckart_young_reference(&diag(&[3.0, 1.0]), 1).unwrap();
        assert_abs_diff_eq!(t.matrix, diag(&[3.0, 0.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(t.tail_error(SchattenP::FROBENIUS), 1.0, epsilon = 1e-15);
        let y = DenseMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let t = eckart_young_reference(&y, 4).unwrap();
        assert_abs_diff_eq!(t.matrix, y, epsilon = 1e-13);
        assert_abs_diff_eq!(t.tail_error(SchattenP::TRACE), 0.0);
    }

    #[test]
    fn consistency_report_p2() {
        let tol = ToleranceConfig::default();
        let mut rng = seeded_rng(9);
        let x = gaussian_low_rank(4, 6, 2, &mut rng);
        let y = gaussian_matrix(4, 6, &mut rng);
        let ps = [SchattenP::FROBENIUS, SchattenP::TRACE];
        let r = consistency_report(&x, &y, 1, &ps, 4, &tol).unwrap();
        let gap = r.per_p_formula_gap["2"];
        assert!(gap <= 1e-9 * (1.0 + r.closed_form_error));
        assert!(r.pythagorean_gap.unwrap() <= 1e-9);
        assert!(r.margin >= 0.0);
        assert!(r.per_p_formula_gap.contains_key("1"));
    }

    #[test]
    fn digest_changes_with_instance() {
        let x = DenseMatrix::identity(2, 2);
        let a = instance_digest(&x, &x, 1, SchattenP::FROBENIUS);
        assert_eq!(a, instance_digest(&x, &x, 1, SchattenP::FROBENIUS));
        assert_ne!(a, instance_digest(&x, &x, 2, SchattenP::FROBENIUS));
        assert_ne!(a, instance_digest(&x, &x, 1, SchattenP::TRACE));
        assert_eq!(a.len(), 64);
    }
}
