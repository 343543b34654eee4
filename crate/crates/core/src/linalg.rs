//! Dense linear-algebra primitives: canonical SVD, numerical rank,
//! Moore–Penrose pseudoinverse, Schatten norms and the PSD square root.
//!
//! Every operator in the crate is a real [`DenseMatrix`]. Factorizations are
//! backed by `nalgebra` and post-processed into a canonical form (descending
//! singular values, sign-fixed singular vectors) so that projectors built from
//! them are reproducible.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real dense matrix, the finite stand-in for every operator.
pub type DenseMatrix = DMatrix<f64>;

const MAX_SWEEPS: usize = 100_000;

/// Builds a matrix from row-major entries, rejecting non-finite values.
pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<DenseMatrix> {
    if entries.len() != rows * cols {
        return Err(Error::mismatch(format!(
            "{} entries cannot fill a {rows}x{cols} matrix",
            entries.len()
        )));
    }
    let m = DenseMatrix::from_row_slice(rows, cols, entries);
    check_finite(&m)?;
    Ok(m)
}

/// Fails with [`Error::NonFinite`] on the first NaN or infinite entry.
pub fn check_finite(m: &DenseMatrix) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Numerical thresholds shared by all operations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    /// Singular values at or below `rank_rtol * sigma_1` count as zero.
    pub rank_rtol: f64,
    /// Eigenvalues in `[-psd_atol, 0)` are clipped to zero by [`psd_sqrt`].
    pub psd_atol: f64,
    pub recon_rtol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            rank_rtol: 1e-12,
            psd_atol: 1e-10,
            recon_rtol: 1e-12,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rank_rtol", self.rank_rtol),
            ("psd_atol", self.psd_atol),
            ("recon_rtol", self.recon_rtol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Order `p` of a Schatten norm, `p` in `(0, inf]`.
///
/// Orders below one give quasi-norms; they are accepted and can be detected
/// with [`SchattenP::is_quasi_norm`].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SchattenP(f64);

impl SchattenP {
    pub const TRACE: SchattenP = SchattenP(1.0);
    pub const FROBENIUS: SchattenP = SchattenP(2.0);
    pub const SPECTRAL: SchattenP = SchattenP(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p > 0.0 {
            Ok(SchattenP(p))
        } else {
            Err(Error::InvalidArgument(format!(
                "Schatten order must be > 0, got {p}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    pub fn is_quasi_norm(self) -> bool {
        self.0 < 1.0
    }

    /// `(sum s_i^p)^(1/p)`, or `max s_i` for `p = inf`.
    ///
    /// Values are rescaled by the largest entry before exponentiation so that
    /// large `p` neither overflows nor underflows.
    pub fn norm_of(self, values: &[f64]) -> f64 {
        let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        if self.is_infinite() {
            return scale;
        }
        let p = self.0;
        let sum: f64 = values.iter().map(|v| (v.abs() / scale).powf(p)).sum();
        scale * sum.powf(1.0 / p)
    }
}

impl fmt::Display for SchattenP {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for SchattenP {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") {
            return Ok(SchattenP::SPECTRAL);
        }
        let p: f64 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse Schatten order {s:?}")))?;
        if p.is_nan() {
            return Err(Error::InvalidArgument("Schatten order is NaN".into()));
        }
        SchattenP::new(p)
    }
}

impl Serialize for SchattenP {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for SchattenP {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(p) => SchattenP::new(p).map_err(serde::de::Error::custom),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Thin singular value decomposition `A = U diag(sigma) Vt` in canonical form.
///
/// * `sigma` is sorted in descending order.
/// * In every column of `u` the entry of largest magnitude is nonnegative
///   (first such row on ties); the matching row of `vt` is flipped with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub vt: DenseMatrix,
}

impl SvdFactors {
    /// Count of singular values above `rank_rtol * sigma_1`.
    pub fn rank(&self, tol: &ToleranceConfig) -> usize {
        rank_of_spectrum(&self.sigma, tol.rank_rtol)
    }

    /// Orthonormal basis (as columns) of the row space of the factored matrix.
    pub fn row_space(&self, tol: &ToleranceConfig) -> DenseMatrix {
        let r = self.rank(tol);
        self.vt.rows(0, r).transpose()
    }

    pub fn recompose(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.vt
    }
}

/// Number of entries of a descending spectrum above `rtol` times its head.
pub(crate) fn rank_of_spectrum(sigma: &[f64], rtol: f64) -> usize {
    match sigma.first() {
        Some(&s1) if s1 > 0.0 => sigma.iter().take_while(|&&s| s > rtol * s1).count(),
        _ => 0,
    }
}

fn faer_matrix<T: faer::traits::ComplexField + Copy>(a: &DMatrix<T>) -> faer::Mat<T> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// `(U, sigma, V)` with singular values non-increasing.
fn thin_svd<T>(a: &DMatrix<T>) -> Result<(DMatrix<T>, Vec<f64>, DMatrix<T>)>
where
    T: faer::traits::ComplexField<Real = f64> + nalgebra::Scalar + Copy,
{
    let dec = faer_matrix(a)
        .thin_svd()
        .map_err(|_| Error::NonConvergence("svd"))?;
    let (u, v) = (dec.U(), dec.V());
    let sigma = dec
        .S()
        .column_vector()
        .iter()
        .map(T::real_part_impl)
        .collect();
    Ok((
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        sigma,
        DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    ))
}

/// Canonical thin SVD.
pub fn svd(a: &DenseMatrix) -> Result<SvdFactors> {
    let (m, n) = a.shape();
    let r = m.min(n);
    if r == 0 {
        return Ok(SvdFactors {
            u: DenseMatrix::zeros(m, 0),
            sigma: Vec::new(),
            vt: DenseMatrix::zeros(0, n),
        });
    }
    check_finite(a)?;
    let (mut u, mut sigma, v) = thin_svd(a)?;
    let mut vt = v.transpose();

    // faer already sorts; re-sort stably so equal values keep index order.
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    if order.iter().enumerate().any(|(i, &j)| i != j) {
        u = u.select_columns(order.iter());
        vt = vt.select_rows(order.iter());
        sigma = order.iter().map(|&i| sigma[i]).collect();
    }
    for s in &mut sigma {
        if *s < 0.0 {
            *s = 0.0;
        }
    }

    for j in 0..r {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..m {
            let v = u[(i, j)].abs();
            if v > best_abs {
                best_abs = v;
                best = i;
            }
        }
        if u[(best, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            vt.row_mut(j).neg_mut();
        }
    }
    Ok(SvdFactors { u, sigma, vt })
}

/// Count of singular values strictly above `rank_rtol * sigma_1`.
pub fn numerical_rank(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<usize> {
    Ok(svd(a)?.rank(tol))
}

/// Moore–Penrose pseudoinverse from precomputed factors.
pub fn pinv_from_svd(f: &SvdFactors, tol: &ToleranceConfig) -> DenseMatrix {
    let r = f.rank(tol);
    let (m, n) = (f.u.nrows(), f.vt.ncols());
    if r == 0 {
        return DenseMatrix::zeros(n, m);
    }
    let mut v = f.vt.rows(0, r).transpose();
    for j in 0..r {
        v.column_mut(j).scale_mut(1.0 / f.sigma[j]);
    }
    v * f.u.columns(0, r).transpose()
}

/// Moore–Penrose pseudoinverse; singular values at or below
/// `rank_rtol * sigma_1` are treated as zero.
pub fn pinv(a: &DenseMatrix, tol: &ToleranceConfig) -> Result<DenseMatrix> {
    Ok(pinv_from_svd(&svd(a)?, tol))
}

/// Schatten `p`-norm computed from the singular values.
pub fn schatten_norm(a: &DenseMatrix, p: SchattenP) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let sigma = singular_values(a)?;
    Ok(p.norm_of(&sigma))
}

/// Singular values only, in descending order.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    check_finite(a)?;
    let values = faer_matrix(a)
        .singular_values()
        .map_err(|_| Error::NonConvergence("singular values"))?;
    let mut s: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Basis-sum form `(sum_i ||A e_i||^p)^(1/p)` over the standard basis of the
/// source space. Agrees with [`schatten_norm`] for every basis only when `p = 2`;
/// kept as a diagnostic.
pub fn basis_sum_norm(a: &DenseMatrix, p: SchattenP) -> f64 {
    let cols: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    p.norm_of(&cols)
}

/// Symmetric PSD square root and its pseudoinverse.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdSqrt {
    pub sqrt: DenseMatrix,
    pub sqrt_pinv: DenseMatrix,
}

/// Square root `K^{1/2}` of a symmetric positive semi-definite `K`, together
/// with `(K^{1/2})^+`.
///
/// Eigenvalues in `[-psd_atol, 0)` are clipped to zero. A diagonal `K` is
/// handled entrywise, so `K = I` maps to the identity exactly.
pub fn psd_sqrt(k: &DenseMatrix, tol: &ToleranceConfig) -> Result<PsdSqrt> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(Error::mismatch(format!(
            "weight operator must be square, got {}x{}",
            n,
            k.ncols()
        )));
    }
    check_finite(k)?;
    let mut asym = 0.0_f64;
    let mut diagonal = true;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((k[(i, j)] - k[(j, i)]).abs());
            diagonal &= k[(i, j)] == 0.0 && k[(j, i)] == 0.0;
        }
    }
    if asym > 1e-10 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }

    let (eigvals, eigvecs) = if diagonal {
        (DVector::from_iterator(n, (0..n).map(|i| k[(i, i)])), None)
    } else {
        let sym = (k + k.transpose()) * 0.5;
        let dec = SymmetricEigen::try_new(sym, f64::EPSILON, MAX_SWEEPS)
            .ok_or(Error::NonConvergence("symmetric eigendecomposition"))?;
        (dec.eigenvalues, Some(dec.eigenvectors))
    };

    let mut roots = Vec::with_capacity(n);
    for &lambda in eigvals.iter() {
        if lambda < -tol.psd_atol {
            return Err(Error::NotPsd { eigenvalue: lambda });
        }
        roots.push(lambda.max(0.0).sqrt());
    }
    let top = roots.iter().fold(0.0_f64, |a, &b| a.max(b));
    let inv_roots: Vec<f64> = roots
        .iter()
        .map(|&r| {
            if top > 0.0 && r > tol.rank_rtol * top {
                1.0 / r
            } else {
                0.0
            }
        })
        .collect();

    match eigvecs {
        None => Ok(PsdSqrt {
            sqrt: DenseMatrix::from_diagonal(&DVector::from_vec(roots)),
            sqrt_pinv: DenseMatrix::from_diagonal(&DVector::from_vec(inv_roots)),
        }),
        Some(v) => {
            let assemble = |d: &[f64]| {
                let mut vd = v.clone();
                for (j, s) in d.iter().enumerate() {
                    vd.column_mut(j).scale_mut(*s);
                }
                let m = vd * v.transpose();
                (&m + m.transpose()) * 0.5
            };
            Ok(PsdSqrt {
                sqrt: assemble(&roots),
                sqrt_pinv: assemble(&inv_roots),
            })
        }
    }
}

/// Orthonormal basis of the orthogonal complement of the column span of
/// `basis` (whose columns must be orthonormal) in `R^dim`.
pub(crate) fn orthogonal_complement(basis: &DenseMatrix, dim: usize) -> Result<DenseMatrix> {
    let r = basis.ncols();
    if r >= dim {
        return Ok(DenseMatrix::zeros(dim, 0));
    }
    let proj = DenseMatrix::identity(dim, dim) - basis * basis.transpose();
    let f = svd(&proj)?;
    Ok(f.u.columns(0, dim - r).into_owned())
}

/// Complex eigenpair of a real square matrix; `vector` has unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: Complex64,
    pub vector: DVector<Complex64>,
}

/// Right eigenpairs of a real square matrix.
///
/// Eigenvalues come from a real Schur form and are ordered by decreasing
/// modulus, then decreasing real part, then decreasing imaginary part.
/// Eigenvectors are read off the smallest right singular vectors of
/// `A - lambda I`; a cluster of `g` (numerically) equal eigenvalues receives
/// the `g` smallest such vectors, so a defective eigenvalue yields vectors with
/// nonzero residual rather than an error. Each vector is scaled so its entry of
/// largest modulus is real and positive.
pub fn eigenpairs(a: &DenseMatrix) -> Result<Vec<EigenPair>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::mismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    check_finite(a)?;
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, MAX_SWEEPS)
        .ok_or(Error::NonConvergence("schur decomposition"))?;
    let mut values: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| {
        y.norm()
            .total_cmp(&x.norm())
            .then(y.re.total_cmp(&x.re))
            .then(y.im.total_cmp(&x.im))
    });

    let ac = a.map(|v| Complex64::new(v, 0.0));
    let scale = 1.0 + a.norm();
    let mut pairs = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (values[j] - values[i]).norm() <= 1e-9 * scale {
            j += 1;
        }
        let g = j - i;
        let center = values[i..j].iter().sum::<Complex64>() / g as f64;
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * center;
        let (_, _, vs) = thin_svd(&shifted)?;
        for (offset, value) in values[i..j].iter().enumerate() {
            let v: DVector<Complex64> = vs.column(n - g + offset).into_owned();
            pairs.push(EigenPair {
                value: *value,
                vector: normalize_phase(v),
            });
        }
        i = j;
    }
    Ok(pairs)
}

/// Unit norm, with the entry of largest modulus made real and positive.
pub(crate) fn normalize_phase(mut v: DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let mut best = 0;
    let mut best_abs = -1.0;
    for (i, c) in v.iter().enumerate() {
        if c.norm() > best_abs * (1.0 + 1e-12) {
            best_abs = c.norm();
            best = i;
        }
    }
    let phase = v[best] / v[best].norm();
    v.apply(|c| *c /= phase * norm);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, cols: usize, e: &[f64]) -> DenseMatrix {
        from_row_major(rows, cols, e).unwrap()
    }

    #[test]
    fn svd_of_diagonal() {
        let f = svd(&m(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(f.sigma, vec![3.0, 1.0]);
        assert_abs_diff_eq!(f.u, DenseMatrix::identity(2, 2), epsilon = 1e-15);
        assert_abs_diff_eq!(f.vt, DenseMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn svd_of_zero_and_permutation() {
        let f = svd(&DenseMatrix::zeros(2, 3)).unwrap();
        assert_eq!(f.sigma, vec![0.0, 0.0]);
        let p = m(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let f = svd(&p).unwrap();
        assert_abs_diff_eq!(f.sigma[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.sigma[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.recompose(), p, epsilon = 1e-14);
    }

    #[test]
    fn svd_sign_convention() {
        let a = m(3, 2, &[-1.0, 2.0, -3.0, 0.5, 0.25, -4.0]);
        let f = svd(&a).unwrap();
        for j in 0..2 {
            let col = f.u.column(j);
            let imax = col.iamax();
            assert!(col[imax] >= 0.0);
        }
        assert!((f.recompose() - &a).norm() <= 1e-12 * a.norm());
    }

    #[test]
    fn svd_rejects_nan() {
        let mut a = DenseMatrix::zeros(2, 2);
        a[(1, 0)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::NonFinite { row: 1, col: 0 })));
    }

    #[test]
    fn rank_examples() {
        let tol = ToleranceConfig::default();
        assert_eq!(
            numerical_rank(&m(2, 2, &[1.0, 0.0, 0.0, 1e-16]), &tol).unwrap(),
            1
        );
        assert_eq!(
            numerical_rank(&DenseMatrix::identity(3, 3), &tol).unwrap(),
            3
        );
        assert_eq!(numerical_rank(&DenseMatrix::zeros(3, 2), &tol).unwrap(), 0);
    }

    #[test]
    fn pinv_examples() {
        let tol = ToleranceConfig::default();
        let p = pinv(&m(2, 2, &[2.0, 0.0, 0.0, 0.0]), &tol).unwrap();
        assert_abs_diff_eq!(p, m(2, 2, &[0.5, 0.0, 0.0, 0.0]), epsilon = 1e-15);
        let p = pinv(&m(2, 1, &[1.0, 1.0]), &tol).unwrap();
        assert_eq!(p.shape(), (1, 2));
        assert_abs_diff_eq!(p, m(1, 2, &[0.5, 0.5]), epsilon = 1e-15);
        assert_eq!(
            pinv(&DenseMatrix::zeros(2, 3), &tol).unwrap(),
            DenseMatrix::zeros(3, 2)
        );
    }

    #[test]
    fn schatten_examples() {
        let d = m(2, 2, &[3.0, 0.0, 0.0, 4.0]);
        assert_abs_diff_eq!(
            schatten_norm(&d, SchattenP::FROBENIUS).unwrap(),
            5.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            schatten_norm(&d, SchattenP::TRACE).unwrap(),
            7.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            schatten_norm(&d, SchattenP::SPECTRAL).unwrap(),
            4.0,
            epsilon = 1e-15
        );
        let half = SchattenP::new(0.5).unwrap();
        assert!(half.is_quasi_norm());
        let expect = (3f64.sqrt() + 2.0).powi(2);
        assert_abs_diff_eq!(schatten_norm(&d, half).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn schatten_p_parsing() {
        assert_eq!("inf".parse::<SchattenP>().unwrap(), SchattenP::SPECTRAL);
        assert_eq!("2".parse::<SchattenP>().unwrap(), SchattenP::FROBENIUS);
        assert!("0".parse::<SchattenP>().is_err());
        assert!("-1".parse::<SchattenP>().is_err());
        assert!("nan".parse::<SchattenP>().is_err());
        assert_eq!(SchattenP::SPECTRAL.to_string(), "inf");
    }

    #[test]
    fn norm_of_large_p_is_stable() {
        let p = SchattenP::new(400.0).unwrap();
        let v = p.norm_of(&[1e200, 1e199]);
        assert!((v / 1e200 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psd_sqrt_examples() {
        let tol = ToleranceConfig::default();
        let r = psd_sqrt(&m(2, 2, &[4.0, 0.0, 0.0, 9.0]), &tol).unwrap();
        assert_eq!(r.sqrt, m(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let r = psd_sqrt(&DenseMatrix::identity(3, 3), &tol).unwrap();
        assert_eq!(r.sqrt, DenseMatrix::identity(3, 3));
        assert_eq!(r.sqrt_pinv, DenseMatrix::identity(3, 3));
        let r = psd_sqrt(&m(2, 2, &[4.0, 0.0, 0.0, 0.0]), &tol).unwrap();
        assert_eq!(r.sqrt, m(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert_eq!(r.sqrt_pinv, m(2, 2, &[0.5, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn psd_sqrt_dense_and_errors() {
        let tol = ToleranceConfig::default();
        let k = m(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = psd_sqrt(&k, &tol).unwrap();
        assert!((&r.sqrt * &r.sqrt - &k).norm() <= 1e-10 * k.norm());
        assert_eq!(r.sqrt, r.sqrt.transpose());
        assert!(matches!(
            psd_sqrt(&m(2, 2, &[1.0, 2.0, 2.0, 1.0]), &tol),
            Err(Error::NotPsd { .. })
        ));
        assert!(matches!(
            psd_sqrt(&m(2, 2, &[1.0, 0.5, 0.0, 1.0]), &tol),
            Err(Error::NotSymmetric { .. })
        ));
        // tiny negative eigenvalue is clipped
        let r = psd_sqrt(&m(2, 2, &[1.0, 0.0, 0.0, -1e-12]), &tol).unwrap();
        assert_eq!(r.sqrt[(1, 1)], 0.0);
    }

    #[test]
    fn complement_is_orthonormal() {
        let b = m(3, 1, &[1.0, 0.0, 0.0]);
        let c = orthogonal_complement(&b, 3).unwrap();
        assert_eq!(c.shape(), (3, 2));
        assert_abs_diff_eq!(
            c.transpose() * &c,
            DenseMatrix::identity(2, 2),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!((b.transpose() * &c).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eigenpairs_of_rotation_and_diagonal() {
        let pairs = eigenpairs(&m(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(pairs[0].value.im, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pairs[1].value.im, -1.0, epsilon = 1e-14);
        let a = m(2, 2, &[0.0, 1.0, -1.0, 0.0]).map(|v| Complex64::new(v, 0.0));
        for p in &pairs {
            let r = &a * &p.vector - &p.vector * p.value;
            assert!(r.norm() < 1e-12);
            assert_abs_diff_eq!(p.vector.norm(), 1.0, epsilon = 1e-14);
        }
        let pairs = eigenpairs(&m(2, 2, &[0.5, 0.0, 0.0, 2.0])).unwrap();
        assert_eq!(pairs[0].value, Complex64::new(2.0, 0.0));
        assert_abs_diff_eq!(pairs[0].vector[1].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pairs[1].vector[0].re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eigenpairs_repeated_value_gets_independent_vectors() {
        let pairs = eigenpairs(&DenseMatrix::identity(3, 3)).unwrap();
        let v = DMatrix::from_columns(&pairs.iter().map(|p| p.vector.clone()).collect::<Vec<_>>());
        let gram = v.adjoint() * &v;
        assert!((gram - DMatrix::<Complex64>::identity(3, 3)).norm() < 1e-12);
    }
}
