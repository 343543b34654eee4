#![allow(dead_code)]

use lowrank::oracle::{gaussian_low_rank, gaussian_matrix};
use lowrank::{DenseMatrix, SchattenP};
use rand::Rng;

pub fn orders() -> [SchattenP; 4] {
    [
        SchattenP::TRACE,
        SchattenP::FROBENIUS,
        SchattenP::new(3.0).unwrap(),
        SchattenP::SPECTRAL,
    ]
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub k: usize,
}

/// `n, q <= 12`; when `deficient`, `rank(X) < min(n, q)`.
pub fn random_instance<R: Rng>(rng: &mut R, deficient: bool) -> Instance {
    let n = rng.random_range(1..=12);
    let q = rng.random_range(1..=12);
    let x = if deficient {
        let r = rng.random_range(0..n.min(q));
        gaussian_low_rank(n, q, r, rng)
    } else {
        gaussian_matrix(n, q, rng)
    };
    let y = gaussian_matrix(n, q, rng);
    let k = rng.random_range(0..=n);
    Instance { x, y, k }
}

/// Random orthogonal `n x n` matrix.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DenseMatrix {
    gaussian_matrix(n, n, rng).qr().q()
}

pub fn diag(d: &[f64]) -> DenseMatrix {
    DenseMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(d))
}

pub fn rel_diff(a: &DenseMatrix, b: &DenseMatrix, scale: f64) -> f64 {
    let d = (a - b).norm();
    if scale > 0.0 {
        d / scale
    } else {
        d
    }
}
