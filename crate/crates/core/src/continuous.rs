//! Continuous DMD: Hilbert–Schmidt integral operators
//! `g -> int k(u) g(u) dmu(u)` from `L^2(D, mu)` to `R^n`, reduced to finite
//! matrices by quadrature.
//!
//! A rule with nodes `u_j` and weights `w_j` turns a kernel into the `n x Q`
//! matrix whose column `j` is `sqrt(w_j) k(u_j)`. Products such as
//! `X X^T` then become quadrature sums for `int k_X k_X^T dmu`, and the
//! Frobenius norm becomes the discrete Hilbert–Schmidt norm.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SchattenP, ToleranceConfig};
use crate::solver::{solve_lowrank, LowRankSolution};

/// Column-valued kernel `u -> k(u) in R^n`.
pub trait HsKernel {
    fn output_dim(&self) -> usize;
    fn eval(&self, u: &[f64]) -> Vec<f64>;
}

/// Adapts a closure into an [`HsKernel`].
pub struct FnKernel<F> {
    output_dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnKernel<F> {
    pub fn new(output_dim: usize, f: F) -> Self {
        Self { output_dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> HsKernel for FnKernel<F> {
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval(&self, u: &[f64]) -> Vec<f64> {
        (self.f)(u)
    }
}

/// Kernel on a 1-D domain whose components are polynomials in `u`,
/// given by ascending coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolynomialKernel {
    pub components: Vec<Vec<f64>>,
}

impl HsKernel for PolynomialKernel {
    fn output_dim(&self) -> usize {
        self.components.len()
    }

    fn eval(&self, u: &[f64]) -> Vec<f64> {
        let t = u.first().copied().unwrap_or(0.0);
        self.components
            .iter()
            .map(|c| c.iter().rev().fold(0.0, |acc, a| acc * t + a))
            .collect()
    }
}

/// Where a quadrature rule came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RuleKind {
    GaussLegendre { nodes: usize },
    CompositeTrapezoid { nodes: usize },
    Tensor { factors: Vec<RuleKind> },
    UserSupplied,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleKind::GaussLegendre { nodes } => write!(f, "gauss-legendre({nodes})"),
            RuleKind::CompositeTrapezoid { nodes } => write!(f, "composite-trapezoid({nodes})"),
            RuleKind::Tensor { factors } => {
                let parts: Vec<String> = factors.iter().map(|r| r.to_string()).collect();
                write!(f, "{}", parts.join(" x "))
            }
            RuleKind::UserSupplied => f.write_str("user-supplied"),
        }
    }
}

/// Nodes and positive weights representing the measure `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    description: RuleKind,
}

impl QuadratureRule {
    /// A rule from explicit nodes and weights.
    pub fn user_supplied(nodes: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        Self::checked(nodes, weights, RuleKind::UserSupplied)
    }

    fn checked(nodes: Vec<Vec<f64>>, weights: Vec<f64>, description: RuleKind) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument(
                "quadrature rule has no nodes".into(),
            ));
        }
        if nodes.len() != weights.len() {
            return Err(Error::mismatch(format!(
                "{} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        let dim = nodes[0].len();
        if nodes
            .iter()
            .any(|n| n.len() != dim || n.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(
                "quadrature nodes must be finite and of equal dimension".into(),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "quadrature weights must be positive, got {w}"
            )));
        }
        Ok(Self {
            nodes,
            weights,
            description,
        })
    }

    /// `q`-point Gauss–Legendre rule on `[a, b]`, exact for polynomials of
    /// degree `2q - 1`.
    pub fn gauss_legendre(q: usize, a: f64, b: f64) -> Result<Self> {
        check_interval(q, 1, a, b)?;
        let (half, mid) = (0.5 * (b - a), 0.5 * (a + b));
        let (x, w) = legendre_nodes(q);
        Self::checked(
            x.iter().map(|t| vec![mid + half * t]).collect(),
            w.iter().map(|w| half * w).collect(),
            RuleKind::GaussLegendre { nodes: q },
        )
    }

    /// Composite trapezoid rule with `q >= 2` equispaced nodes on `[a, b]`.
    pub fn composite_trapezoid(q: usize, a: f64, b: f64) -> Result<Self> {
        check_interval(q, 2, a, b)?;
        let h = (b - a) / (q - 1) as f64;
        let nodes = (0..q).map(|i| vec![a + h * i as f64]).collect();
        let weights = (0..q)
            .map(|i| if i == 0 || i == q - 1 { 0.5 * h } else { h })
            .collect();
        Self::checked(nodes, weights, RuleKind::CompositeTrapezoid { nodes: q })
    }

    /// Product rule on a box, from 1-D rules (at most three factors).
    pub fn tensor(factors: &[QuadratureRule]) -> Result<Self> {
        if factors.is_empty() || factors.len() > 3 {
            return Err(Error::InvalidArgument(format!(
                "tensor rules support 1 to 3 factors, got {}",
                factors.len()
            )));
        }
        let mut nodes = vec![Vec::new()];
        let mut weights = vec![1.0];
        for f in factors {
            let mut next_nodes = Vec::with_capacity(nodes.len() * f.len());
            let mut next_weights = Vec::with_capacity(nodes.len() * f.len());
            for (n, w) in nodes.iter().zip(&weights) {
                for (fnode, fw) in f.nodes.iter().zip(&f.weights) {
                    let mut point = n.clone();
                    point.extend_from_slice(fnode);
                    next_nodes.push(point);
                    next_weights.push(w * fw);
                }
            }
            nodes = next_nodes;
            weights = next_weights;
        }
        let kind = RuleKind::Tensor {
            factors: factors.iter().map(|f| f.description.clone()).collect(),
        };
        Self::checked(nodes, weights, kind)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn description(&self) -> &RuleKind {
        &self.description
    }

    /// Same nodes, weights multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::checked(
            self.nodes.clone(),
            self.weights.iter().map(|w| w * c).collect(),
            self.description.clone(),
        )
    }

    /// Nodes and weights reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::mismatch("permutation length differs from rule size"));
        }
        Self::checked(
            order.iter().map(|&i| self.nodes[i].clone()).collect(),
            order.iter().map(|&i| self.weights[i]).collect(),
            self.description.clone(),
        )
    }
}

fn check_interval(q: usize, min_q: usize, a: f64, b: f64) -> Result<()> {
    if q < min_q {
        return Err(Error::InvalidArgument(format!(
            "rule needs at least {min_q} nodes, got {q}"
        )));
    }
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidArgument(format!(
            "invalid interval [{a}, {b}]"
        )));
    }
    Ok(())
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// `P_q` from Chebyshev-like initial guesses. Nodes ascend.
fn legendre_nodes(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(q, t);
            dp = d;
            let step = p / d;
            t -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(q, t);
        if d != 0.0 {
            dp = d;
        }
        let weight = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[q - 1 - i] = t;
        w[i] = weight;
        w[q - 1 - i] = weight;
    }
    if q % 2 == 1 {
        x[q / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(q: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    for j in 2..=q {
        let j = j as f64;
        let p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
    }
    let qf = q as f64;
    (p1, qf * (t * p1 - p0) / (t * t - 1.0))
}

/// `n x Q` matrix with column `j` equal to `sqrt(w_j) k(u_j)`.
pub fn discretize_hs(kernel: &dyn HsKernel, rule: &QuadratureRule) -> Result<DenseMatrix> {
    let n = kernel.output_dim();
    let mut out = DenseMatrix::zeros(n, rule.len());
    for (j, (node, w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let v = kernel.eval(node);
        if v.len() != n {
            return Err(Error::KernelEvalFailure {
                node: j,
                reason: format!("returned {} components, expected {n}", v.len()),
            });
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::KernelEvalFailure {
                node: j,
                reason: format!("non-finite value {bad}"),
            });
        }
        let s = w.sqrt();
        for (i, x) in v.iter().enumerate() {
            out[(i, j)] = s * x;
        }
    }
    Ok(out)
}

/// Optimal rank-`k` operator `M in R^{n x n}` for the discretized problem.
pub fn continuous_lowrank(
    kx: &dyn HsKernel,
    ky: &dyn HsKernel,
    rule: &QuadratureRule,
    k: usize,
    p: SchattenP,
    tol: &ToleranceConfig,
) -> Result<LowRankSolution> {
    if kx.output_dim() != ky.output_dim() {
        return Err(Error::mismatch(format!(
            "kernels map to R^{} and R^{}",
            kx.output_dim(),
            ky.output_dim()
        )));
    }
    let x = discretize_hs(kx, rule)?;
    let y = discretize_hs(ky, rule)?;
    solve_lowrank(&x, &y, k, p, tol)
}

/// One entry of a refinement trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    pub nodes: usize,
    pub achieved_error: f64,
}

/// Grid-refinement controls for [`refine_to_convergence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementPolicy {
    pub q_start: usize,
    pub q_max: usize,
    pub conv_rtol: f64,
}

/// Solves on `rule_family(Q)` for `Q = q_start, 2 q_start, ...` until two
/// successive errors satisfy `|e(2Q) - e(Q)| <= conv_rtol (1 + e(2Q))`.
///
/// Returns the finest solution and the `(Q, error)` trace. If doubling would
/// exceed `q_max` first, fails with [`Error::NotConverged`] carrying the trace.
pub fn refine_to_convergence<F>(
    kx: &dyn HsKernel,
    ky: &dyn HsKernel,
    k: usize,
    p: SchattenP,
    rule_family: F,
    policy: RefinementPolicy,
    tol: &ToleranceConfig,
) -> Result<(LowRankSolution, Vec<RefinementStep>)>
where
    F: Fn(usize) -> Result<QuadratureRule>,
{
    let RefinementPolicy {
        q_start,
        q_max,
        conv_rtol,
    } = policy;
    if q_start < 2 || q_max < q_start || conv_rtol.is_nan() || conv_rtol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= q_start <= q_max and conv_rtol > 0, got ({q_start}, {q_max}, {conv_rtol})"
        )));
    }
    let mut q = q_start;
    let mut prev = continuous_lowrank(kx, ky, &rule_family(q)?, k, p, tol)?;
    let mut trace = vec![RefinementStep {
        nodes: q,
        achieved_error: prev.achieved_error,
    }];
    loop {
        let next_q = q * 2;
        if next_q > q_max {
            return Err(Error::NotConverged { q_max, trace });
        }
        let sol = continuous_lowrank(kx, ky, &rule_family(next_q)?, k, p, tol)?;
        trace.push(RefinementStep {
            nodes: next_q,
            achieved_error: sol.achieved_error,
        });
        let diff = (sol.achieved_error - prev.achieved_error).abs();
        if diff <= conv_rtol * (1.0 + sol.achieved_error) {
            return Ok((sol, trace));
        }
        prev = sol;
        q = next_q;
    }
}
