//! Optimal low-rank approximation of linear maps.
//!
//! Given operators `X, Y` with a common source space, the problems
//! `min ||Y - M X||_{S,p}` over `rank(M) <= k` are solved in closed form for
//! every Schatten order `p`. On top of the solver sit three front-ends:
//!
//! * [`dmd`]: snapshot dynamic mode decomposition and its spectrum,
//! * [`kernel`]: the same regression in a reproducing-kernel feature space,
//!   computed from Gram matrices only,
//! * [`continuous`]: integral operators discretized by quadrature,
//!
//! plus an [`oracle`] module with independent checks (random search,
//! alternating least squares, truncated SVD) and a batch driver in [`cli`].
//!
//! ```
//! use lowrank::{solve_lowrank, DenseMatrix, SchattenP, ToleranceConfig};
//!
//! let x = DenseMatrix::identity(2, 2);
//! let y = DenseMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
//! let sol = solve_lowrank(&x, &y, 1, SchattenP::FROBENIUS, &ToleranceConfig::default())?;
//! assert!((sol.achieved_error - 1.0).abs() < 1e-12);
//! # Ok::<(), lowrank::Error>(())
//! ```

pub mod cli;
pub mod continuous;
pub mod dmd;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod oracle;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::{
    numerical_rank, pinv, psd_sqrt, schatten_norm, svd, DenseMatrix, SchattenP, SvdFactors,
    ToleranceConfig,
};
pub use solver::{
    build_z, predicted_error, projector_topk, solve_lowrank, solve_weighted, LowRankSolution,
};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/norms.md")]
    mod norms {}
    #[doc = include_str!("../../../book/src/closed-form.md")]
    mod closed_form {}
    #[doc = include_str!("../../../book/src/weighted.md")]
    mod weighted {}
    #[doc = include_str!("../../../book/src/dmd.md")]
    mod dmd {}
    #[doc = include_str!("../../../book/src/kernel.md")]
    mod kernel {}
    #[doc = include_str!("../../../book/src/continuous.md")]
    mod continuous {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
