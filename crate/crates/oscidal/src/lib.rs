//! Solver components for oscillatory Fredholm integral equations of the
//! second kind on [-1, 1],
//!
//! ```text
//!     y(s) - INT_{-1}^{1} K(s,t) e^{i kappa |s-t|} y(t) dt = f(s),
//! ```
//!
//! with smooth kernel K and wavenumber kappa >= 1. The equation is
//! discretized by a composite-trapezoid Nystrom scheme whose node count
//! grows like ceil(gamma * kappa^beta), collocated on a uniform grid, and
//! solved two ways: directly (dense LU on the collocation matrix) and by
//! grade-wise training of sine-activated networks against the discrete
//! operator residual, where each grade freezes the previous hidden stack
//! and fits a new block on what is left over.
//!
//! Module map:
//! - [`problem`]: kernels, manufactured oscillatory solutions, and the
//!   high-accuracy right-hand-side integrator with its disk cache.
//! - [`operator`]: quadrature/collocation grids, discrete operator
//!   application, collocation matrix assembly, the direct reference
//!   solver, and a priori / a posteriori quadrature error estimates.
//! - [`net`]: dense sine-activation networks, reverse-mode gradients,
//!   Adam with a geometric learning-rate schedule, and checkpoints.
//! - [`mgdl`]: grade-wise residual training, the exact last-layer refit,
//!   the adaptive multi-grade driver, and the single-grade baseline.
//! - [`metrics`]: discrete semi-norms, relative L2 error, per-frequency
//!   spectral error, operator norm estimates, and two-sided error bounds.
//! - [`linalg`]: the dense complex kernels everything above leans on.
//! - [`io`]: atomic file writes, CSV emission, and binary dump formats.

pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod mgdl;
pub mod net;
pub mod operator;
pub mod problem;

pub use error::{Error, Result};
