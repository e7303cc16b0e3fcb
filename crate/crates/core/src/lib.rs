//! Bregman-divergence optimization toolkit.
//!
//! This crate implements first-order methods for objectives that are smooth
//! *relative to* a convex reference kernel `h` rather than Lipschitz-smooth in
//! the Euclidean sense: `L ∇²h(x) ± ∇²f(x) ⪰ 0`. Replacing the quadratic
//! proximity term of gradient descent with the Bregman divergence of `h`
//!
//! ```text
//! D_h(x, y) = h(x) − h(y) − ⟨∇h(y), x − y⟩
//! ```
//!
//! yields mirror-descent style updates whose admissible step sizes do not
//! collapse when the objective has polynomial (for example quartic) growth.
//!
//! Modules:
//! - [`cubic`]: closed-form solution of `t³ + t = a` and the induced radial
//!   retraction, the computational core of the quartic-kernel updates.
//! - [`kernels`]: Euclidean and power reference kernels, product bi-kernels
//!   for two-block problems, Bregman divergences, and relative-smoothness
//!   constants (exact polynomial bounds and a sampled estimator).
//! - [`objectives`]: the objective abstractions, low-rank matrix recovery
//!   instances (symmetric `UUᵀ` and two-block `UVᵀ` factorization), and the
//!   spectral oracle giving the certified optimal value.
//! - [`solvers`]: Bregman gradient (B-GD), Bregman proximal point (B-PPM),
//!   and their two-block Gauss–Seidel variants (B-PALM, B-PAM), plus plain
//!   GD/PALM baselines, with per-iteration traces.
//! - [`diagnostics`]: sufficient-decrease verification, second-order
//!   stationarity certification, and update-map Jacobians whose spectra
//!   certify that strict saddles are unstable fixed points.

pub mod cubic;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod numdiff;
pub mod objectives;
pub mod solvers;

pub use error::{Error, Result};
