//! Post-hoc certification: stationarity classification, decrease audits, and
//! linearizations of the update maps.
//!
//! The update maps are implicit functions and their Jacobians follow from
//! differentiating the optimality condition of each step. For the mirror step
//! `∇h(x₊) = ∇h(x) − η∇f(x)`,
//!
//! ```text
//! Dg(x) = [∇²h(x₊)]⁻¹ (∇²h(x) − η ∇²f(x))
//! ```
//!
//! and for the proximal step `η∇f(x₊) + ∇h(x₊) = ∇h(x)`,
//!
//! ```text
//! Dg(x) = [∇²h(x₊) + η ∇²f(x₊)]⁻¹ ∇²h(x)
//! ```
//!
//! The alternating variants chain two block maps; with a product kernel
//! `h(x, y) = p(x) q(y)` the frozen block enters both through the scale and
//! through its gradient, so the cross blocks pick up rank-one corrections
//! `(∇p(x) − ∇p(x₊)) ∇q(y)ᵀ` away from fixed points. Objective Hessians are
//! finite differences of the analytic gradients; kernel Hessians are exact.
//!
//! At a stationary point the map fixes `x` and `Dg`'s spectrum decides local
//! behavior: a spectral radius above 1 certifies the iteration is locally
//! repelled, which is how escape from strict saddles shows up.

use crate::error::{Error, Result};
use crate::kernels::{BiKernel, Kernel};
use crate::numdiff;
use crate::objectives::{BiObjective, Objective};
use crate::solvers::{
    bpalm_step, bpam_step, bppm_step, decrease_bound, random_init, SolverConfig, Trace, Variant,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Dimension up to which the Hessian is assembled densely; above it the
/// extreme eigenvalues come from matrix-free power iterations.
pub const DENSE_EIG_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigMethod {
    Dense,
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarityClass {
    /// Gradient above tolerance: no certificate.
    NotStationary,
    /// Gradient below tolerance and Hessian spectrum ≥ −eig_tol.
    SecondOrderStationary,
    /// Gradient below tolerance but a direction of curvature < −eig_tol.
    StrictSaddle,
}

/// Outcome of [`certify_second_order`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub class: StationarityClass,
    pub grad_norm: f64,
    pub min_eigenvalue: f64,
    pub max_abs_eigenvalue: f64,
    pub grad_tol: f64,
    pub eig_tol: f64,
    pub dim: usize,
    pub method: EigMethod,
}

/// Classify a point by gradient norm and the extreme curvature of `∇²f`.
pub fn certify_second_order(
    f: &dyn Objective,
    x: &DVector<f64>,
    grad_tol: f64,
    eig_tol: f64,
) -> Result<StationarityReport> {
    let method = if f.dim() <= DENSE_EIG_LIMIT {
        EigMethod::Dense
    } else {
        EigMethod::PowerIteration
    };
    certify_with_method(f, x, grad_tol, eig_tol, method)
}

/// Same as [`certify_second_order`] with the eigenvalue method pinned,
/// so both paths can be checked against each other.
pub fn certify_with_method(
    f: &dyn Objective,
    x: &DVector<f64>,
    grad_tol: f64,
    eig_tol: f64,
    method: EigMethod,
) -> Result<StationarityReport> {
    if x.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            context: "certify point",
            expected: f.dim(),
            found: x.len(),
        });
    }
    let grad_norm = f.gradient(x).norm();
    let (min_eigenvalue, max_abs_eigenvalue) = match method {
        EigMethod::Dense => {
            let hess = numdiff::dense_hessian(|p| f.gradient(p), x);
            let eigs = hess.symmetric_eigen().eigenvalues;
            let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
            let max_abs = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (min, max_abs)
        }
        EigMethod::PowerIteration => extreme_eigs_matrix_free(f, x)?,
    };
    if !(grad_norm.is_finite() && min_eigenvalue.is_finite()) {
        return Err(Error::NonFinite { context: "stationarity certificate" });
    }
    let class = if grad_norm > grad_tol {
        StationarityClass::NotStationary
    } else if min_eigenvalue >= -eig_tol {
        StationarityClass::SecondOrderStationary
    } else {
        StationarityClass::StrictSaddle
    };
    Ok(StationarityReport {
        class,
        grad_norm,
        min_eigenvalue,
        max_abs_eigenvalue,
        grad_tol,
        eig_tol,
        dim: f.dim(),
        method,
    })
}

/// `(λ_min, max |λ|)` of `∇²f(x)` from Hessian-vector products only.
/// Stage one runs power iteration on `H` for the dominant modulus `M`;
/// stage two on the positive operator `(M + δ)I − H`, whose dominant
/// eigenvalue is `M + δ − λ_min`.
fn extreme_eigs_matrix_free(f: &dyn Objective, x: &DVector<f64>) -> Result<(f64, f64)> {
    let apply = |v: &DVector<f64>| f.hessian_vec(x, v);
    let dominant = |op: &dyn Fn(&DVector<f64>) -> DVector<f64>| -> Result<f64> {
        let mut v = random_init(x.len(), 1.0, 0x5EED);
        v /= v.norm();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w = op(&v);
            let norm = w.norm();
            if !norm.is_finite() {
                return Err(Error::NonFinite { context: "power iteration" });
            }
            if norm <= 1e-300 {
                return Ok(0.0);
            }
            let next = w / norm;
            let rayleigh = next.dot(&op(&next));
            if (rayleigh - lambda).abs() <= 1e-10 * (1.0 + rayleigh.abs()) {
                return Ok(rayleigh);
            }
            lambda = rayleigh;
            v = next;
        }
        Ok(lambda)
    };
    let m = dominant(&apply)?.abs();
    let delta = 0.1 * (1.0 + m);
    let shifted = |v: &DVector<f64>| v * (m + delta) - apply(v);
    let top_shifted = dominant(&shifted)?;
    Ok((m + delta - top_shifted, m))
}

/// Outcome of [`check_decrease`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecreaseReport {
    /// Consecutive-iteration pairs audited.
    pub checked_steps: usize,
    /// Smallest measured decrease minus the guaranteed bound.
    pub min_slack: f64,
    /// Iteration where it occurred.
    pub worst_iter: usize,
    /// True when every slack clears `−tol · (1 + |f_prev|)`.
    pub ok: bool,
}

/// Recompute the sufficient-decrease inequality from a recorded trace.
/// Only consecutive rows are compared, so thinned traces are audited on the
/// pairs they still contain.
pub fn check_decrease(
    trace: &Trace,
    variant: Variant,
    eta: f64,
    smoothness: f64,
    modulus: f64,
    tol: f64,
) -> DecreaseReport {
    let mut checked_steps = 0;
    let mut min_slack = f64::INFINITY;
    let mut worst_iter = 0;
    let mut ok = true;
    for pair in trace.rows.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        if cur.iter != prev.iter + 1 {
            continue;
        }
        let bound = decrease_bound(variant, cur.step_norm, eta, smoothness, modulus);
        let slack = (prev.f - cur.f) - bound;
        checked_steps += 1;
        if slack < min_slack {
            min_slack = slack;
            worst_iter = cur.iter;
        }
        if slack < -tol * (1.0 + prev.f.abs()) {
            ok = false;
        }
    }
    if checked_steps == 0 {
        min_slack = 0.0;
    }
    DecreaseReport { checked_steps, min_slack, worst_iter, ok }
}

/// Linearization of an update map at a point.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    pub dg: DMatrix<f64>,
    pub spectral_radius: f64,
    /// `‖g(z) − z‖`: zero exactly at fixed points, where the spectrum has
    /// its stability meaning.
    pub fixed_point_residual: f64,
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::EigenFailure { context: "schur decomposition" })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, c| acc.max(c.norm())))
}

fn solve_left(a: &DMatrix<f64>, rhs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::EigenFailure { context: "singular kernel hessian" })
}

fn objective_hessian(f: &dyn Objective, x: &DVector<f64>) -> DMatrix<f64> {
    numdiff::dense_hessian(|p| f.gradient(p), x)
}

/// Jacobian of the mirror-descent update at `x`.
pub fn bgd_update_jacobian(
    f: &dyn Objective,
    h: &Kernel,
    x: &DVector<f64>,
    eta: f64,
) -> Result<JacobianReport> {
    let x_plus = crate::solvers::bgd_step(f, h, x, eta, true)?;
    let rhs = h.hessian(x)? - objective_hessian(f, x) * eta;
    let dg = solve_left(&h.hessian(&x_plus)?, rhs)?;
    Ok(JacobianReport {
        spectral_radius: spectral_radius(&dg)?,
        fixed_point_residual: (&x_plus - x).norm(),
        dg,
    })
}

/// Jacobian of the proximal-point update at `x`. The step itself is resolved
/// tightly so the linearization is evaluated at the true subproblem solution.
pub fn bppm_update_jacobian(
    f: &dyn Objective,
    h: &Kernel,
    x: &DVector<f64>,
    eta: f64,
    smoothness: f64,
) -> Result<JacobianReport> {
    let mut cfg = SolverConfig::new(eta, smoothness);
    cfg.inner_tol = 1e-12;
    cfg.inner_max_iters = 50_000;
    let x_plus = bppm_step(f, h, x, &cfg)?;
    let lhs = h.hessian(&x_plus)? + objective_hessian(f, &x_plus) * eta;
    let dg = solve_left(&lhs, h.hessian(x)?)?;
    Ok(JacobianReport {
        spectral_radius: spectral_radius(&dg)?,
        fixed_point_residual: (&x_plus - x).norm(),
        dg,
    })
}

/// Factor geometry of a two-block kernel: the per-block kernels and whether
/// the blocks are multiplicatively coupled (they are not for the additive
/// euclidean kernel, whose scale functions are constant).
struct BlockGeometry {
    p: Kernel,
    q: Kernel,
    coupled: bool,
}

impl BlockGeometry {
    fn of(h: &BiKernel) -> Result<Self> {
        let probe_y = DVector::zeros(h.dim_y());
        let probe_x = DVector::zeros(h.dim_x());
        Ok(Self {
            p: h.x_block(&probe_y)?.0,
            q: h.y_block(&probe_x)?.0,
            coupled: !h.is_euclidean(),
        })
    }

    /// `q(y)`, the scale multiplying the x-block divergence.
    fn q_scale(&self, h: &BiKernel, y: &DVector<f64>) -> Result<f64> {
        Ok(h.x_block(y)?.1)
    }

    /// `p(x)`, the scale multiplying the y-block divergence.
    fn p_scale(&self, h: &BiKernel, x: &DVector<f64>) -> Result<f64> {
        Ok(h.y_block(x)?.1)
    }

    fn grad_p(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if self.coupled {
            self.p.gradient(x)
        } else {
            Ok(DVector::zeros(x.len()))
        }
    }

    fn grad_q(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if self.coupled {
            self.q.gradient(y)
        } else {
            Ok(DVector::zeros(y.len()))
        }
    }
}

fn assemble_chain(
    j_xx: DMatrix<f64>,
    j_xy: DMatrix<f64>,
    k_yx: DMatrix<f64>,
    k_yy: DMatrix<f64>,
) -> DMatrix<f64> {
    let (n, m) = (j_xx.nrows(), k_yy.nrows());
    let mut dg = DMatrix::zeros(n + m, n + m);
    dg.view_mut((0, 0), (n, n)).copy_from(&j_xx);
    dg.view_mut((0, n), (n, m)).copy_from(&j_xy);
    dg.view_mut((n, 0), (m, n)).copy_from(&(&k_yx * &j_xx));
    dg.view_mut((n, n), (m, m)).copy_from(&(&k_yx * j_xy + k_yy));
    dg
}

/// Jacobian of the alternating mirror update at `(x, y)`.
pub fn bpalm_update_jacobian(
    f: &dyn BiObjective,
    h: &BiKernel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
) -> Result<JacobianReport> {
    let geom = BlockGeometry::of(h)?;
    let (x_plus, y_plus) = bpalm_step(f, h, x, y, eta, true)?;

    // Block 1: q(y)[∇p(x₊) − ∇p(x)] + η ∇ₓf(x, y) = 0.
    let q_y = geom.q_scale(h, y)?;
    let a = geom.p.hessian(&x_plus)? * q_y;
    let h_xx = numdiff::dense_hessian(|p| f.grad_x(p, y), x);
    let h_xy = numdiff::cross_hessian(|yy| f.grad_x(x, yy), y, f.dim_x());
    let grad_q_y = geom.grad_q(y)?;
    let j_xx = solve_left(&a, geom.p.hessian(x)? * q_y - h_xx * eta)?;
    let coupling_x = (geom.grad_p(x)? - geom.grad_p(&x_plus)?) * grad_q_y.transpose();
    let j_xy = solve_left(&a, coupling_x - h_xy * eta)?;

    // Block 2 sees the fresh x: p(x₊)[∇q(y₊) − ∇q(y)] + η ∇ᵧf(x₊, y) = 0.
    let p_x = geom.p_scale(h, &x_plus)?;
    let b = geom.q.hessian(&y_plus)? * p_x;
    let h_yy = numdiff::dense_hessian(|p| f.grad_y(&x_plus, p), y);
    let h_yx = numdiff::cross_hessian(|xx| f.grad_y(xx, y), &x_plus, f.dim_y());
    let k_yy = solve_left(&b, geom.q.hessian(y)? * p_x - h_yy * eta)?;
    let coupling_y = (geom.grad_q(y)? - geom.grad_q(&y_plus)?) * geom.grad_p(&x_plus)?.transpose();
    let k_yx = solve_left(&b, coupling_y - h_yx * eta)?;

    let dg = assemble_chain(j_xx, j_xy, k_yx, k_yy);
    let residual = ((&x_plus - x).norm_squared() + (&y_plus - y).norm_squared()).sqrt();
    Ok(JacobianReport {
        spectral_radius: spectral_radius(&dg)?,
        fixed_point_residual: residual,
        dg,
    })
}

/// Jacobian of the alternating proximal update at `(x, y)`.
pub fn bpam_update_jacobian(
    f: &dyn BiObjective,
    h: &BiKernel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    smoothness: f64,
) -> Result<JacobianReport> {
    let geom = BlockGeometry::of(h)?;
    let mut cfg = SolverConfig::new(eta, smoothness);
    cfg.inner_tol = 1e-12;
    cfg.inner_max_iters = 50_000;
    let (x_plus, y_plus) = bpam_step(f, h, x, y, &cfg)?;

    // Block 1: η ∇ₓf(x₊, y) + q(y)[∇p(x₊) − ∇p(x)] = 0.
    let q_y = geom.q_scale(h, y)?;
    let a = numdiff::dense_hessian(|p| f.grad_x(p, y), &x_plus) * eta
        + geom.p.hessian(&x_plus)? * q_y;
    let j_xx = solve_left(&a, geom.p.hessian(x)? * q_y)?;
    let h_xy = numdiff::cross_hessian(|yy| f.grad_x(&x_plus, yy), y, f.dim_x());
    let coupling_x =
        (geom.grad_p(&x_plus)? - geom.grad_p(x)?) * geom.grad_q(y)?.transpose();
    let j_xy = solve_left(&a, -(h_xy * eta + coupling_x))?;

    // Block 2: η ∇ᵧf(x₊, y₊) + p(x₊)[∇q(y₊) − ∇q(y)] = 0.
    let p_x = geom.p_scale(h, &x_plus)?;
    let b = numdiff::dense_hessian(|p| f.grad_y(&x_plus, p), &y_plus) * eta
        + geom.q.hessian(&y_plus)? * p_x;
    let k_yy = solve_left(&b, geom.q.hessian(y)? * p_x)?;
    let h_yx = numdiff::cross_hessian(|xx| f.grad_y(xx, &y_plus), &x_plus, f.dim_y());
    let coupling_y =
        (geom.grad_q(&y_plus)? - geom.grad_q(y)?) * geom.grad_p(&x_plus)?.transpose();
    let k_yx = solve_left(&b, -(h_yx * eta + coupling_y))?;

    let dg = assemble_chain(j_xx, j_xy, k_yx, k_yy);
    let residual = ((&x_plus - x).norm_squared() + (&y_plus - y).norm_squared()).sqrt();
    Ok(JacobianReport {
        spectral_radius: spectral_radius(&dg)?,
        fixed_point_residual: residual,
        dg,
    })
}

/// Central-difference Jacobian of a fallible map, column by column.
pub fn finite_difference_jacobian(
    map: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    z: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let step = numdiff::value_diff_step(z.norm());
    let out_dim = map(z)?.len();
    let mut jac = DMatrix::zeros(out_dim, z.len());
    for j in 0..z.len() {
        let mut hi = z.clone();
        hi[j] += step;
        let mut lo = z.clone();
        lo[j] -= step;
        let col = (map(&hi)? - map(&lo)?) / (2.0 * step);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Relative error between an assembled Jacobian and the finite-difference
/// Jacobian of the actual update map. The two routes share nothing past the
/// step implementation, so agreement validates the assembly.
pub fn jacobian_fd_error(
    map: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    z: &DVector<f64>,
    dg: &DMatrix<f64>,
) -> Result<f64> {
    let fd = finite_difference_jacobian(map, z)?;
    if fd.nrows() != dg.nrows() || fd.ncols() != dg.ncols() {
        return Err(Error::DimensionMismatch {
            context: "jacobian comparison",
            expected: dg.nrows() * dg.ncols(),
            found: fd.nrows() * fd.ncols(),
        });
    }
    Ok((&fd - dg).norm() / dg.norm().max(1.0))
}
