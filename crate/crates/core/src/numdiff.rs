//! Central finite differences.
//!
//! All derivative checks and dense Hessian assemblies in this crate go through
//! these helpers so the step-size policy lives in one place:
//! - first differences of an *analytic gradient* (Hessian-vector products) use
//!   `sqrt(ε_mach) · (1 + ‖x‖)`;
//! - first differences of *values* or dense assemblies balance truncation
//!   against rounding at `ε_mach^(1/3) · (1 + ‖x‖)`.

use nalgebra::{DMatrix, DVector};

/// Step for differencing an analytic gradient once.
#[inline]
pub fn gradient_diff_step(x_norm: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + x_norm)
}

/// Step for differencing values, or for dense assemblies.
#[inline]
pub fn value_diff_step(x_norm: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x_norm)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let eps = value_diff_step(x.norm());
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let fp = f(&probe);
        probe[i] = x[i] - eps;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * eps);
    }
    g
}

/// Hessian-vector product `∇²f(x) · v` from central differences of a gradient.
///
/// The probe direction is normalized so the step size is independent of `‖v‖`.
pub fn hessian_vec<G>(grad: G, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let vn = v.norm();
    if vn == 0.0 {
        return DVector::zeros(x.len());
    }
    let eps = gradient_diff_step(x.norm());
    let unit = v / vn;
    let gp = grad(&(x + &unit * eps));
    let gm = grad(&(x - &unit * eps));
    (gp - gm) * (vn / (2.0 * eps))
}

/// Dense Hessian from central differences of a gradient, symmetrized.
pub fn dense_hessian<G>(grad: G, x: &DVector<f64>) -> DMatrix<f64>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let eps = value_diff_step(x.norm());
    let mut h = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for j in 0..n {
        probe[j] = x[j] + eps;
        let gp = grad(&probe);
        probe[j] = x[j] - eps;
        let gm = grad(&probe);
        probe[j] = x[j];
        let col = (gp - gm) / (2.0 * eps);
        h.set_column(j, &col);
    }
    // Mixed partials commute; averaging removes the antisymmetric FD noise.
    let ht = h.transpose();
    (h + ht) * 0.5
}

/// Dense Jacobian of a vector-valued map by central differences (column `j`
/// differentiates along coordinate `j`).
pub fn dense_jacobian<M>(map: M, x: &DVector<f64>) -> DMatrix<f64>
where
    M: Fn(&DVector<f64>) -> DVector<f64>,
{
    let eps = value_diff_step(x.norm());
    let mut probe = x.clone();
    probe[0] = x[0] + eps;
    let first = map(&probe);
    probe[0] = x[0] - eps;
    let out_dim = first.len();
    let mut jac = DMatrix::zeros(out_dim, x.len());
    jac.set_column(0, &((first - map(&probe)) / (2.0 * eps)));
    probe[0] = x[0];
    for j in 1..x.len() {
        probe[j] = x[j] + eps;
        let mp = map(&probe);
        probe[j] = x[j] - eps;
        let mm = map(&probe);
        probe[j] = x[j];
        jac.set_column(j, &((mp - mm) / (2.0 * eps)));
    }
    jac
}

/// Rectangular block of mixed second partials `∂²f / ∂x ∂y` obtained by
/// differencing a partial gradient `y ↦ ∇_x f(x, y)`; entry `(i, j)` holds
/// `∂(∇_x f)_i / ∂y_j`.
pub fn cross_hessian<G>(grad_x: G, y: &DVector<f64>, rows: usize) -> DMatrix<f64>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let eps = value_diff_step(y.norm());
    let mut h = DMatrix::zeros(rows, y.len());
    let mut probe = y.clone();
    for j in 0..y.len() {
        probe[j] = y[j] + eps;
        let gp = grad_x(&probe);
        probe[j] = y[j] - eps;
        let gm = grad_x(&probe);
        probe[j] = y[j];
        h.set_column(j, &((gp - gm) / (2.0 * eps)));
    }
    h
}
