//! Reference kernels and Bregman divergences.
//!
//! A kernel here is a strongly convex `C²` function `h` whose divergence
//! `D_h(x, y) = h(x) − h(y) − ⟨∇h(y), x − y⟩` replaces the squared Euclidean
//! distance in proximal-style updates. Two families are provided:
//!
//! - the Euclidean kernel `h(x) = ½‖x‖²`, recovering classical methods, and
//! - power kernels `h(x) = (α/d)‖x‖^d + (σ/2)‖x‖² + 1`, which dominate
//!   polynomial objectives of degree up to `d`: any such `f` satisfies
//!   `L ∇²h(x) ± ∇²f(x) ⪰ 0` for a finite `L` (see
//!   [`polynomial_smoothness_bound`]), even when no global Euclidean
//!   Lipschitz constant exists.
//!
//! Two-block problems use [`BiKernel`]: either the separable Euclidean kernel
//! `(‖x‖² + ‖y‖²)/2` or a product `h(x, y) = h₁(x) · h₂(y)` of power factors.
//! The product form is handled throughout via its partial divergences
//!
//! ```text
//! D¹(x₁, x₂; y) = h(x₁, y) − h(x₂, y) − ⟨∇ₓh(x₂, y), x₁ − x₂⟩ = h₂(y) · D_{h₁}(x₁, x₂),
//! ```
//!
//! so each block behaves like a single-block power kernel rescaled by the
//! frozen block's factor value (which is ≥ 1 by construction, preserving
//! strong convexity).

use crate::error::{Error, Result};
use crate::numdiff;
use crate::objectives::{BiObjective, Objective};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Parameters of one power factor `(α/d)‖x‖^d + (σ/2)‖x‖² + 1`.
///
/// The constant offset keeps every factor ≥ 1, which is what lets product
/// bi-kernels stay strongly convex in each block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerParams {
    alpha: f64,
    sigma: f64,
    degree: u32,
}

impl PowerParams {
    /// `alpha > 0`, `sigma > 0`, `degree ≥ 2`; all finite.
    pub fn new(alpha: f64, sigma: f64, degree: u32) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                value: alpha.to_string(),
                reason: "must be finite and positive",
            });
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                value: sigma.to_string(),
                reason: "must be finite and positive",
            });
        }
        if degree < 2 {
            return Err(Error::InvalidParameter {
                name: "degree",
                value: degree.to_string(),
                reason: "must be at least 2",
            });
        }
        Ok(Self { alpha, sigma, degree })
    }

    /// The default quartic profile `¼‖x‖⁴ + ½‖x‖² + 1` (α = σ = 1, d = 4),
    /// whose mirror map is inverted in closed form by [`crate::cubic`].
    pub fn standard_quartic() -> Self {
        Self { alpha: 1.0, sigma: 1.0, degree: 4 }
    }

    /// The quadratic profile `½‖x‖² + 1` (α = σ = ½, d = 2).
    pub fn unit_quadratic() -> Self {
        Self { alpha: 0.5, sigma: 0.5, degree: 2 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Whether this is the α = σ = 1, d = 4 profile with a closed-form inverse.
    pub fn is_standard_quartic(&self) -> bool {
        self.alpha == 1.0 && self.sigma == 1.0 && self.degree == 4
    }

    /// Profile value at radius `t ≥ 0`.
    fn profile(&self, t: f64) -> f64 {
        self.alpha / f64::from(self.degree) * t.powi(self.degree as i32)
            + 0.5 * self.sigma * t * t
            + 1.0
    }

    /// Radial gradient coefficient: `∇p(x) = (α‖x‖^{d−2} + σ) x`.
    /// `powi` gives the right limits at 0 (`0^0 = 1` covers d = 2).
    fn gradient_coeff(&self, t: f64) -> f64 {
        self.alpha * t.powi(self.degree as i32 - 2) + self.sigma
    }

    /// Modulus of strong convexity of the profile. The Hessian is
    /// `α(d−2)‖x‖^{d−2} x̂x̂ᵀ + (α‖x‖^{d−2} + σ) I ⪰ σ I`, tight at the
    /// origin for d > 2; for d = 2 both terms collapse to `(α + σ) I`.
    pub fn strong_convexity(&self) -> f64 {
        if self.degree == 2 {
            self.alpha + self.sigma
        } else {
            self.sigma
        }
    }

    /// Solve `∇p(x) = g` for `x`. Radially: `α s^{d−1} + σ s = ‖g‖` has a
    /// unique root `s ≥ 0` (strictly increasing left side), found by Newton
    /// started from `min(‖g‖/σ, (‖g‖/α)^{1/(d−1)})`, which lies above the
    /// root so the convex iteration descends monotonically.
    fn invert_gradient(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        let r = g.norm();
        if !r.is_finite() {
            return Err(Error::NonFinite { context: "invert_gradient" });
        }
        if r == 0.0 {
            return Ok(DVector::zeros(g.len()));
        }
        if self.degree == 2 {
            return Ok(g / (self.alpha + self.sigma));
        }
        let d = self.degree as i32;
        let mut s = (r / self.sigma).min((r / self.alpha).powf(1.0 / f64::from(d - 1)));
        for _ in 0..128 {
            let phi = self.alpha * s.powi(d - 1) + self.sigma * s - r;
            if phi.abs() <= 1e-13 * (1.0 + r) {
                break;
            }
            let dphi = self.alpha * f64::from(d - 1) * s.powi(d - 2) + self.sigma;
            s -= phi / dphi;
            if s < 0.0 {
                s = 0.0;
            }
        }
        Ok(g * (s / r))
    }
}

/// Single-block reference kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `h(x) = ½‖x‖²`.
    Euclidean { dim: usize },
    /// `h(x) = (α/d)‖x‖^d + (σ/2)‖x‖² + 1`.
    Power { params: PowerParams, dim: usize },
}

impl Kernel {
    pub fn euclidean(dim: usize) -> Self {
        Kernel::Euclidean { dim }
    }

    pub fn power(params: PowerParams, dim: usize) -> Self {
        Kernel::Power { params, dim }
    }

    /// The quartic kernel with closed-form updates.
    pub fn standard_quartic(dim: usize) -> Self {
        Kernel::Power { params: PowerParams::standard_quartic(), dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            Kernel::Euclidean { dim } | Kernel::Power { dim, .. } => *dim,
        }
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self, Kernel::Euclidean { .. })
    }

    /// Power parameters when this is a power kernel.
    pub fn power_params(&self) -> Option<&PowerParams> {
        match self {
            Kernel::Euclidean { .. } => None,
            Kernel::Power { params, .. } => Some(params),
        }
    }

    fn check_dim(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `h(x)`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x, "kernel value")?;
        Ok(match self {
            Kernel::Euclidean { .. } => 0.5 * x.norm_squared(),
            Kernel::Power { params, .. } => params.profile(x.norm()),
        })
    }

    /// `∇h(x)`; for power kernels `(α‖x‖^{d−2} + σ) x`, which is 0 at the
    /// origin for every admissible degree.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x, "kernel gradient")?;
        Ok(match self {
            Kernel::Euclidean { .. } => x.clone(),
            Kernel::Power { params, .. } => x * params.gradient_coeff(x.norm()),
        })
    }

    /// Bregman divergence `D_h(x, y) = h(x) − h(y) − ⟨∇h(y), x − y⟩`.
    ///
    /// Always ≥ `strong_convexity()/2 · ‖x − y‖²` up to roundoff.
    pub fn divergence(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        let hy = self.value(y)?;
        let hx = self.value(x)?;
        let gy = self.gradient(y)?;
        Ok(hx - hy - gy.dot(&(x - y)))
    }

    /// Largest `σ` with `D_h(x, y) ≥ σ/2 ‖x − y‖²` for all x, y.
    pub fn strong_convexity(&self) -> f64 {
        match self {
            Kernel::Euclidean { .. } => 1.0,
            Kernel::Power { params, .. } => params.strong_convexity(),
        }
    }

    /// Invert the mirror map: the unique `x` with `∇h(x) = g`.
    pub fn invert_gradient(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(g, "invert_gradient")?;
        match self {
            Kernel::Euclidean { .. } => {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { context: "invert_gradient" });
                }
                Ok(g.clone())
            }
            Kernel::Power { params, .. } => params.invert_gradient(g),
        }
    }

    /// Dense Hessian `∇²h(x)`. Differentiating `∇h(x) = c(‖x‖) x` with
    /// `c(t) = α t^{d−2} + σ` gives `c(t) I + α(d−2) t^{d−4} xxᵀ`; the rank-one
    /// term vanishes at the origin and for d = 2.
    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x, "kernel hessian")?;
        match self {
            Kernel::Euclidean { dim } => Ok(DMatrix::identity(*dim, *dim)),
            Kernel::Power { params, dim } => {
                let t = x.norm();
                let mut hess = DMatrix::identity(*dim, *dim) * params.gradient_coeff(t);
                let d = params.degree() as i32;
                if t > 0.0 && d > 2 {
                    let coeff = params.alpha() * f64::from(d - 2) * t.powi(d - 4);
                    hess += x * x.transpose() * coeff;
                }
                Ok(hess)
            }
        }
    }
}

/// Two-block reference kernel over `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum BiKernel {
    /// Separable `h(x, y) = (‖x‖² + ‖y‖²)/2`; block updates reduce to PALM.
    Euclidean { dim_x: usize, dim_y: usize },
    /// Product `h(x, y) = h₁(x) · h₂(y)` of power factors.
    Product {
        first: PowerParams,
        second: PowerParams,
        dim_x: usize,
        dim_y: usize,
    },
}

impl BiKernel {
    pub fn euclidean(dim_x: usize, dim_y: usize) -> Self {
        BiKernel::Euclidean { dim_x, dim_y }
    }

    pub fn product(first: PowerParams, second: PowerParams, dim_x: usize, dim_y: usize) -> Self {
        BiKernel::Product { first, second, dim_x, dim_y }
    }

    /// `(¼‖x‖⁴ + ½‖x‖² + 1)(¼‖y‖⁴ + ½‖y‖² + 1)`, suited to objectives of
    /// block-degree up to four.
    pub fn standard_quartic(dim_x: usize, dim_y: usize) -> Self {
        Self::product(
            PowerParams::standard_quartic(),
            PowerParams::standard_quartic(),
            dim_x,
            dim_y,
        )
    }

    /// `(½‖x‖² + 1)(½‖y‖² + 1)`, suited to bilinear-quadratic objectives
    /// such as two-block matrix factorization.
    pub fn quadratic(dim_x: usize, dim_y: usize) -> Self {
        Self::product(
            PowerParams::unit_quadratic(),
            PowerParams::unit_quadratic(),
            dim_x,
            dim_y,
        )
    }

    pub fn dim_x(&self) -> usize {
        match self {
            BiKernel::Euclidean { dim_x, .. } | BiKernel::Product { dim_x, .. } => *dim_x,
        }
    }

    pub fn dim_y(&self) -> usize {
        match self {
            BiKernel::Euclidean { dim_y, .. } | BiKernel::Product { dim_y, .. } => *dim_y,
        }
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self, BiKernel::Euclidean { .. })
    }

    fn check_dims(&self, x: &DVector<f64>, y: &DVector<f64>, ctx: &'static str) -> Result<()> {
        if x.len() != self.dim_x() {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: self.dim_x(),
                found: x.len(),
            });
        }
        if y.len() != self.dim_y() {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: self.dim_y(),
                found: y.len(),
            });
        }
        Ok(())
    }

    /// `h(x, y)`.
    pub fn value(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_dims(x, y, "bi-kernel value")?;
        Ok(match self {
            BiKernel::Euclidean { .. } => 0.5 * (x.norm_squared() + y.norm_squared()),
            BiKernel::Product { first, second, .. } => {
                first.profile(x.norm()) * second.profile(y.norm())
            }
        })
    }

    /// `∇ₓ h(x, y)`.
    pub fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(x, y, "bi-kernel grad_x")?;
        Ok(match self {
            BiKernel::Euclidean { .. } => x.clone(),
            BiKernel::Product { first, second, .. } => {
                x * (first.gradient_coeff(x.norm()) * second.profile(y.norm()))
            }
        })
    }

    /// `∇_y h(x, y)`.
    pub fn grad_y(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(x, y, "bi-kernel grad_y")?;
        Ok(match self {
            BiKernel::Euclidean { .. } => y.clone(),
            BiKernel::Product { first, second, .. } => {
                y * (second.gradient_coeff(y.norm()) * first.profile(x.norm()))
            }
        })
    }

    /// First-block divergence
    /// `D¹(x₁, x₂; y) = h(x₁, y) − h(x₂, y) − ⟨∇ₓh(x₂, y), x₁ − x₂⟩`.
    pub fn divergence_first(
        &self,
        x1: &DVector<f64>,
        x2: &DVector<f64>,
        y: &DVector<f64>,
    ) -> Result<f64> {
        let h1 = self.value(x1, y)?;
        let h2 = self.value(x2, y)?;
        let g = self.grad_x(x2, y)?;
        Ok(h1 - h2 - g.dot(&(x1 - x2)))
    }

    /// Second-block divergence
    /// `D²(y₁, y₂; x) = h(x, y₁) − h(x, y₂) − ⟨∇_y h(x, y₂), y₁ − y₂⟩`.
    pub fn divergence_second(
        &self,
        y1: &DVector<f64>,
        y2: &DVector<f64>,
        x: &DVector<f64>,
    ) -> Result<f64> {
        let h1 = self.value(x, y1)?;
        let h2 = self.value(x, y2)?;
        let g = self.grad_y(x, y2)?;
        Ok(h1 - h2 - g.dot(&(y1 - y2)))
    }

    /// Largest `σ` with `D¹ ≥ σ/2 ‖x₁ − x₂‖²` and `D² ≥ σ/2 ‖y₁ − y₂‖²`
    /// uniformly in the frozen block. For products the frozen factor is ≥ 1,
    /// so the modulus of each factor survives.
    pub fn strong_bi_convexity(&self) -> f64 {
        match self {
            BiKernel::Euclidean { .. } => 1.0,
            BiKernel::Product { first, second, .. } => {
                first.strong_convexity().min(second.strong_convexity())
            }
        }
    }

    /// The x-block restriction `x ↦ h(x, y)` as a single-block [`Kernel`], up
    /// to an additive constant (which no gradient or divergence sees), paired
    /// with the scale `h₂(y)` by which the frozen block multiplies the factor
    /// gradient. An x-block update with step `η` is exactly a single-block
    /// update on the factor kernel with step `η / h₂(y)`.
    pub fn x_block(&self, y: &DVector<f64>) -> Result<(Kernel, f64)> {
        Ok(match self {
            BiKernel::Euclidean { dim_x, .. } => (Kernel::euclidean(*dim_x), 1.0),
            BiKernel::Product { first, second, dim_x, .. } => (
                Kernel::power(*first, *dim_x),
                second.profile(y.norm()),
            ),
        })
    }

    /// The y-block restriction `y ↦ h(x, y)`; see [`BiKernel::x_block`].
    pub fn y_block(&self, x: &DVector<f64>) -> Result<(Kernel, f64)> {
        Ok(match self {
            BiKernel::Euclidean { dim_y, .. } => (Kernel::euclidean(*dim_y), 1.0),
            BiKernel::Product { first, second, dim_y, .. } => (
                Kernel::power(*second, *dim_y),
                first.profile(x.norm()),
            ),
        })
    }
}

/// Relative-smoothness constant for a polynomial objective against a power
/// kernel: if `‖∇²f(x)‖ ≤ Σ_{k=2}^{d} k(k−1) ‖A_k‖ ‖x‖^{k−2}` (coefficient
/// tensors `A_k` in spectral norm), then
///
/// ```text
/// L = Σ_{k=2}^{d} k(k−1) ‖A_k‖ · max(1/σ, 1/α)
/// ```
///
/// satisfies `L ∇²h ± ∇²f ⪰ 0` for the power kernel of degree ≥ d, since
/// `‖x‖^{k−2} ≤ 1 + ‖x‖^{d−2}` and `(1 + s)/(αs + σ) ≤ max(1/σ, 1/α)`.
///
/// `tensor_norms[i]` holds `‖A_{i+2}‖`, so the list runs k = 2, …, d.
pub fn polynomial_smoothness_bound(tensor_norms: &[f64], params: &PowerParams) -> Result<f64> {
    if tensor_norms.is_empty() {
        return Err(Error::InvalidParameter {
            name: "tensor_norms",
            value: "[]".to_string(),
            reason: "need at least the quadratic coefficient norm",
        });
    }
    let poly_degree = tensor_norms.len() as u32 + 1;
    if params.degree() < poly_degree {
        return Err(Error::InvalidParameter {
            name: "degree",
            value: params.degree().to_string(),
            reason: "kernel degree must be at least the polynomial degree",
        });
    }
    let mut sum = 0.0;
    for (i, &norm) in tensor_norms.iter().enumerate() {
        if !(norm.is_finite() && norm >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "tensor_norms",
                value: norm.to_string(),
                reason: "norms must be finite and nonnegative",
            });
        }
        let k = (i + 2) as f64;
        sum += k * (k - 1.0) * norm;
    }
    Ok(sum * (1.0 / params.sigma()).max(1.0 / params.alpha()))
}

fn sample_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    let mut dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = dir.norm();
    if n > 0.0 {
        dir /= n;
    }
    let u: f64 = rng.random::<f64>();
    dir * (radius * u.powf(1.0 / dim as f64))
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Sampled estimate of the relative-smoothness constant of `f` against `k`:
/// the maximum over random points `x` in the ball of the given radius and
/// random unit directions `v` of `|vᵀ∇²f(x)v| / (vᵀ∇²h(x)v)`, multiplied by
/// `safety`. Hessian actions are taken by finite differences of gradients.
///
/// This is a heuristic lower-biased probe (a maximum over samples), hence the
/// safety factor; use [`polynomial_smoothness_bound`] when coefficient tensor
/// norms are available.
pub fn estimate_relative_smoothness(
    f: &dyn Objective,
    k: &Kernel,
    samples: usize,
    radius: f64,
    seed: u64,
    safety: f64,
) -> Result<f64> {
    if f.dim() != k.dim() {
        return Err(Error::DimensionMismatch {
            context: "estimate_relative_smoothness",
            expected: k.dim(),
            found: f.dim(),
        });
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter {
            name: "radius",
            value: radius.to_string(),
            reason: "must be finite and positive",
        });
    }
    if samples == 0 {
        return Err(Error::InvalidParameter {
            name: "samples",
            value: "0".to_string(),
            reason: "need at least one sample",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = k.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_in_ball(&mut rng, dim, radius);
        let v = unit_direction(&mut rng, dim);
        let hf = numdiff::hessian_vec(|p| f.gradient(p), &x, &v);
        let hh = numdiff::hessian_vec(
            |p| k.gradient(p).expect("kernel gradient within sampled ball"),
            &x,
            &v,
        );
        let num = hf.dot(&v).abs();
        let den = hh.dot(&v);
        if !(num.is_finite() && den.is_finite()) {
            return Err(Error::NonFinite { context: "estimate_relative_smoothness" });
        }
        // Strong convexity keeps the denominator bounded away from zero.
        let den = den.max(1e-12);
        worst = worst.max(num / den);
    }
    Ok(worst * safety)
}

/// Two-block analogue of [`estimate_relative_smoothness`]: returns `(L₁, L₂)`
/// estimated blockwise from `|vᵀ∇²ₓₓf v| / (vᵀ∇²ₓₓh v)` and its y-block
/// mirror, sampling both blocks in balls of the given radius.
pub fn estimate_relative_bi_smoothness(
    f: &dyn BiObjective,
    k: &BiKernel,
    samples: usize,
    radius: f64,
    seed: u64,
    safety: f64,
) -> Result<(f64, f64)> {
    if f.dim_x() != k.dim_x() {
        return Err(Error::DimensionMismatch {
            context: "estimate_relative_bi_smoothness",
            expected: k.dim_x(),
            found: f.dim_x(),
        });
    }
    if f.dim_y() != k.dim_y() {
        return Err(Error::DimensionMismatch {
            context: "estimate_relative_bi_smoothness",
            expected: k.dim_y(),
            found: f.dim_y(),
        });
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter {
            name: "radius",
            value: radius.to_string(),
            reason: "must be finite and positive",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (k.dim_x(), k.dim_y());
    let (mut l1, mut l2): (f64, f64) = (0.0, 0.0);
    for _ in 0..samples {
        let x = sample_in_ball(&mut rng, nx, radius);
        let y = sample_in_ball(&mut rng, ny, radius);
        let vx = unit_direction(&mut rng, nx);
        let vy = unit_direction(&mut rng, ny);

        let hf_x = numdiff::hessian_vec(|p| f.grad_x(p, &y), &x, &vx);
        let hh_x = numdiff::hessian_vec(
            |p| k.grad_x(p, &y).expect("bi-kernel grad_x within sampled ball"),
            &x,
            &vx,
        );
        l1 = l1.max(hf_x.dot(&vx).abs() / hh_x.dot(&vx).max(1e-12));

        let hf_y = numdiff::hessian_vec(|p| f.grad_y(&x, p), &y, &vy);
        let hh_y = numdiff::hessian_vec(
            |p| k.grad_y(&x, p).expect("bi-kernel grad_y within sampled ball"),
            &y,
            &vy,
        );
        l2 = l2.max(hf_y.dot(&vy).abs() / hh_y.dot(&vy).max(1e-12));
    }
    if !(l1.is_finite() && l2.is_finite()) {
        return Err(Error::NonFinite { context: "estimate_relative_bi_smoothness" });
    }
    Ok((l1 * safety, l2 * safety))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::FnObjective;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
    }

    #[test]
    fn power_params_validation() {
        assert!(PowerParams::new(0.0, 1.0, 4).is_err());
        assert!(PowerParams::new(1.0, -1.0, 4).is_err());
        assert!(PowerParams::new(1.0, 1.0, 1).is_err());
        assert!(PowerParams::new(f64::NAN, 1.0, 4).is_err());
        assert!(PowerParams::new(2.0, 0.5, 6).is_ok());
    }

    #[test]
    fn known_values_and_gradients() {
        let quartic = Kernel::standard_quartic(2);
        let origin = DVector::zeros(2);
        assert_relative_eq!(quartic.value(&origin).unwrap(), 1.0);
        assert_eq!(quartic.gradient(&origin).unwrap(), origin);

        let unit = DVector::from_vec(vec![1.0, 0.0]);
        assert_relative_eq!(quartic.value(&unit).unwrap(), 1.75);
        let g = quartic.gradient(&unit).unwrap();
        assert_relative_eq!(g[0], 2.0, max_relative = 1e-14);
        assert_relative_eq!(g[1], 0.0);

        let euclid = Kernel::euclidean(2);
        let x = DVector::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(euclid.value(&x).unwrap(), 12.5);
        assert_eq!(euclid.gradient(&x).unwrap(), x);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let kernels = [
            Kernel::euclidean(4),
            Kernel::standard_quartic(4),
            Kernel::power(PowerParams::new(2.0, 0.5, 6).unwrap(), 4),
            Kernel::power(PowerParams::new(0.7, 1.3, 3).unwrap(), 4),
            Kernel::power(PowerParams::new(1.5, 2.0, 2).unwrap(), 4),
        ];
        let mut r = rng(11);
        for k in &kernels {
            for _ in 0..25 {
                let x = random_vec(&mut r, 4, 2.0);
                let analytic = k.gradient(&x).unwrap();
                let fd = numdiff::fd_gradient(|p| k.value(p).unwrap(), &x);
                assert!(
                    (&analytic - &fd).norm() <= 1e-6 * (1.0 + analytic.norm()),
                    "kernel {k:?} gradient mismatch at {x:?}"
                );
            }
        }
    }

    #[test]
    fn hessians_match_finite_differences() {
        let kernels = [
            Kernel::euclidean(4),
            Kernel::standard_quartic(4),
            Kernel::power(PowerParams::new(2.0, 0.5, 6).unwrap(), 4),
            Kernel::power(PowerParams::new(0.7, 1.3, 3).unwrap(), 4),
            Kernel::power(PowerParams::new(1.5, 2.0, 2).unwrap(), 4),
        ];
        let mut r = rng(17);
        for k in &kernels {
            for _ in 0..10 {
                let x = random_vec(&mut r, 4, 2.0);
                let analytic = k.hessian(&x).unwrap();
                let fd = numdiff::dense_hessian(|p| k.gradient(p).unwrap(), &x);
                assert!(
                    (&analytic - &fd).norm() <= 1e-6 * (1.0 + analytic.norm()),
                    "kernel {k:?} hessian mismatch at {x:?}"
                );
            }
            // Origin is the curvature floor and must not produce NaNs.
            let at_zero = k.hessian(&DVector::zeros(4)).unwrap();
            assert!(at_zero.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn divergence_basics() {
        let k = Kernel::standard_quartic(3);
        let mut r = rng(5);
        let x = random_vec(&mut r, 3, 1.5);
        assert_relative_eq!(k.divergence(&x, &x).unwrap(), 0.0, epsilon = 1e-12);

        // Euclidean divergence is exactly half the squared distance.
        let e = Kernel::euclidean(3);
        for _ in 0..50 {
            let a = random_vec(&mut r, 3, 3.0);
            let b = random_vec(&mut r, 3, 3.0);
            let d = e.divergence(&a, &b).unwrap();
            assert_relative_eq!(d, 0.5 * (&a - &b).norm_squared(), max_relative = 1e-12);
        }
    }

    #[test]
    fn divergence_dominates_squared_distance() {
        let kernels = [
            Kernel::euclidean(3),
            Kernel::standard_quartic(3),
            Kernel::power(PowerParams::new(2.0, 0.5, 6).unwrap(), 3),
            Kernel::power(PowerParams::new(1.5, 2.0, 2).unwrap(), 3),
        ];
        let mut r = rng(17);
        for k in &kernels {
            let floor = k.strong_convexity();
            for _ in 0..1000 {
                let x = random_vec(&mut r, 3, 4.0);
                let y = random_vec(&mut r, 3, 4.0);
                let d = k.divergence(&x, &y).unwrap();
                let bound = 0.5 * floor * (&x - &y).norm_squared();
                let scale = 1.0 + k.value(&x).unwrap().abs() + k.value(&y).unwrap().abs();
                assert!(
                    d >= bound - 1e-10 * scale,
                    "divergence {d} below floor {bound} for {k:?}"
                );
            }
        }
    }

    #[test]
    fn bi_divergence_matches_block_restriction() {
        // D¹(x₁, x₂; y) must equal the divergence of the single-block
        // restriction x ↦ h(x, y); same for the second block.
        let kernels = [
            BiKernel::euclidean(3, 2),
            BiKernel::quadratic(3, 2),
            BiKernel::standard_quartic(3, 2),
            BiKernel::product(
                PowerParams::new(2.0, 0.5, 6).unwrap(),
                PowerParams::new(1.0, 1.0, 3).unwrap(),
                3,
                2,
            ),
        ];
        let mut r = rng(23);
        for k in &kernels {
            for _ in 0..50 {
                let x1 = random_vec(&mut r, 3, 2.0);
                let x2 = random_vec(&mut r, 3, 2.0);
                let y = random_vec(&mut r, 2, 2.0);
                let direct = k.divergence_first(&x1, &x2, &y).unwrap();
                let restricted = k.value(&x1, &y).unwrap()
                    - k.value(&x2, &y).unwrap()
                    - k.grad_x(&x2, &y).unwrap().dot(&(&x1 - &x2));
                assert_relative_eq!(direct, restricted, epsilon = 1e-10, max_relative = 1e-10);

                let y1 = random_vec(&mut r, 2, 2.0);
                let d2 = k.divergence_second(&y1, &y, &x1).unwrap();
                let r2 = k.value(&x1, &y1).unwrap()
                    - k.value(&x1, &y).unwrap()
                    - k.grad_y(&x1, &y).unwrap().dot(&(&y1 - &y));
                assert_relative_eq!(d2, r2, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn quadratic_product_divergence_closed_form() {
        // For (½‖x‖²+1)(½‖y‖²+1): D¹(x₁, x₂; y) = (½‖y‖²+1) · ½‖x₁−x₂‖².
        let k = BiKernel::quadratic(3, 2);
        let mut r = rng(31);
        for _ in 0..100 {
            let x1 = random_vec(&mut r, 3, 3.0);
            let x2 = random_vec(&mut r, 3, 3.0);
            let y = random_vec(&mut r, 2, 3.0);
            let expected = (0.5 * y.norm_squared() + 1.0) * 0.5 * (&x1 - &x2).norm_squared();
            assert_relative_eq!(
                k.divergence_first(&x1, &x2, &y).unwrap(),
                expected,
                max_relative = 1e-12,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn bi_divergence_dominates_squared_distance() {
        let kernels = [
            BiKernel::euclidean(3, 2),
            BiKernel::quadratic(3, 2),
            BiKernel::standard_quartic(3, 2),
        ];
        let mut r = rng(37);
        for k in &kernels {
            let floor = k.strong_bi_convexity();
            for _ in 0..1000 {
                let x1 = random_vec(&mut r, 3, 4.0);
                let x2 = random_vec(&mut r, 3, 4.0);
                let y = random_vec(&mut r, 2, 4.0);
                let d1 = k.divergence_first(&x1, &x2, &y).unwrap();
                let scale = 1.0 + k.value(&x1, &y).unwrap().abs() + k.value(&x2, &y).unwrap().abs();
                assert!(d1 >= 0.5 * floor * (&x1 - &x2).norm_squared() - 1e-10 * scale);

                let y1 = random_vec(&mut r, 2, 4.0);
                let d2 = k.divergence_second(&y1, &y, &x1).unwrap();
                let scale2 =
                    1.0 + k.value(&x1, &y1).unwrap().abs() + k.value(&x1, &y).unwrap().abs();
                assert!(d2 >= 0.5 * floor * (&y1 - &y).norm_squared() - 1e-10 * scale2);
            }
        }
    }

    #[test]
    fn invert_gradient_round_trip() {
        let kernels = [
            Kernel::euclidean(3),
            Kernel::standard_quartic(3),
            Kernel::power(PowerParams::new(2.0, 0.5, 6).unwrap(), 3),
            Kernel::power(PowerParams::new(1.5, 2.0, 2).unwrap(), 3),
            Kernel::power(PowerParams::new(0.7, 1.3, 3).unwrap(), 3),
        ];
        let mut r = rng(41);
        for k in &kernels {
            for _ in 0..50 {
                let x = random_vec(&mut r, 3, 5.0);
                let g = k.gradient(&x).unwrap();
                let back = k.invert_gradient(&g).unwrap();
                assert!(
                    (&back - &x).norm() <= 1e-9 * (1.0 + x.norm()),
                    "round trip failed for {k:?}"
                );
            }
        }
    }

    #[test]
    fn block_restriction_consistency() {
        // A block update through x_block must reproduce ∇ₓh exactly:
        // ∇ₓh(x, y) = scale · ∇p(x).
        let k = BiKernel::standard_quartic(3, 2);
        let mut r = rng(43);
        for _ in 0..50 {
            let x = random_vec(&mut r, 3, 2.0);
            let y = random_vec(&mut r, 2, 2.0);
            let (factor, scale) = k.x_block(&y).unwrap();
            let lhs = k.grad_x(&x, &y).unwrap();
            let rhs = factor.gradient(&x).unwrap() * scale;
            assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
        }
    }

    #[test]
    fn polynomial_bound_known_values() {
        let unit = PowerParams::standard_quartic();
        assert_relative_eq!(polynomial_smoothness_bound(&[1.0], &unit).unwrap(), 2.0);
        assert_relative_eq!(
            polynomial_smoothness_bound(&[1.0, 1.0, 1.0], &unit).unwrap(),
            20.0
        );
        let skew = PowerParams::new(2.0, 0.5, 4).unwrap();
        assert_relative_eq!(polynomial_smoothness_bound(&[0.5], &skew).unwrap(), 2.0);

        assert!(polynomial_smoothness_bound(&[], &unit).is_err());
        assert!(polynomial_smoothness_bound(&[-1.0], &unit).is_err());
        // Quartic polynomial against a quadratic kernel is rejected.
        let quad = PowerParams::new(1.0, 1.0, 2).unwrap();
        assert!(polynomial_smoothness_bound(&[1.0, 0.0, 1.0], &quad).is_err());
    }

    #[test]
    fn polynomial_bound_dominates_hessians() {
        // Random f(x) = a₄‖x‖⁴ + c₃(vᵀx)³ + ½xᵀSx + bᵀx with exact tensor
        // norms ‖A₄‖ = a₄, ‖A₃‖ = |c₃|‖v‖³, ‖A₂‖ = ‖S‖/2. Certify
        // L vᵀ∇²h v ≥ |vᵀ∇²f v| at random points with FD Hessian actions.
        let mut r = rng(47);
        let dim = 3;
        for trial in 0..10 {
            let a4: f64 = r.random::<f64>() * 0.5;
            let c3: f64 = r.random::<f64>() - 0.5;
            let v = random_vec(&mut r, dim, 1.0);
            let s_raw = nalgebra::DMatrix::from_fn(dim, dim, |_, _| {
                r.sample::<f64, _>(StandardNormal)
            });
            let s = (&s_raw + s_raw.transpose()) * 0.5;
            let b = random_vec(&mut r, dim, 1.0);

            let s_norm = s.clone().symmetric_eigen().eigenvalues.amax();
            let norms = [0.5 * s_norm, c3.abs() * v.norm().powi(3), a4];

            let params = PowerParams::new(
                0.5 + r.random::<f64>(),
                0.5 + r.random::<f64>(),
                4 + (trial % 2) as u32 * 2,
            )
            .unwrap();
            let k = Kernel::power(params, dim);
            let l = polynomial_smoothness_bound(&norms, &params).unwrap();

            let s2 = s.clone();
            let vv = v.clone();
            let bb = b.clone();
            let grad = move |x: &DVector<f64>| -> DVector<f64> {
                x * (4.0 * a4 * x.norm_squared())
                    + &vv * (3.0 * c3 * vv.dot(x).powi(2))
                    + &s2 * x
                    + &bb
            };

            for _ in 0..10 {
                let x = random_vec(&mut r, dim, 3.0);
                let dir = unit_direction(&mut r, dim);
                let hf = numdiff::hessian_vec(&grad, &x, &dir).dot(&dir);
                let hh = numdiff::hessian_vec(
                    |p| k.gradient(p).unwrap(),
                    &x,
                    &dir,
                )
                .dot(&dir);
                let scale = 1.0 + hf.abs() + hh.abs();
                assert!(
                    l * hh - hf.abs() >= -1e-8 * scale,
                    "bound {l} violated: |vᵀHf v| = {hf}, vᵀHh v = {hh}"
                );
            }
        }
    }

    #[test]
    fn estimator_identity_ratio() {
        // f = ½‖x‖² against the Euclidean kernel has ratio exactly 1.
        let f = FnObjective::new(3, |x: &DVector<f64>| 0.5 * x.norm_squared(), |x| x.clone());
        let k = Kernel::euclidean(3);
        let est = estimate_relative_smoothness(&f, &k, 40, 3.0, 7, 1.0).unwrap();
        assert!((est - 1.0).abs() <= 0.05, "estimate {est} should be ≈ 1");
    }

    #[test]
    fn estimator_matched_quartic() {
        // f = ¼‖x‖⁴ + ½‖x‖² shares its Hessian with the standard quartic
        // kernel, so the ratio is 1 everywhere; the analytic ratio for any
        // quartic polynomial against this kernel never exceeds 3.
        let f = FnObjective::new(
            3,
            |x: &DVector<f64>| 0.25 * x.norm_squared().powi(2) + 0.5 * x.norm_squared(),
            |x: &DVector<f64>| x * (x.norm_squared() + 1.0),
        );
        let k = Kernel::standard_quartic(3);
        let safety = 2.0;
        let est = estimate_relative_smoothness(&f, &k, 50, 5.0, 11, safety).unwrap();
        assert!(est <= 3.0 * safety + 1e-6, "estimate {est} above analytic cap");
        assert!((est - safety).abs() <= 0.05 * safety, "raw ratio should be ≈ 1");
    }

    #[test]
    fn estimator_flat_objective() {
        let f = FnObjective::new(3, |_: &DVector<f64>| 42.0, |x: &DVector<f64>| {
            DVector::zeros(x.len())
        });
        let k = Kernel::standard_quartic(3);
        let est = estimate_relative_smoothness(&f, &k, 20, 2.0, 3, 2.0).unwrap();
        assert!(est.abs() <= 1e-6, "flat objective should estimate ≈ 0, got {est}");
    }

    #[test]
    fn estimator_rejects_bad_inputs() {
        let f = FnObjective::new(3, |x: &DVector<f64>| 0.5 * x.norm_squared(), |x| x.clone());
        let k = Kernel::euclidean(3);
        assert!(estimate_relative_smoothness(&f, &k, 0, 1.0, 0, 2.0).is_err());
        assert!(estimate_relative_smoothness(&f, &k, 10, -1.0, 0, 2.0).is_err());
        let k2 = Kernel::euclidean(2);
        assert!(estimate_relative_smoothness(&f, &k2, 10, 1.0, 0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn divergence_nonnegative_randomized(
            xs in proptest::collection::vec(-5.0f64..5.0, 3),
            ys in proptest::collection::vec(-5.0f64..5.0, 3),
            alpha in 0.2f64..3.0,
            sigma in 0.2f64..3.0,
            degree in 2u32..7,
        ) {
            let k = Kernel::power(PowerParams::new(alpha, sigma, degree).unwrap(), 3);
            let x = DVector::from_vec(xs);
            let y = DVector::from_vec(ys);
            let d = k.divergence(&x, &y).unwrap();
            let floor = 0.5 * k.strong_convexity() * (&x - &y).norm_squared();
            let scale = 1.0 + k.value(&x).unwrap().abs() + k.value(&y).unwrap().abs();
            prop_assert!(d >= floor - 1e-10 * scale);
        }
    }
}
