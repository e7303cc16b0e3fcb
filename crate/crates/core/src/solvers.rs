//! First-order solvers driven by a reference kernel.
//!
//! Four geometry-aware methods plus two Euclidean baselines:
//!
//! * `bgd`: mirror step `∇h(x₊) = ∇h(x) − η ∇f(x)`.
//! * `bppm`: proximal point, `x₊ = argmin_z f(z) + D_h(z, x)/η`, solved by an
//!   inner monotone mirror descent warm-started at `x`.
//! * `bpalm`: alternating mirror steps on the two blocks (Gauss–Seidel, the
//!   `y` step sees the fresh `x`).
//! * `bpam`: alternating proximal steps,
//!   `x₊ = argmin_z f(z, y) + D¹_h(z, x; y)/η`, via closed-form ridge solves
//!   when the kernel block is quadratic and the objective exposes one, or the
//!   inner solver otherwise.
//! * `gd`, `palm`: plain (alternating) gradient descent, used as monitors;
//!   they carry no decrease guarantee here.
//!
//! For `η ∈ (0, 1/L)`, with `L` the relative (bi-)smoothness constant and `σ`
//! the (bi-)strong-convexity modulus of the kernel, every accepted iterate
//! satisfies the sufficient decrease inequality
//!
//! ```text
//! mirror steps:    f(x) − f(x₊) ≥ (1/η − L) σ/2 ‖x₊ − x‖²
//! proximal steps:  f(x) − f(x₊) ≥ σ/(2η) ‖x₊ − x‖²
//! ```
//!
//! (joint step norm over both blocks for the alternating variants; the
//! product-kernel block factors are ≥ 1, which is what lets the per-block
//! inequalities add up to the joint one). The drivers record the measured
//! slack against these bounds at every iteration.

use crate::cubic;
use crate::error::{Error, Result};
use crate::kernels::{BiKernel, Kernel};
use crate::objectives::{join_blocks, BiObjective, Objective};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::time::Instant;

/// Solver selector. `bgd`/`bppm` run on a single block, `bpalm`/`bpam` on
/// two; `gd`/`palm` are the Euclidean baselines of the same shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Bgd,
    Bppm,
    Bpalm,
    Bpam,
    Gd,
    Palm,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bgd" => Ok(Self::Bgd),
            "bppm" => Ok(Self::Bppm),
            "bpalm" => Ok(Self::Bpalm),
            "bpam" => Ok(Self::Bpam),
            "gd" => Ok(Self::Gd),
            "palm" => Ok(Self::Palm),
            other => Err(Error::InvalidParameter {
                name: "solver",
                value: other.to_string(),
                reason: "expected one of bgd, bppm, bpalm, bpam, gd, palm",
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bgd => "bgd",
            Self::Bppm => "bppm",
            Self::Bpalm => "bpalm",
            Self::Bpam => "bpam",
            Self::Gd => "gd",
            Self::Palm => "palm",
        }
    }

    /// Two-block solver?
    pub fn is_bi(self) -> bool {
        matches!(self, Self::Bpalm | Self::Bpam | Self::Palm)
    }

    /// Kernel-driven solver with a decrease guarantee?
    pub fn is_bregman(self) -> bool {
        matches!(self, Self::Bgd | Self::Bppm | Self::Bpalm | Self::Bpam)
    }

    pub fn all() -> [Variant; 6] {
        [Self::Bgd, Self::Bppm, Self::Bpalm, Self::Bpam, Self::Gd, Self::Palm]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Step size, smoothness, stopping rules, and inner-solver knobs.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Step size. Kernel-driven variants require `0 < eta < 1/smoothness`.
    pub eta: f64,
    /// Relative (bi-)smoothness constant `L` the step size is validated
    /// against; also sets the inner solver's own step.
    pub smoothness: f64,
    pub max_iters: usize,
    /// Stop when `‖∇f‖ ≤ grad_tol` (joint gradient for two-block runs).
    pub grad_tol: f64,
    /// Stop when `‖x₊ − x‖ ≤ step_tol · (1 + ‖x₊‖)`.
    pub step_tol: f64,
    /// Iteration cap for the inner proximal subproblem solver.
    pub inner_max_iters: usize,
    /// Absolute gradient tolerance for the inner subproblem.
    pub inner_tol: f64,
    /// Use the closed-form root-finding path for the standard quartic kernel
    /// and closed-form ridge solves for quadratic kernels (the generic
    /// inversion / inner solver is used when disabled).
    pub fast_path: bool,
    /// Turn a violated decrease bound into a hard error instead of a trace
    /// entry (kernel-driven variants only).
    pub assert_decrease: bool,
    /// Relative slack allowed by `assert_decrease`.
    pub decrease_tol: f64,
}

impl SolverConfig {
    pub fn new(eta: f64, smoothness: f64) -> Self {
        Self {
            eta,
            smoothness,
            max_iters: 50_000,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            inner_max_iters: 2_000,
            inner_tol: 1e-8,
            fast_path: true,
            assert_decrease: false,
            decrease_tol: 1e-9,
        }
    }

    fn validate(&self, variant: Variant) -> Result<()> {
        if !(self.smoothness.is_finite() && self.smoothness > 0.0) {
            return Err(Error::InvalidParameter {
                name: "smoothness",
                value: self.smoothness.to_string(),
                reason: "must be finite and positive",
            });
        }
        let eta_ok = if variant.is_bregman() {
            self.eta > 0.0 && self.eta < 1.0 / self.smoothness
        } else {
            self.eta.is_finite() && self.eta > 0.0
        };
        if !eta_ok {
            return Err(Error::InvalidParameter {
                name: "eta",
                value: self.eta.to_string(),
                reason: "step size must lie in (0, 1/L)",
            });
        }
        if self.max_iters == 0 || self.inner_max_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iters",
                value: "0".to_string(),
                reason: "iteration caps must be positive",
            });
        }
        Ok(())
    }
}

/// One recorded iteration.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub f: f64,
    pub step_norm: f64,
    pub grad_norm: f64,
    /// Measured decrease minus the guaranteed bound (monitor value for the
    /// baselines, whose bound is zero).
    pub decrease_slack: f64,
    pub time_s: f64,
}

/// Full per-iteration history of a run. Kept dense in memory; file output is
/// thinned for long runs.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// CSV with header `iter,f,step_norm,grad_norm,decrease_slack,time_s`.
    /// All rows up to iteration 1000 are written, then every 10th, and
    /// always the final row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iter,f,step_norm,grad_norm,decrease_slack,time_s\n");
        let last_idx = self.rows.len().saturating_sub(1);
        for (idx, row) in self.rows.iter().enumerate() {
            let keep = row.iter <= 1_000 || row.iter % 10 == 0 || idx == last_idx;
            if !keep {
                continue;
            }
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.iter, row.f, row.step_norm, row.grad_norm, row.decrease_slack, row.time_s
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::InstanceIo {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    ConvergedGrad,
    ConvergedStep,
    MaxIters,
    Diverged,
    SubproblemFailed,
}

/// Result of a driver run. Two-block runs store the concatenated `(x, y)`
/// point.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Number of steps taken (trace rows minus the initial one).
    pub iters: usize,
    pub final_value: f64,
    pub final_grad_norm: f64,
    pub final_point: DVector<f64>,
    /// Worst decrease slack seen over the whole run.
    pub min_decrease_slack: f64,
    pub trace: Trace,
}

/// Deterministic Gaussian start: i.i.d. `N(0, scale²)` entries.
pub fn random_init(dim: usize, scale: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

/// Guaranteed per-iteration decrease for a variant, as a function of the step
/// norm. Zero for the baselines: they are monitored, not certified.
pub fn decrease_bound(
    variant: Variant,
    step_norm: f64,
    eta: f64,
    smoothness: f64,
    modulus: f64,
) -> f64 {
    match variant {
        Variant::Bgd | Variant::Bpalm => {
            (1.0 / eta - smoothness) * 0.5 * modulus * step_norm * step_norm
        }
        Variant::Bppm | Variant::Bpam => modulus / (2.0 * eta) * step_norm * step_norm,
        Variant::Gd | Variant::Palm => 0.0,
    }
}

/// One mirror step from `x` along a precomputed objective gradient:
/// invert `∇h` at `∇h(x) − η g`. The standard quartic kernel takes the
/// closed-form root path when `fast_path` is set.
fn mirror_step(
    h: &Kernel,
    x: &DVector<f64>,
    g: &DVector<f64>,
    eta: f64,
    fast_path: bool,
) -> Result<DVector<f64>> {
    if fast_path {
        if let Some(params) = h.power_params() {
            if params.is_standard_quartic() {
                let target = x * (x.norm_squared() + 1.0) - g * eta;
                return cubic::retract(&target);
            }
        }
    }
    let target = h.gradient(x)? - g * eta;
    h.invert_gradient(&target)
}

/// Minimize `φ(z) = f(z) + D_h(z, x)/η` by monotone mirror descent from
/// `z₀ = x`. `smoothness` is the relative smoothness of `f` itself; `φ` then
/// has constant `smoothness + 1/η` and the inner step starts at half its
/// inverse, backtracking on any `φ` increase so the descent invariant
/// `φ(z) ≤ φ(x) = f(x)` survives imprecise constants.
fn prox_point_solve(
    value: &dyn Fn(&DVector<f64>) -> f64,
    grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    h: &Kernel,
    x: &DVector<f64>,
    eta: f64,
    smoothness: f64,
    inner_max_iters: usize,
    inner_tol: f64,
    fast_path: bool,
) -> Result<DVector<f64>> {
    let grad_h_x = h.gradient(x)?;
    let h_x = h.value(x)?;
    let grad_h_x_norm = grad_h_x.norm();
    let phi = |z: &DVector<f64>| -> Result<f64> { Ok(value(z) + h.divergence(z, x)? / eta) };
    let grad_phi = |z: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(grad(z) + (h.gradient(z)? - &grad_h_x) / eta)
    };

    let mut z = x.clone();
    let mut phi_z = phi(&z)?;
    let mut best = z.clone();
    let mut best_residual = f64::INFINITY;
    let base_step = 1.0 / (2.0 * (smoothness + 1.0 / eta));
    for _ in 0..inner_max_iters {
        let g = grad_phi(&z)?;
        let residual = g.norm();
        if residual < best_residual {
            best_residual = residual;
            best.copy_from(&z);
        }
        if best_residual <= inner_tol {
            return Ok(best);
        }
        // A residual blowing up past its best-seen value means the supplied
        // smoothness constant was wrong and the raw steps below are unstable.
        if residual > 1e3 * best_residual.max(inner_tol) {
            break;
        }
        // Roundoff level of the computed φ, from the magnitudes actually
        // summed: the divergence terms are much larger than φ itself once
        // z has moved away from x, so `ε·|φ|` would badly underestimate it.
        let noise = 8.0
            * f64::EPSILON
            * (1.0 + phi_z.abs() + (h.value(&z)? + h_x + grad_h_x_norm * (&z - x).norm()) / eta);
        let full = mirror_step(h, &z, &g, base_step, fast_path)?;
        let advanced;
        if base_step * residual * residual <= 4.0 * noise {
            // Any true decrease is below the evaluation noise of φ, so a
            // comparison carries no information and backtracking would lock
            // onto vanishing steps. The full step is monotone in exact
            // arithmetic; the residual guard above catches an unstable
            // constant.
            phi_z = phi(&full)?;
            advanced = full != z;
            z = full;
        } else {
            let mut cand = full;
            let mut step = base_step;
            loop {
                let phi_cand = phi(&cand)?;
                if phi_cand.is_finite() && phi_cand <= phi_z + noise {
                    advanced = cand != z;
                    z = cand;
                    phi_z = phi_cand;
                    break;
                }
                step *= 0.5;
                if step < base_step * 2f64.powi(-50) {
                    advanced = false;
                    break;
                }
                cand = mirror_step(h, &z, &g, step, fast_path)?;
            }
        }
        // The update rounded to the same point: no finer progress exists.
        if !advanced {
            break;
        }
    }
    if best_residual <= inner_tol {
        Ok(best)
    } else {
        Err(Error::SubproblemFailure {
            residual: best_residual,
            tolerance: inner_tol,
            iters: inner_max_iters,
            best: Box::new(best),
        })
    }
}

/// Single mirror-descent step (`bgd`).
pub fn bgd_step(
    f: &dyn Objective,
    h: &Kernel,
    x: &DVector<f64>,
    eta: f64,
    fast_path: bool,
) -> Result<DVector<f64>> {
    mirror_step(h, x, &f.gradient(x), eta, fast_path)
}

/// Single proximal-point step (`bppm`).
pub fn bppm_step(
    f: &dyn Objective,
    h: &Kernel,
    x: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    prox_point_solve(
        &|z| f.value(z),
        &|z| f.gradient(z),
        h,
        x,
        cfg.eta,
        cfg.smoothness,
        cfg.inner_max_iters,
        cfg.inner_tol,
        cfg.fast_path,
    )
}

/// Plain gradient step (`gd` baseline).
pub fn gd_step(f: &dyn Objective, x: &DVector<f64>, eta: f64) -> DVector<f64> {
    x - f.gradient(x) * eta
}

/// Alternating mirror steps (`bpalm`). The block kernels are the product
/// factors scaled by the frozen opposite block, so a block step with `η`
/// equals a factor-kernel step with `η / scale`.
pub fn bpalm_step(
    f: &dyn BiObjective,
    h: &BiKernel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
    fast_path: bool,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (kx, scale_x) = h.x_block(y)?;
    let x_new = mirror_step(&kx, x, &f.grad_x(x, y), eta / scale_x, fast_path)?;
    let (ky, scale_y) = h.y_block(&x_new)?;
    let y_new = mirror_step(&ky, y, &f.grad_y(&x_new, y), eta / scale_y, fast_path)?;
    Ok((x_new, y_new))
}

/// Alternating proximal steps (`bpam`): each block solves
/// `argmin_z f(z, ·) + scale · D_factor(z, block)/η`. A quadratic factor
/// turns this into the objective's ridge update with weight
/// `c = scale · μ / η` (`μ` the factor modulus); otherwise the inner solver
/// runs on the block restriction.
pub fn bpam_step(
    f: &dyn BiObjective,
    h: &BiKernel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let x_new = bpam_block(f, h, x, y, cfg, true)?;
    let y_new = bpam_block(f, h, &x_new, y, cfg, false)?;
    Ok((x_new, y_new))
}

/// Modulus of a kernel whose divergence is exactly `μ/2 ‖a − b‖²`, if it is.
fn quadratic_modulus(k: &Kernel) -> Option<f64> {
    match k {
        Kernel::Euclidean { .. } => Some(1.0),
        Kernel::Power { params, .. } if params.degree() == 2 => {
            Some(params.alpha() + params.sigma())
        }
        Kernel::Power { .. } => None,
    }
    .filter(|m| *m > 0.0)
}

fn bpam_block(
    f: &dyn BiObjective,
    h: &BiKernel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &SolverConfig,
    first: bool,
) -> Result<DVector<f64>> {
    let (factor, scale) = if first { h.x_block(y)? } else { h.y_block(x)? };
    if cfg.fast_path {
        if let Some(mu) = quadratic_modulus(&factor) {
            let c = scale * mu / cfg.eta;
            let exact = if first {
                f.prox_x(y, x, c)
            } else {
                f.prox_y(x, y, c)
            };
            if let Some(z) = exact {
                return Ok(z);
            }
        }
    }
    // Block restriction solved like a proximal-point subproblem; the
    // effective step is η / scale and the block objective inherits
    // smoothness L · scale with respect to the factor kernel.
    let eta_eff = cfg.eta / scale;
    if first {
        prox_point_solve(
            &|z| f.value(z, y),
            &|z| f.grad_x(z, y),
            &factor,
            x,
            eta_eff,
            cfg.smoothness * scale,
            cfg.inner_max_iters,
            cfg.inner_tol,
            cfg.fast_path,
        )
    } else {
        prox_point_solve(
            &|z| f.value(x, z),
            &|z| f.grad_y(x, z),
            &factor,
            y,
            eta_eff,
            cfg.smoothness * scale,
            cfg.inner_max_iters,
            cfg.inner_tol,
            cfg.fast_path,
        )
    }
}

/// Alternating plain gradient steps (`palm` baseline).
pub fn palm_step(
    f: &dyn BiObjective,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eta: f64,
) -> (DVector<f64>, DVector<f64>) {
    let x_new = x - f.grad_x(x, y) * eta;
    let y_new = y - f.grad_y(&x_new, y) * eta;
    (x_new, y_new)
}

/// Shared bookkeeping for both drivers: divergence counting, stopping rules,
/// slack tracking.
struct RunState {
    trace: Trace,
    start: Instant,
    f_cur: f64,
    min_slack: f64,
    rises: u32,
}

impl RunState {
    fn new(f0: f64, grad_norm0: f64) -> Self {
        let mut trace = Trace::default();
        trace.rows.push(TraceRow {
            iter: 0,
            f: f0,
            step_norm: 0.0,
            grad_norm: grad_norm0,
            decrease_slack: 0.0,
            time_s: 0.0,
        });
        Self {
            trace,
            start: Instant::now(),
            f_cur: f0,
            min_slack: f64::INFINITY,
            rises: 0,
        }
    }

    /// Record one accepted step; returns a stopping status if one fired.
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        iter: usize,
        f_new: f64,
        step_norm: f64,
        grad_norm: f64,
        point_norm: f64,
        variant: Variant,
        cfg: &SolverConfig,
        modulus: f64,
    ) -> Result<Option<RunStatus>> {
        if !f_new.is_finite() || !step_norm.is_finite() || !grad_norm.is_finite() {
            self.trace.rows.push(TraceRow {
                iter,
                f: f_new,
                step_norm,
                grad_norm,
                decrease_slack: f64::NAN,
                time_s: self.start.elapsed().as_secs_f64(),
            });
            return Ok(Some(RunStatus::Diverged));
        }
        let bound = decrease_bound(variant, step_norm, cfg.eta, cfg.smoothness, modulus);
        let slack = (self.f_cur - f_new) - bound;
        self.min_slack = self.min_slack.min(slack);
        if variant.is_bregman()
            && cfg.assert_decrease
            && slack < -cfg.decrease_tol * (1.0 + self.f_cur.abs())
        {
            return Err(Error::DecreaseViolated { iter, slack });
        }
        if f_new > self.f_cur + 1e-8 * (1.0 + self.f_cur.abs()) {
            self.rises += 1;
        } else {
            self.rises = 0;
        }
        self.trace.rows.push(TraceRow {
            iter,
            f: f_new,
            step_norm,
            grad_norm,
            decrease_slack: slack,
            time_s: self.start.elapsed().as_secs_f64(),
        });
        self.f_cur = f_new;
        if self.rises >= 3 {
            return Ok(Some(RunStatus::Diverged));
        }
        if grad_norm <= cfg.grad_tol {
            return Ok(Some(RunStatus::ConvergedGrad));
        }
        if step_norm <= cfg.step_tol * (1.0 + point_norm) {
            return Ok(Some(RunStatus::ConvergedStep));
        }
        Ok(None)
    }

    fn finish(self, status: RunStatus, point: DVector<f64>, grad_norm: f64) -> RunOutcome {
        let iters = self.trace.rows.last().map(|r| r.iter).unwrap_or(0);
        RunOutcome {
            status,
            iters,
            final_value: self.f_cur,
            final_grad_norm: grad_norm,
            final_point: point,
            min_decrease_slack: if self.min_slack.is_finite() {
                self.min_slack
            } else {
                0.0
            },
            trace: self.trace,
        }
    }
}

/// Drive a single-block solver (`bgd`, `bppm`, or the `gd` baseline) from
/// `x0` until a stopping rule fires.
pub fn run_single(
    f: &dyn Objective,
    h: &Kernel,
    variant: Variant,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<RunOutcome> {
    if variant.is_bi() {
        return Err(Error::InvalidParameter {
            name: "solver",
            value: variant.name().to_string(),
            reason: "two-block solver passed to the single-block driver",
        });
    }
    cfg.validate(variant)?;
    if x0.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial point",
            expected: f.dim(),
            found: x0.len(),
        });
    }
    if h.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            context: "kernel dimension",
            expected: f.dim(),
            found: h.dim(),
        });
    }
    if variant == Variant::Gd && !h.is_euclidean() {
        return Err(Error::InvalidParameter {
            name: "kernel",
            value: "non-euclidean".to_string(),
            reason: "the gd baseline is defined for the euclidean kernel",
        });
    }

    let modulus = h.strong_convexity();
    let mut x = x0.clone();
    let mut g = f.gradient(&x);
    let mut state = RunState::new(f.value(&x), g.norm());
    if g.norm() <= cfg.grad_tol {
        let grad_norm = g.norm();
        return Ok(state.finish(RunStatus::ConvergedGrad, x, grad_norm));
    }

    let mut status = RunStatus::MaxIters;
    for iter in 1..=cfg.max_iters {
        let stepped = match variant {
            Variant::Bgd => mirror_step(h, &x, &g, cfg.eta, cfg.fast_path),
            Variant::Gd => Ok(&x - &g * cfg.eta),
            Variant::Bppm => bppm_step(f, h, &x, cfg),
            _ => unreachable!(),
        };
        let (x_new, failed) = match stepped {
            Ok(z) => (z, false),
            Err(Error::SubproblemFailure { best, .. }) => (*best, true),
            Err(e) => return Err(e),
        };
        let f_new = f.value(&x_new);
        let g_new = f.gradient(&x_new);
        let step_norm = (&x_new - &x).norm();
        let fired = state.record(
            iter,
            f_new,
            step_norm,
            g_new.norm(),
            x_new.norm(),
            variant,
            cfg,
            modulus,
        )?;
        x = x_new;
        g = g_new;
        if failed {
            status = RunStatus::SubproblemFailed;
            break;
        }
        if let Some(s) = fired {
            status = s;
            break;
        }
    }
    let grad_norm = g.norm();
    Ok(state.finish(status, x, grad_norm))
}

/// Drive a two-block solver (`bpalm`, `bpam`, or the `palm` baseline) from
/// `(x0, y0)`. The outcome's point is the concatenation `(x, y)`.
pub fn run_bi(
    f: &dyn BiObjective,
    h: &BiKernel,
    variant: Variant,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<RunOutcome> {
    if !variant.is_bi() {
        return Err(Error::InvalidParameter {
            name: "solver",
            value: variant.name().to_string(),
            reason: "single-block solver passed to the two-block driver",
        });
    }
    cfg.validate(variant)?;
    if x0.len() != f.dim_x() || y0.len() != f.dim_y() {
        return Err(Error::DimensionMismatch {
            context: "initial blocks",
            expected: f.dim_x() + f.dim_y(),
            found: x0.len() + y0.len(),
        });
    }
    if h.dim_x() != f.dim_x() || h.dim_y() != f.dim_y() {
        return Err(Error::DimensionMismatch {
            context: "kernel block dimensions",
            expected: f.dim_x() + f.dim_y(),
            found: h.dim_x() + h.dim_y(),
        });
    }
    if variant == Variant::Palm && !h.is_euclidean() {
        return Err(Error::InvalidParameter {
            name: "kernel",
            value: "non-euclidean".to_string(),
            reason: "the palm baseline is defined for the euclidean kernel",
        });
    }

    let modulus = h.strong_bi_convexity();
    let joint_norm = |gx: &DVector<f64>, gy: &DVector<f64>| {
        (gx.norm_squared() + gy.norm_squared()).sqrt()
    };
    let mut x = x0.clone();
    let mut y = y0.clone();
    let g0 = joint_norm(&f.grad_x(&x, &y), &f.grad_y(&x, &y));
    let mut state = RunState::new(f.value(&x, &y), g0);
    if g0 <= cfg.grad_tol {
        return Ok(state.finish(RunStatus::ConvergedGrad, join_blocks(&x, &y), g0));
    }

    let mut status = RunStatus::MaxIters;
    let mut grad_norm = g0;
    for iter in 1..=cfg.max_iters {
        let stepped = match variant {
            Variant::Bpalm => bpalm_step(f, h, &x, &y, cfg.eta, cfg.fast_path),
            Variant::Bpam => bpam_step(f, h, &x, &y, cfg),
            Variant::Palm => Ok(palm_step(f, &x, &y, cfg.eta)),
            _ => unreachable!(),
        };
        let ((x_new, y_new), failed) = match stepped {
            Ok(p) => (p, false),
            Err(Error::SubproblemFailure { best, .. }) => {
                // The failed block kept its warm start, so `best` is the x
                // block if the first solve failed, or pairs with the fresh x
                // if the second did.
                if best.len() == x.len() && (best.as_ref() != &x) {
                    ((*best, y.clone()), true)
                } else {
                    ((x.clone(), y.clone()), true)
                }
            }
            Err(e) => return Err(e),
        };
        let f_new = f.value(&x_new, &y_new);
        grad_norm = joint_norm(&f.grad_x(&x_new, &y_new), &f.grad_y(&x_new, &y_new));
        let step_norm =
            ((&x_new - &x).norm_squared() + (&y_new - &y).norm_squared()).sqrt();
        let point_norm = (x_new.norm_squared() + y_new.norm_squared()).sqrt();
        let fired = state.record(
            iter, f_new, step_norm, grad_norm, point_norm, variant, cfg, modulus,
        )?;
        x = x_new;
        y = y_new;
        if failed {
            status = RunStatus::SubproblemFailed;
            break;
        }
        if let Some(s) = fired {
            status = s;
            break;
        }
    }
    Ok(state.finish(status, join_blocks(&x, &y), grad_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::PowerParams;
    use crate::objectives::{
        bmf_nonsymmetric, bmf_symmetric, MatrixPcaInstance, Quadratic,
    };
    use nalgebra::DMatrix;

    fn convex_quadratic(dim: usize) -> Quadratic {
        let q = DMatrix::from_fn(dim, dim, |i, j| if i == j { 2.0 + i as f64 } else { 0.0 });
        let b = DVector::from_fn(dim, |i, _| -(i as f64) - 1.0);
        Quadratic::new(q, b, 0.0).unwrap()
    }

    #[test]
    fn variant_parse_round_trip() {
        for v in Variant::all() {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("sgd").is_err());
        assert_eq!(serde_json::to_string(&Variant::Bpalm).unwrap(), "\"bpalm\"");
    }

    #[test]
    fn config_validation_rejects_bad_steps() {
        let f = convex_quadratic(2);
        let h = Kernel::euclidean(2);
        let x0 = DVector::zeros(2);
        for eta in [0.0, -0.1, 0.5, 1.0] {
            // smoothness 2.0 means the open interval is (0, 0.5)
            let cfg = SolverConfig::new(eta, 2.0);
            assert!(run_single(&f, &h, Variant::Bgd, &x0, &cfg).is_err(), "eta {eta}");
        }
        let cfg = SolverConfig::new(0.4999, 2.0);
        assert!(run_single(&f, &h, Variant::Bgd, &x0, &cfg).is_ok());
        // Baselines only need a positive step.
        let cfg = SolverConfig::new(0.9, 2.0);
        assert!(run_single(&f, &h, Variant::Gd, &x0, &cfg).is_ok());
    }

    #[test]
    fn euclidean_mirror_step_equals_gradient_step() {
        let f = convex_quadratic(4);
        let h = Kernel::euclidean(4);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let bgd = bgd_step(&f, &h, &x, 0.05, true).unwrap();
        let gd = gd_step(&f, &x, 0.05);
        assert_eq!(bgd, gd);
    }

    #[test]
    fn quartic_fast_path_matches_generic_inversion() {
        let inst = MatrixPcaInstance::random_symmetric(5, 2, 1.0, 1.0, 11).unwrap();
        let f = bmf_symmetric(&inst).unwrap();
        let h = Kernel::standard_quartic(f.dim());
        let x = random_init(f.dim(), 2.0, 3);
        let fast = bgd_step(&f, &h, &x, 0.01, true).unwrap();
        let generic = bgd_step(&f, &h, &x, 0.01, false).unwrap();
        assert!((&fast - &generic).norm() <= 1e-8 * (1.0 + fast.norm()));
    }

    #[test]
    fn proximal_point_euclidean_quadratic_closed_form() {
        // f(z) = ½‖z − b‖²: the update solves (z − b) + (z − x)/η = 0,
        // i.e. z = (x + ηb)/(1 + η).
        let b = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        let q = DMatrix::identity(3, 3);
        let f = Quadratic::new(q, -b.clone(), 0.5 * b.norm_squared()).unwrap();
        let h = Kernel::euclidean(3);
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let mut cfg = SolverConfig::new(0.5, 1.0 + 1e-9);
        cfg.inner_tol = 1e-12;
        let z = bppm_step(&f, &h, &x, &cfg).unwrap();
        let expected = (&x + &b * cfg.eta) / (1.0 + cfg.eta);
        assert!((&z - &expected).norm() <= 1e-9);
    }

    #[test]
    fn mirror_descent_converges_on_quadratic() {
        let f = convex_quadratic(5);
        // Largest curvature is 6, and the quartic kernel curvature is ≥ 1
        // everywhere, so 6 bounds the relative smoothness too.
        let h = Kernel::power(PowerParams::new(1.0, 1.0, 4).unwrap(), 5);
        let x0 = random_init(5, 1.0, 1);
        let mut cfg = SolverConfig::new(0.9 / 6.0, 6.0);
        cfg.assert_decrease = true;
        let out = run_single(&f, &h, Variant::Bgd, &x0, &cfg).unwrap();
        // The step rule and the gradient rule race near the optimum; either
        // way the point must have essentially converged.
        assert!(matches!(
            out.status,
            RunStatus::ConvergedGrad | RunStatus::ConvergedStep
        ));
        assert!(out.final_grad_norm <= 1e-7);
        assert!(out.min_decrease_slack >= -1e-9);
        assert!(out.final_value <= f.lower_bound() + 1e-10);
        // Trace is dense: one row per iteration plus the start.
        assert_eq!(out.trace.len(), out.iters + 1);
    }

    #[test]
    fn proximal_point_converges_and_decreases() {
        let f = convex_quadratic(4);
        let h = Kernel::standard_quartic(4);
        let x0 = random_init(4, 1.5, 7);
        let mut cfg = SolverConfig::new(0.1, 6.0);
        cfg.assert_decrease = true;
        let out = run_single(&f, &h, Variant::Bppm, &x0, &cfg).unwrap();
        // Either stopping rule may fire first; both certify convergence here.
        assert!(matches!(
            out.status,
            RunStatus::ConvergedGrad | RunStatus::ConvergedStep
        ));
        assert!(out.final_grad_norm <= 1e-7);
        assert!(out.min_decrease_slack >= -1e-9 * (1.0 + out.final_value.abs()));
    }

    #[test]
    fn divergent_baseline_is_flagged() {
        let f = convex_quadratic(3);
        let h = Kernel::euclidean(3);
        let x0 = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        // Step far beyond 2/L makes plain gradient descent oscillate outward.
        let cfg = SolverConfig::new(2.0, 6.0);
        let out = run_single(&f, &h, Variant::Gd, &x0, &cfg).unwrap();
        assert_eq!(out.status, RunStatus::Diverged);
        assert!(out.iters < 200);
    }

    #[test]
    fn alternating_mirror_equals_alternating_gradient_on_euclidean() {
        let inst = MatrixPcaInstance::random_nonsymmetric(5, 4, 2, 0.5, 1.0, 9).unwrap();
        let f = bmf_nonsymmetric(&inst).unwrap();
        let h = BiKernel::euclidean(f.dim_x(), f.dim_y());
        let x0 = random_init(f.dim_x(), 0.5, 1);
        let y0 = random_init(f.dim_y(), 0.5, 2);
        let eta = 1e-2;
        let (mut x_a, mut y_a) = (x0.clone(), y0.clone());
        let (mut x_b, mut y_b) = (x0, y0);
        for _ in 0..100 {
            let (xa, ya) = bpalm_step(&f, &h, &x_a, &y_a, eta, true).unwrap();
            let (xb, yb) = palm_step(&f, &x_b, &y_b, eta);
            x_a = xa;
            y_a = ya;
            x_b = xb;
            y_b = yb;
        }
        assert!((&x_a - &x_b).norm() <= 1e-12 * (1.0 + x_b.norm()));
        assert!((&y_a - &y_b).norm() <= 1e-12 * (1.0 + y_b.norm()));
    }

    #[test]
    fn alternating_proximal_uses_ridge_solves_and_decreases() {
        let inst = MatrixPcaInstance::random_nonsymmetric(6, 5, 2, 0.5, 1.0, 17).unwrap();
        let f = bmf_nonsymmetric(&inst).unwrap();
        let h = BiKernel::quadratic(f.dim_x(), f.dim_y());
        let x0 = random_init(f.dim_x(), 1.0, 4);
        let y0 = random_init(f.dim_y(), 1.0, 5);
        let mut cfg = SolverConfig::new(0.02, 40.0);
        cfg.assert_decrease = true;
        // The coupled blocks contract slowly at this step size.
        cfg.max_iters = 60_000;
        let out = run_bi(&f, &h, Variant::Bpam, &x0, &y0, &cfg).unwrap();
        assert!(matches!(
            out.status,
            RunStatus::ConvergedGrad | RunStatus::ConvergedStep
        ));
        assert!(out.min_decrease_slack >= -1e-9 * (1.0 + out.final_value.abs()));

        // The ridge path and the inner-solver path land on the same step.
        let (xf, yf) = bpam_step(&f, &h, &x0, &y0, &cfg).unwrap();
        let mut slow = cfg.clone();
        slow.fast_path = false;
        slow.inner_tol = 1e-11;
        slow.inner_max_iters = 20_000;
        let (xs, ys) = bpam_step(&f, &h, &x0, &y0, &slow).unwrap();
        assert!((&xf - &xs).norm() <= 1e-6 * (1.0 + xf.norm()));
        assert!((&yf - &ys).norm() <= 1e-6 * (1.0 + yf.norm()));
    }

    #[test]
    fn alternating_mirror_on_quartic_product_decreases() {
        let inst = MatrixPcaInstance::random_nonsymmetric(5, 4, 2, 0.5, 1.0, 23).unwrap();
        let f = bmf_nonsymmetric(&inst).unwrap();
        let h = BiKernel::standard_quartic(f.dim_x(), f.dim_y());
        let x0 = random_init(f.dim_x(), 1.0, 6);
        let y0 = random_init(f.dim_y(), 1.0, 7);
        let mut cfg = SolverConfig::new(0.05, 10.0);
        cfg.assert_decrease = true;
        cfg.max_iters = 5_000;
        let out = run_bi(&f, &h, Variant::Bpalm, &x0, &y0, &cfg).unwrap();
        assert!(out.min_decrease_slack >= -1e-9 * (1.0 + out.final_value.abs()));
        assert!(out.final_value < f.value(&random_init(f.dim_x(), 1.0, 6), &random_init(f.dim_y(), 1.0, 7)));
    }

    #[test]
    fn subproblem_failure_surfaces_as_status() {
        let f = convex_quadratic(3);
        let h = Kernel::standard_quartic(3);
        let x0 = DVector::from_vec(vec![2.0, -1.0, 1.0]);
        let mut cfg = SolverConfig::new(0.1, 6.0);
        cfg.inner_max_iters = 1;
        cfg.inner_tol = 1e-300;
        let out = run_single(&f, &h, Variant::Bppm, &x0, &cfg).unwrap();
        assert_eq!(out.status, RunStatus::SubproblemFailed);
        // The partial inner solve still never increases the objective.
        assert!(out.final_value <= f.value(&x0) + 1e-12);
    }

    #[test]
    fn random_init_is_deterministic() {
        let a = random_init(10, 2.0, 42);
        let b = random_init(10, 2.0, 42);
        assert_eq!(a, b);
        let c = random_init(10, 2.0, 43);
        assert_ne!(a, c);
        let wide = random_init(2_000, 10.0, 1);
        let sample_std = (wide.norm_squared() / 2_000.0).sqrt();
        assert!((sample_std - 10.0).abs() < 1.0);
    }

    #[test]
    fn trace_csv_thins_long_runs() {
        let mut trace = Trace::default();
        for iter in 0..=5_000usize {
            trace.rows.push(TraceRow {
                iter,
                f: iter as f64,
                step_norm: 0.1,
                grad_norm: 1.0,
                decrease_slack: 0.0,
                time_s: 0.0,
            });
        }
        let path = std::env::temp_dir().join(format!("bregopt_trace_{}.csv", std::process::id()));
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).ok();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,f,step_norm,grad_norm,decrease_slack,time_s");
        // 0..=1000 dense, then every 10th of 1001..=5000.
        assert_eq!(lines.len(), 1 + 1001 + 400);
        assert!(lines.last().unwrap().starts_with("5000,"));
    }
}
