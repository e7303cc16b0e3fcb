//! Scalar cubic `t³ + t = a` and the radial retraction it induces.
//!
//! For `a ≥ 0` the equation `t³ + t = a` has exactly one real root (the left
//! side is strictly increasing), given in closed form by
//!
//! ```text
//! τ(a) = (u / 18)^(1/3) − (2 / (3u))^(1/3),   u = sqrt(81a² + 12) + 9a,
//! ```
//!
//! an algebraic simplification of the Cardano root. The map
//! `x ↦ x · τ(‖x‖) / ‖x‖` inverts the mirror map `x ↦ (‖x‖² + 1) x` of the
//! standard quartic kernel, so every quartic-kernel solver step reduces to one
//! evaluation of [`tau`].

use crate::error::{Error, Result};
use nalgebra::DVector;

/// Below this the closed form subtracts two nearly equal cube roots
/// (both tend to 3^(-1/2)), so a safeguarded Newton iteration is used instead.
const CLOSED_FORM_MIN: f64 = 1e-3;

/// Above this `81a²` approaches overflow; `τ(a) = a^(1/3)` to within f64
/// resolution there, refined by one Newton correction performed in log space.
const CLOSED_FORM_MAX: f64 = 1e100;

/// Residual `t³ + t − a`, the quantity driven to zero.
#[inline]
pub fn residual(t: f64, a: f64) -> f64 {
    t * t * t + t - a
}

/// One Newton step for `t³ + t = a`; the derivative `3t² + 1` never vanishes.
#[inline]
fn newton_polish(t: f64, a: f64) -> f64 {
    let r = residual(t, a);
    if !r.is_finite() {
        return t;
    }
    t - r / (3.0 * t * t + 1.0)
}

/// Unique nonnegative root of `t³ + t = a`.
///
/// Accepts any finite `a ≥ 0` and keeps `|τ³ + τ − a| ≤ 1e-10 · (1 + a)` over
/// the whole range. Known points: `τ(0) = 0`, `τ(2) = 1`, `τ(10) = 2`.
///
/// # Errors
///
/// `Error::Domain` for negative, NaN, or infinite input.
pub fn tau(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::Domain {
            op: "tau",
            value: a,
            reason: "not finite",
        });
    }
    if a < 0.0 {
        return Err(Error::Domain {
            op: "tau",
            value: a,
            reason: "negative",
        });
    }
    if a == 0.0 {
        return Ok(0.0);
    }

    let t = if a < CLOSED_FORM_MIN {
        // Start above the root: residual(min(a, a^(1/3))) = a³ ≥ 0 for a ≤ 1,
        // and the residual is convex for t ≥ 0, so Newton descends monotonically.
        let mut t = a.min(a.cbrt());
        for _ in 0..64 {
            let r = residual(t, a);
            if r.abs() <= f64::EPSILON * (1.0 + a) {
                break;
            }
            t -= r / (3.0 * t * t + 1.0);
            if t < 0.0 {
                t = 0.0;
            }
        }
        t
    } else if a <= CLOSED_FORM_MAX {
        let u = (81.0 * a * a + 12.0).sqrt() + 9.0 * a;
        (u / 18.0).cbrt() - (2.0 / (3.0 * u)).cbrt()
    } else {
        // t = a^(1/3) is exact to f64 resolution here; correct in log space
        // (multiplicatively) to avoid forming the overflow-prone difference.
        let t = a.cbrt();
        let r = residual(t, a);
        if r.is_finite() {
            let dlog = -r / (3.0 * t * t * t + t);
            t * dlog.exp()
        } else {
            t
        }
    };

    // One final polish tightens all branches to a few ulps.
    Ok(newton_polish(t, a).max(0.0))
}

/// Radial retraction `x ↦ x · τ(‖x‖) / ‖x‖`, with `0 ↦ 0`.
///
/// This is the inverse of the quartic mirror map: for any `x`,
/// `retract((‖x‖² + 1) x) = x`. The output keeps the direction of `x` and has
/// norm `τ(‖x‖) ≤ ‖x‖`.
///
/// # Errors
///
/// `Error::NonFinite` if `x` contains NaN or infinite entries.
pub fn retract(x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = x.norm();
    if !n.is_finite() {
        return Err(Error::NonFinite { context: "retract" });
    }
    if n == 0.0 {
        return Ok(x.clone());
    }
    let t = tau(n)?;
    Ok(x * (t / n))
}
