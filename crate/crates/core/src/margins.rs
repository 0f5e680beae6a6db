//! Marginal loss distributions.
//!
//! A margin is anything that can answer quantile and survival queries; see
//! [`MarginalModel`]. [`Pareto`] is the analytic workhorse used throughout the
//! crate, [`PointMass`] is handy for degenerate checks, and [`CustomMargin`]
//! wraps user-supplied closures.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Shared, thread-safe handle to a margin.
pub type MarginRef = Arc<dyn MarginalModel>;

/// A univariate loss distribution exposed through its quantile function `F⁻`
/// and survival function `F̄ = 1 - F`.
///
/// The unchecked methods on this trait assume arguments inside the domain;
/// use [`quantile`] and [`survival`] for validated access.
pub trait MarginalModel: fmt::Debug + Send + Sync {
    /// Quantile function `F⁻(p)` for `p` in `[0, 1]`. May return `+inf` at
    /// `p = 1` for unbounded support.
    fn quantile(&self, p: f64) -> f64;

    /// Survival function `F̄(x) = P(L > x)`.
    fn survival(&self, x: f64) -> f64;

    /// `F⁻(1 - u)`. Implementations with a closed form should override this so
    /// that upper-tail levels do not lose precision in `1 - u`.
    fn quantile_upper(&self, u: f64) -> f64 {
        self.quantile(1.0 - u)
    }

    fn support_infimum(&self) -> f64 {
        self.quantile(0.0)
    }

    fn has_finite_mean(&self) -> bool;

    /// Threshold beyond which the density is positive and decreasing.
    fn density_decreasing_from(&self) -> f64 {
        self.support_infimum()
    }

    /// Closed form of `(1/len) ∫_t^{t+len} F̄(x) dx`, the value at `len = 0`
    /// being `F̄(t)`. `None` means "integrate numerically".
    fn survival_mean(&self, _t: f64, _len: f64) -> Option<f64> {
        None
    }

    /// Closed form of `(1/len) ∫_u^{u+len} F⁻(1 - v) dv`, i.e. the mean of the
    /// quantile function over `[1 - u - len, 1 - u]`; the value at `len = 0` is
    /// `F⁻(1 - u)`. `None` means "integrate numerically".
    fn upper_quantile_mean(&self, _u: f64, _len: f64) -> Option<f64> {
        None
    }
}

/// Validated quantile: `p` must lie in `[0, 1]`.
pub fn quantile(model: &dyn MarginalModel, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability p = {p} not in [0, 1]")));
    }
    Ok(model.quantile(p))
}

/// Validated survival function: `x` must not lie below the support.
pub fn survival(model: &dyn MarginalModel, x: f64) -> Result<f64> {
    let inf = model.support_infimum();
    if x.is_nan() || x < inf {
        return Err(Error::domain(format!(
            "loss x = {x} below the support infimum {inf}"
        )));
    }
    Ok(model.survival(x))
}

/// `expm1(beta * l) / beta`, continuous at `beta = 0` where it equals `l`.
pub(crate) fn expm1_ratio(beta: f64, l: f64) -> f64 {
    if beta == 0.0 {
        l
    } else {
        (beta * l).exp_m1() / beta
    }
}

/// `((1 + r)^beta - 1) / (beta r)`: the mean of `beta (1 + r z)^(beta - 1)`
/// over `z` in `[0, 1]`, scaled. Equals 1 at `r = 0`.
pub(crate) fn power_mean_ratio(r: f64, beta: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else {
        expm1_ratio(beta, r.ln_1p()) / r
    }
}

/// Pareto (type II / Lomax) margin with `F(x) = 1 - (1 + x)^(-theta)`, `x >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pareto {
    theta: f64,
}

impl Pareto {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::domain(format!("Pareto shape theta = {theta} must be > 0")));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn into_ref(self) -> MarginRef {
        Arc::new(self)
    }
}

impl MarginalModel for Pareto {
    fn quantile(&self, p: f64) -> f64 {
        if p >= 1.0 {
            return f64::INFINITY;
        }
        // (1 - p)^(-1/theta) - 1 without cancellation for small p
        (-(-p).ln_1p() / self.theta).exp_m1()
    }

    fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        (-self.theta * x.ln_1p()).exp()
    }

    fn quantile_upper(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return f64::INFINITY;
        }
        (-u.ln() / self.theta).exp_m1()
    }

    fn support_infimum(&self) -> f64 {
        0.0
    }

    fn has_finite_mean(&self) -> bool {
        self.theta > 1.0
    }

    fn survival_mean(&self, t: f64, len: f64) -> Option<f64> {
        let base = 1.0 + t;
        Some(self.survival(t) * power_mean_ratio(len / base, 1.0 - self.theta))
    }

    fn upper_quantile_mean(&self, u: f64, len: f64) -> Option<f64> {
        let beta = 1.0 - 1.0 / self.theta;
        if u == 0.0 {
            // mean of v^(-1/theta) over [0, len]
            return Some(if beta > 0.0 {
                len.powf(-1.0 / self.theta) / beta - 1.0
            } else {
                f64::INFINITY
            });
        }
        Some(u.powf(-1.0 / self.theta) * power_mean_ratio(len / u, beta) - 1.0)
    }
}

/// Expected shortfall `ES_alpha` of a Pareto(theta) loss, the mean of `L`
/// given `L > F⁻(alpha)`: `q + (1 + q) / (theta - 1)` with `q = F⁻(alpha)`.
pub fn expected_shortfall_pareto(theta: f64, alpha: f64) -> Result<f64> {
    let margin = Pareto::new(theta)?;
    crate::error::check_alpha(alpha)?;
    if theta <= 1.0 {
        return Err(Error::InfiniteMean { theta });
    }
    let q = margin.quantile(alpha);
    Ok(q + (1.0 + q) / (theta - 1.0))
}

/// Degenerate margin: `L = value` almost surely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass {
    pub value: f64,
}

impl MarginalModel for PointMass {
    fn quantile(&self, _p: f64) -> f64 {
        self.value
    }

    fn survival(&self, x: f64) -> f64 {
        if x < self.value {
            1.0
        } else {
            0.0
        }
    }

    fn has_finite_mean(&self) -> bool {
        true
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Margin assembled from user-supplied quantile and survival functions.
///
/// Nothing about the pair is verified; in particular the decreasing-density
/// assumption behind Wang's approach is the caller's responsibility.
#[derive(Clone)]
pub struct CustomMargin {
    name: String,
    quantile: ScalarFn,
    survival: ScalarFn,
    support_infimum: f64,
    finite_mean: bool,
    density_decreasing_from: f64,
}

impl CustomMargin {
    pub fn new(
        name: impl Into<String>,
        quantile: impl Fn(f64) -> f64 + Send + Sync + 'static,
        survival: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let quantile: ScalarFn = Arc::new(quantile);
        let support_infimum = quantile(0.0);
        Self {
            name: name.into(),
            quantile,
            survival: Arc::new(survival),
            support_infimum,
            finite_mean: true,
            density_decreasing_from: support_infimum,
        }
    }

    pub fn with_finite_mean(mut self, finite: bool) -> Self {
        self.finite_mean = finite;
        self
    }

    pub fn with_support_infimum(mut self, x: f64) -> Self {
        self.support_infimum = x;
        self
    }

    pub fn with_density_decreasing_from(mut self, beta: f64) -> Self {
        self.density_decreasing_from = beta;
        self
    }
}

impl fmt::Debug for CustomMargin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomMargin")
            .field("name", &self.name)
            .field("support_infimum", &self.support_infimum)
            .finish_non_exhaustive()
    }
}

impl MarginalModel for CustomMargin {
    fn quantile(&self, p: f64) -> f64 {
        (self.quantile)(p)
    }

    fn survival(&self, x: f64) -> f64 {
        (self.survival)(x)
    }

    fn support_infimum(&self) -> f64 {
        self.support_infimum
    }

    fn has_finite_mean(&self) -> bool {
        self.finite_mean
    }

    fn density_decreasing_from(&self) -> f64 {
        self.density_decreasing_from
    }
}
