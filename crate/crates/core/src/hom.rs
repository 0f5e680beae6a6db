//! Worst Value-at-Risk in the homogeneous case (all `d` margins equal).
//!
//! Two routes are implemented:
//!
//! * the dual bound: find `s*` with `D(s*) = 1 - alpha`, where `D(s)` is the
//!   minimum over `t` of
//!   `D(s, t) = d / (s - d t) * ∫_t^{s - (d-1) t} F̄(x) dx`;
//! * Wang's approach: find the root `c*` of
//!   `h(c) = Ī(c) - ((d-1)/d F⁻(a_c) + F⁻(b_c)/d)` with `a_c = alpha + (d-1) c`,
//!   `b_c = 1 - c` and `Ī(c)` the mean of `F⁻` over `[a_c, b_c]`; the worst VaR
//!   is then `(d-1) F⁻(a_c*) + F⁻(b_c*)`.
//!
//! For Pareto margins Wang's root can also be found in the variable
//! `x = (1 - alpha)/c - (d - 1)`, see [`h2`].
//!
//! [`crude_var_bounds`] gives bounds valid for any margins and any dependence.

use crate::error::{check_alpha, Error, Result};
use crate::margins::{expm1_ratio, power_mean_ratio, MarginRef, MarginalModel, Pareto};
use crate::numerics::{integrate, try_find_root, QuadConfig, RootConfig};

/// Relative distance from `s/d` below which the inner root of the dual bound is
/// treated as the degenerate root at `t = s/d`.
pub const S_TOO_SMALL_REL: f64 = 1e-8;

/// Shapes with `|theta - 1|` below this use the `theta = 1` form of [`h2`].
pub const THETA_ONE_WINDOW: f64 = 1e-6;

fn check_dim(d: usize) -> Result<()> {
    if d >= 3 {
        Ok(())
    } else {
        Err(Error::domain(format!("dimension d = {d} must be at least 3")))
    }
}

/// Bounds on `VaR_alpha(L1 + ... + Ld)` valid for every dependence structure:
/// `(d min_j F_j⁻(alpha/d), d max_j F_j⁻(1 - (1 - alpha)/d))`.
pub fn crude_var_bounds(margins: &[MarginRef], alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if margins.is_empty() {
        return Err(Error::domain("crude bounds need at least one margin"));
    }
    let d = margins.len() as f64;
    let lo = margins
        .iter()
        .map(|m| m.quantile(alpha / d))
        .fold(f64::INFINITY, f64::min);
    let hi = margins
        .iter()
        .map(|m| m.quantile_upper((1.0 - alpha) / d))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((d * lo, d * hi))
}

fn crude_upper_hom(margin: &dyn MarginalModel, d: usize, alpha: f64) -> f64 {
    d as f64 * margin.quantile_upper((1.0 - alpha) / d as f64)
}

// ---------------------------------------------------------------------------
// Dual bound

/// Homogeneous dual-bound problem.
#[derive(Debug, Clone)]
pub struct DualProblem {
    margin: MarginRef,
    d: usize,
    alpha: f64,
    /// Lower end of the outer `s` interval. Must be large enough for
    /// `h(s_l, .)` to have an interior root; there is no general recipe.
    pub s_lower: f64,
    /// Upper end of the outer interval; defaults to
    /// `max(s_lower + 1, d F⁻(1 - (1 - alpha)/d))`.
    pub s_upper: Option<f64>,
    pub t_floor: f64,
    pub inner_root: RootConfig,
    pub outer_root: RootConfig,
    pub quad: QuadConfig,
}

impl DualProblem {
    pub fn new(margin: MarginRef, d: usize, alpha: f64, s_lower: f64) -> Result<Self> {
        check_dim(d)?;
        check_alpha(alpha)?;
        if margin.survival(0.0) != 1.0 {
            return Err(Error::domain("dual bound requires F(0) = 0"));
        }
        if !(s_lower > 0.0 && s_lower.is_finite()) {
            return Err(Error::domain(format!("s_lower = {s_lower} must be positive")));
        }
        Ok(Self {
            margin,
            d,
            alpha,
            s_lower,
            s_upper: None,
            t_floor: 0.0,
            inner_root: RootConfig::default(),
            outer_root: RootConfig::default(),
            quad: QuadConfig { rel_tolerance: 1e-12, max_subdivisions: 2000, ..QuadConfig::default() },
        })
    }

    pub fn with_s_upper(mut self, s_upper: f64) -> Result<Self> {
        if !(s_upper > self.s_lower) {
            return Err(Error::domain(format!(
                "s interval [{}, {s_upper}] is empty",
                self.s_lower
            )));
        }
        self.s_upper = Some(s_upper);
        Ok(self)
    }

    pub fn with_t_floor(mut self, t_floor: f64) -> Result<Self> {
        if !(t_floor >= self.margin.support_infimum()) {
            return Err(Error::domain(format!("t_floor = {t_floor} below the support")));
        }
        self.t_floor = t_floor;
        Ok(self)
    }

    pub fn margin(&self) -> &dyn MarginalModel {
        self.margin.as_ref()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The effective outer interval `[s_l, s_u]`.
    pub fn s_interval(&self) -> (f64, f64) {
        let s_u = self.s_upper.unwrap_or_else(|| {
            (self.s_lower + 1.0).max(crude_upper_hom(self.margin(), self.d, self.alpha))
        });
        (self.s_lower, s_u)
    }
}

fn check_t(p: &DualProblem, s: f64, t: f64) -> Result<()> {
    if !(t >= 0.0 && t <= s / p.d as f64) {
        return Err(Error::domain(format!(
            "t = {t} outside [0, s/d] = [0, {}]",
            s / p.d as f64
        )));
    }
    Ok(())
}

/// `D(s, t)`; at `t = s/d` the limit `d F̄(s/d)`.
pub fn dual_d(p: &DualProblem, s: f64, t: f64) -> Result<f64> {
    check_t(p, s, t)?;
    let d = p.d as f64;
    let kappa = (s - d * t).max(0.0);
    if kappa == 0.0 {
        return Ok(d * p.margin.survival(s / d));
    }
    let mean = match p.margin.survival_mean(t, kappa) {
        Some(v) => v,
        None => integrate(|x| p.margin.survival(x), t, t + kappa, &p.quad)? / kappa,
    };
    Ok(d * mean)
}

/// Inner objective `h(s, t) = D(s, t) - (F̄(t) + (d-1) F̄(s - (d-1) t))`.
/// Vanishes at `t = s/d` for every `s`.
pub fn dual_h(p: &DualProblem, s: f64, t: f64) -> Result<f64> {
    let dd = dual_d(p, s, t)?;
    Ok(dd - survival_pair(p, s, t))
}

fn survival_pair(p: &DualProblem, s: f64, t: f64) -> f64 {
    let d = p.d as f64;
    p.margin.survival(t) + (d - 1.0) * p.margin.survival(s - (d - 1.0) * t)
}

/// `D(s)` together with the minimiser `t*` of `D(s, .)`.
///
/// Fails with [`Error::STooSmall`] when `h(s, .)` has no root inside
/// `(t_floor, s/d)`.
pub fn dual_d_min(p: &DualProblem, s: f64) -> Result<(f64, f64)> {
    let t_hi = s / p.d as f64;
    if !(t_hi > p.t_floor) {
        return Err(Error::STooSmall { s });
    }
    let h_lo = dual_h(p, s, p.t_floor)?;
    if h_lo == 0.0 {
        return Ok((survival_pair(p, s, p.t_floor), p.t_floor));
    }
    // h(s, s/d) = 0 for every s; pretend the upper end has the opposite sign
    // of the lower end so that any interior root is bracketed.
    let cfg = p.inner_root.with_f_lower(h_lo).with_f_upper(-h_lo);
    let t_star = try_find_root(|t| dual_h(p, s, t), p.t_floor, t_hi, &cfg)?;
    if t_star >= t_hi * (1.0 - S_TOO_SMALL_REL) {
        return Err(Error::STooSmall { s });
    }
    Ok((survival_pair(p, s, t_star), t_star))
}

/// Worst VaR via the dual bound: the root of `D(s) = 1 - alpha` on the
/// problem's `s` interval.
pub fn worst_var_dual(p: &DualProblem) -> Result<f64> {
    let (s_l, s_u) = p.s_interval();
    let target = 1.0 - p.alpha;
    let f = |s: f64| dual_d_min(p, s).map(|(v, _)| v - target);
    let f_lo = f(s_l)?;
    let f_hi = f(s_u)?;
    if f_lo == 0.0 {
        return Ok(s_l);
    }
    if f_hi == 0.0 {
        return Ok(s_u);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Interval { what: "dual bound D(s) - (1 - alpha)", lo: s_l, hi: s_u, f_lo, f_hi });
    }
    let cfg = p.outer_root.with_f_lower(f_lo).with_f_upper(f_hi);
    try_find_root(f, s_l, s_u, &cfg)
}

// ---------------------------------------------------------------------------
// Wang's approach

/// `(a_c, b_c) = (alpha + (d-1) c, 1 - c)` for `c` in `[0, (1 - alpha)/d]`.
pub fn wang_ab(c: f64, alpha: f64, d: usize) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if d == 0 {
        return Err(Error::domain("dimension d must be positive"));
    }
    let c_max = (1.0 - alpha) / d as f64;
    if !(c >= 0.0 && c <= c_max) {
        return Err(Error::domain(format!("c = {c} outside [0, {c_max}]")));
    }
    Ok((alpha + (d as f64 - 1.0) * c, 1.0 - c))
}

/// How `Ī` and `h` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WangMode {
    /// Adaptive quadrature of the quantile function; any margin.
    Numeric,
    /// Closed forms for Pareto margins.
    Analytic,
    /// Root search in `x = (1 - alpha)/c - (d - 1)` on [`h2`]; Pareto only.
    Transformed,
}

#[derive(Debug, Clone)]
pub struct WangProblem {
    margin: MarginRef,
    theta: Option<f64>,
    d: usize,
    alpha: f64,
    c_lower: f64,
    c_upper: f64,
    pub mode: WangMode,
    pub root: RootConfig,
    pub quad: QuadConfig,
}

impl WangProblem {
    /// Pareto problem with the bracketing interval from
    /// [`wang_interval_pareto`].
    pub fn pareto(theta: f64, d: usize, alpha: f64, mode: WangMode) -> Result<Self> {
        let margin = Pareto::new(theta)?;
        check_dim(d)?;
        check_alpha(alpha)?;
        let (c_lower, c_upper) = wang_interval_pareto(theta, alpha, d)?;
        Ok(Self {
            margin: margin.into_ref(),
            theta: Some(theta),
            d,
            alpha,
            c_lower,
            c_upper,
            mode,
            root: RootConfig::default(),
            quad: default_wang_quad(),
        })
    }

    /// Generic margin, evaluated by quadrature on a user-supplied interval.
    /// Only *a* root in the interval is located, not necessarily the smallest.
    pub fn numeric(margin: MarginRef, d: usize, alpha: f64, c_interval: (f64, f64)) -> Result<Self> {
        check_dim(d)?;
        check_alpha(alpha)?;
        Self {
            margin,
            theta: None,
            d,
            alpha,
            c_lower: 0.0,
            c_upper: 0.0,
            mode: WangMode::Numeric,
            root: RootConfig::default(),
            quad: default_wang_quad(),
        }
        .with_interval(c_interval.0, c_interval.1)
    }

    /// Replaces the bracketing interval; requires `0 < c_l < c_u <= (1 - alpha)/d`.
    pub fn with_interval(mut self, c_lower: f64, c_upper: f64) -> Result<Self> {
        let c_max = self.c_max();
        if !(c_lower > 0.0 && c_lower < c_upper && c_upper <= c_max) {
            return Err(Error::domain(format!(
                "c interval [{c_lower}, {c_upper}] not inside (0, {c_max}]"
            )));
        }
        self.c_lower = c_lower;
        self.c_upper = c_upper;
        Ok(self)
    }

    pub fn margin(&self) -> &dyn MarginalModel {
        self.margin.as_ref()
    }

    pub fn theta(&self) -> Option<f64> {
        self.theta
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c_interval(&self) -> (f64, f64) {
        (self.c_lower, self.c_upper)
    }

    /// `(1 - alpha)/d`, where `a_c` and `b_c` meet.
    pub fn c_max(&self) -> f64 {
        (1.0 - self.alpha) / self.d as f64
    }

    fn analytic_theta(&self) -> Option<f64> {
        match self.mode {
            WangMode::Numeric => None,
            _ => self.theta,
        }
    }

    fn check_c(&self, c: f64) -> Result<()> {
        let c_max = self.c_max();
        if !(c >= 0.0 && c <= c_max) {
            return Err(Error::domain(format!("c = {c} outside [0, {c_max}]")));
        }
        if c == 0.0 && !self.margin.has_finite_mean() {
            return Err(Error::domain(
                "c = 0 with an infinite-mean margin gives an infinite conditional mean",
            ));
        }
        Ok(())
    }

    /// `b_c - a_c = 1 - alpha - d c`, clamped at zero.
    fn len(&self, c: f64) -> f64 {
        (1.0 - self.alpha - self.d as f64 * c).max(0.0)
    }
}

fn default_wang_quad() -> QuadConfig {
    QuadConfig { rel_tolerance: 1e-13, max_subdivisions: 5000, ..QuadConfig::default() }
}

/// `Ī(c)`, the mean of `F⁻` over `[a_c, b_c]`; at `c = (1 - alpha)/d` the limit
/// `F⁻(1 - (1 - alpha)/d)`.
pub fn ibar(p: &WangProblem, c: f64) -> Result<f64> {
    p.check_c(c)?;
    let len = p.len(c);
    if len == 0.0 {
        return Ok(p.margin.quantile_upper(c));
    }
    if p.analytic_theta().is_some() {
        if let Some(v) = p.margin.upper_quantile_mean(c, len) {
            return Ok(v);
        }
    }
    // integrate F⁻(1 - u) over u in [c, c + len] = [1 - b_c, 1 - a_c]
    let v = integrate(|u| p.margin.quantile_upper(u), c, c + len, &p.quad)?;
    Ok(v / len)
}

/// The bracketed part of the Pareto `h`: `h(c) = c^(-1/theta) * pareto_h_core(r)`
/// with `r = (b_c - a_c)/c`.
fn pareto_h_core(theta: f64, d: usize, r: f64) -> f64 {
    let d = d as f64;
    let g = power_mean_ratio(r, 1.0 - 1.0 / theta);
    let tail = (-r.ln_1p() / theta).exp();
    g - ((d - 1.0) * tail + 1.0) / d
}

/// `h(c) = Ī(c) - ((d-1)/d F⁻(a_c) + F⁻(b_c)/d)`; zero at `c = (1 - alpha)/d`.
pub fn wang_h(p: &WangProblem, c: f64) -> Result<f64> {
    p.check_c(c)?;
    let len = p.len(c);
    if let Some(theta) = p.analytic_theta() {
        if c > 0.0 {
            // the "-1" of the Pareto quantile cancels between the terms
            return Ok(c.powf(-1.0 / theta) * pareto_h_core(theta, p.d, len / c));
        }
    }
    let d = p.d as f64;
    let q_a = p.margin.quantile_upper(c + len);
    let q_b = p.margin.quantile_upper(c);
    Ok(ibar(p, c)? - ((d - 1.0) / d * q_a + q_b / d))
}

/// Bracketing interval `[c_l, c_u]` for the root of Wang's `h` with Pareto
/// margins. `c_l` is already halved when `theta != 1`, which is needed for
/// the bracket to hold numerically.
pub fn wang_interval_pareto(theta: f64, alpha: f64, d: usize) -> Result<(f64, f64)> {
    Pareto::new(theta)?;
    check_alpha(alpha)?;
    check_dim(d)?;
    let d = d as f64;
    let q = 1.0 - alpha;
    let (c_l, c_u) = if theta == 1.0 {
        let e = std::f64::consts::E;
        (q / ((d + 1.0).powf(e / (e - 1.0)) + d - 1.0), q / (3.0 * d / 2.0 - 1.0))
    } else {
        let c_l = if theta < 1.0 {
            (1.0 - theta) * q / d
        } else {
            q / ((d / (theta - 1.0) + 1.0).powf(theta) + d - 1.0)
        };
        let c_u = q * (d - 1.0 + theta) / ((d - 1.0) * (2.0 * theta + d));
        (c_l / 2.0, c_u)
    };
    Ok((c_l, c_u))
}

/// Result of Wang's approach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WangOutcome {
    pub c_star: f64,
    pub a_c: f64,
    pub b_c: f64,
    /// `(d-1) F⁻(a_c*) + F⁻(b_c*)`, the worst VaR.
    pub value: f64,
    /// `d Ī(c*)`, which equals `value` at an exact root.
    pub cross_check: f64,
    /// `|value - cross_check| / value`.
    pub discrepancy: f64,
}

fn wang_outcome(p: &WangProblem, c: f64) -> Result<WangOutcome> {
    let d = p.d as f64;
    let len = p.len(c);
    let value = (d - 1.0) * p.margin.quantile_upper(c + len) + p.margin.quantile_upper(c);
    let cross_check = d * ibar(p, c)?;
    Ok(WangOutcome {
        c_star: c,
        a_c: p.alpha + (d - 1.0) * c,
        b_c: 1.0 - c,
        value,
        cross_check,
        discrepancy: ((value - cross_check) / value).abs(),
    })
}

/// Worst VaR via Wang's approach in the problem's mode.
pub fn worst_var_wang(p: &WangProblem) -> Result<WangOutcome> {
    if p.mode == WangMode::Transformed {
        let theta = p
            .theta
            .ok_or_else(|| Error::domain("transformed mode needs a Pareto shape"))?;
        return worst_var_wang_transformed_with(theta, p.alpha, p.d, &p.root);
    }
    let (c_l, c_u) = p.c_interval();
    let f_lo = wang_h(p, c_l)?;
    let mut cfg = p.root.with_f_lower(f_lo);
    let degenerate_upper = c_u >= p.c_max() * (1.0 - 1e-9);
    let f_hi = if degenerate_upper {
        // h vanishes at (1 - alpha)/d; stand in the opposite sign of h(c_l)
        -f_lo
    } else {
        wang_h(p, c_u)?
    };
    if f_lo == 0.0 {
        return wang_outcome(p, c_l);
    }
    if f_hi == 0.0 || f_lo.signum() == f_hi.signum() {
        return Err(Error::Interval { what: "Wang h(c)", lo: c_l, hi: c_u, f_lo, f_hi });
    }
    cfg = cfg.with_f_upper(f_hi);
    let c_star = try_find_root(|c| wang_h(p, c), c_l, c_u, &cfg)?;
    if degenerate_upper && c_star >= c_u * (1.0 - S_TOO_SMALL_REL) {
        let f_hi = wang_h(p, c_u)?;
        return Err(Error::Interval { what: "Wang h(c) (no interior root)", lo: c_l, hi: c_u, f_lo, f_hi });
    }
    wang_outcome(p, c_star)
}

/// `x_c = (1 - alpha)/c - (d - 1)`, mapping `(0, (1 - alpha)/d)` onto `(1, inf)`.
pub fn c_to_x(c: f64, alpha: f64, d: usize) -> f64 {
    (1.0 - alpha) / c - (d as f64 - 1.0)
}

/// Inverse of [`c_to_x`].
pub fn x_to_c(x: f64, alpha: f64, d: usize) -> f64 {
    (1.0 - alpha) / (x + d as f64 - 1.0)
}

/// `h₂(x)`, whose roots on `(1, inf)` are those of Wang's `h` for Pareto
/// margins under `x = x_c`. `h₂(1) = 0`.
///
/// For `theta != 1`:
/// `h₂(x) = (d/(1-θ) - 1) x^(1-1/θ) - (d-1) x^(-1/θ) + x - (dθ/(1-θ) + 1)`,
/// evaluated in a rearranged form without the `1/(1-θ)` blow-up. Within
/// [`THETA_ONE_WINDOW`] of 1 the `theta = 1` form
/// `x² + x (d - 2 - d ln x) - (d - 1)` is returned instead (this is `x h₂(x)`
/// at `theta = 1`, so it has the same sign and roots).
pub fn h2(x: f64, theta: f64, d: usize) -> f64 {
    let d = d as f64;
    if (theta - 1.0).abs() < THETA_ONE_WINDOW {
        return x * x + x * (d - 2.0 - d * x.ln()) - (d - 1.0);
    }
    let beta = 1.0 - 1.0 / theta;
    let l = x.ln();
    let x_beta = (beta * l).exp();
    let x_inv = (-l / theta).exp();
    -d * expm1_ratio(beta, l) / theta + d - x_beta - 1.0 - (d - 1.0) * x_inv + x
}

/// The inflection point of `h₂`: `(d-1)(1+θ)/(d+θ-1)`, or `d/2` at `theta = 1`.
pub fn h2_inflection(theta: f64, d: usize) -> f64 {
    let d = d as f64;
    if (theta - 1.0).abs() < THETA_ONE_WINDOW {
        d / 2.0
    } else {
        (d - 1.0) * (1.0 + theta) / (d + theta - 1.0)
    }
}

/// Upper end of the `x` bracket; the image of the (unhalved) lower end of
/// [`wang_interval_pareto`].
fn h2_upper_start(theta: f64, d: usize) -> f64 {
    let d = d as f64;
    if (theta - 1.0).abs() < THETA_ONE_WINDOW {
        let e = std::f64::consts::E;
        (d + 1.0).powf(e / (e - 1.0))
    } else if theta < 1.0 {
        d * theta / (1.0 - theta) + 1.0
    } else {
        (d / (theta - 1.0) + 1.0).powf(theta)
    }
}

/// Worst VaR for Pareto margins via the root of [`h2`].
pub fn worst_var_wang_transformed(theta: f64, alpha: f64, d: usize) -> Result<WangOutcome> {
    worst_var_wang_transformed_with(theta, alpha, d, &RootConfig::default())
}

fn worst_var_wang_transformed_with(
    theta: f64,
    alpha: f64,
    d: usize,
    root: &RootConfig,
) -> Result<WangOutcome> {
    let p = WangProblem::pareto(theta, d, alpha, WangMode::Analytic)?;
    let x_lo = h2_inflection(theta, d);
    let f_lo = h2(x_lo, theta, d);
    let mut x_hi = h2_upper_start(theta, d);
    let mut f_hi = h2(x_hi, theta, d);
    // the start value can sit on the wrong side for some (theta, d); widen
    let mut doublings = 0;
    while f_hi <= 0.0 && doublings < 1000 && x_hi.is_finite() {
        x_hi *= 2.0;
        f_hi = h2(x_hi, theta, d);
        doublings += 1;
    }
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::Interval { what: "transformed h2(x)", lo: x_lo, hi: x_hi, f_lo, f_hi });
    }
    let cfg = root.with_f_lower(f_lo).with_f_upper(f_hi);
    let x_star = try_find_root(|x| Ok::<_, Error>(h2(x, theta, d)), x_lo, x_hi, &cfg)?;
    wang_outcome(&p, x_to_c(x_star, alpha, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::expected_shortfall_pareto;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn par(theta: f64) -> MarginRef {
        Pareto::new(theta).unwrap().into_ref()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn dual(theta: f64, d: usize, alpha: f64, s_l: f64) -> DualProblem {
        DualProblem::new(par(theta), d, alpha, s_l).unwrap()
    }

    /// Mean of the Pareto quantile over [a_c, b_c], straight from the
    /// antiderivative. Takes the complements 1 - a_c, 1 - b_c so that tiny c
    /// is not lost in 1 - b_c.
    fn ibar_literal(theta: f64, c: f64, alpha: f64, d: f64) -> f64 {
        let (ua, ub) = (1.0 - alpha - (d - 1.0) * c, c);
        let len = ua - ub;
        if theta == 1.0 {
            (ua / ub).ln() / len - 1.0
        } else {
            let e = 1.0 - 1.0 / theta;
            theta / (1.0 - theta) * (ub.powf(e) - ua.powf(e)) / len - 1.0
        }
    }

    fn h2_literal(x: f64, theta: f64, d: f64) -> f64 {
        (d / (1.0 - theta) - 1.0) * x.powf(1.0 - 1.0 / theta) - (d - 1.0) * x.powf(-1.0 / theta) + x
            - (d * theta / (1.0 - theta) + 1.0)
    }

    #[test]
    fn crude_bounds_examples() {
        let (lo, hi) = crude_var_bounds(&vec![par(2.0); 8], 0.99).unwrap();
        let lo_ref = 8.0 * ((1.0 - 0.99f64 / 8.0).powf(-0.5) - 1.0);
        let hi_ref = 8.0 * ((0.01f64 / 8.0).powf(-0.5) - 1.0);
        assert!(rel(lo, lo_ref) < 1e-13 && (lo - 0.546_257_450_202_136).abs() < 1e-12);
        assert!(rel(hi, hi_ref) < 1e-13 && (hi - 218.274).abs() < 1e-3);

        let (lo, hi) = crude_var_bounds(&[par(2.0)], 0.99).unwrap();
        assert!((lo - 9.0).abs() < 1e-12 && (hi - 9.0).abs() < 1e-12);

        let ms = [par(1.0), par(2.0), par(3.0)];
        let (lo, hi) = crude_var_bounds(&ms, 0.9).unwrap();
        let q = |t: f64, p: f64| (1.0 - p).powf(-1.0 / t) - 1.0;
        let lows = [q(1.0, 0.3), q(2.0, 0.3), q(3.0, 0.3)];
        let highs = [q(1.0, 1.0 - 0.1 / 3.0), q(2.0, 1.0 - 0.1 / 3.0), q(3.0, 1.0 - 0.1 / 3.0)];
        assert!(rel(lo, 3.0 * lows.iter().cloned().fold(f64::INFINITY, f64::min)) < 1e-12);
        assert!(rel(hi, 3.0 * highs.iter().cloned().fold(0.0, f64::max)) < 1e-12);

        assert!(crude_var_bounds(&[], 0.9).is_err());
    }

    #[test]
    fn dual_d_examples() {
        let p = dual(2.0, 8, 0.99, 10.0);
        assert!((dual_d(&p, 8.0, 1.0).unwrap() - 2.0).abs() < 1e-15);
        let p = dual(1.0, 3, 0.99, 10.0);
        assert!((dual_d(&p, 3.0, 0.0).unwrap() - 4f64.ln()).abs() < 1e-14);
        assert!(dual_d(&p, 3.0, 1.5).is_err());
    }

    #[test]
    fn dual_d_generic_margin_uses_quadrature() {
        // same Pareto, but hidden behind a closure so no closed form is used
        let m = crate::margins::CustomMargin::new(
            "pareto2",
            |p: f64| (1.0 - p).powf(-0.5) - 1.0,
            |x: f64| (1.0 + x).powi(-2),
        )
        .with_finite_mean(true);
        let generic = DualProblem::new(Arc::new(m), 8, 0.99, 10.0).unwrap();
        let closed = dual(2.0, 8, 0.99, 10.0);
        for &(s, t) in &[(20.0, 0.0), (20.0, 1.3), (50.0, 6.0), (8.0, 1.0)] {
            let a = dual_d(&generic, s, t).unwrap();
            let b = dual_d(&closed, s, t).unwrap();
            assert!(rel(a, b) < 1e-11, "{s} {t}: {a} vs {b}");
        }
    }

    #[test]
    fn dual_h_vanishes_at_s_over_d() {
        for &theta in &[0.5, 1.0, 2.0, 5.0] {
            for &d in &[3usize, 8, 100] {
                let p = dual(theta, d, 0.99, 1.0);
                for &s in &[0.5, 3.0, 20.0, 1e4] {
                    assert!(dual_h(&p, s, s / d as f64).unwrap().abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn small_s_has_no_interior_root() {
        let p = dual(2.0, 8, 0.99, 1.0);
        let s = 2.0;
        let n = 2000;
        let signs: Vec<bool> = (0..n)
            .map(|i| dual_h(&p, s, s / 8.0 * i as f64 / n as f64).unwrap() > 0.0)
            .collect();
        assert!(signs.windows(2).all(|w| w[0] == w[1]));
        assert!(matches!(dual_d_min(&p, s), Err(Error::STooSmall { .. })));
    }

    #[test]
    fn large_s_has_interior_root() {
        let p = dual(2.0, 8, 0.99, 1.0);
        let s = 20.0;
        let n = 2000;
        let vals: Vec<f64> = (0..n)
            .map(|i| dual_h(&p, s, s / 8.0 * i as f64 / n as f64).unwrap())
            .collect();
        // for this s the root sits exactly at t = 1, a grid point
        let first_pos = vals.iter().position(|&v| v > 0.0).unwrap();
        assert!(first_pos > 0 && vals[..first_pos].iter().any(|&v| v < 0.0));
        let (_, t) = dual_d_min(&p, s).unwrap();
        assert!(t > 0.0 && t < s / 8.0);
    }

    #[test]
    fn d_min_matches_grid_minimum() {
        let p = dual(2.0, 8, 0.99, 1.0);
        for &s in &[20.0, 45.0, 120.0] {
            let (dmin, t_star) = dual_d_min(&p, s).unwrap();
            let n = 10_000;
            let grid_min = (0..=n)
                .map(|i| dual_d(&p, s, s / 8.0 * i as f64 / n as f64).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(dmin <= grid_min + 1e-12);
            assert!(rel(dmin, grid_min) < 1e-6, "{dmin} vs {grid_min}");
            assert!(rel(dual_d(&p, s, t_star).unwrap(), dmin) < 1e-10);
        }
    }

    #[test]
    fn dual_d_is_midpoint_convex_in_t() {
        for &theta in &[0.5, 1.0, 2.0, 5.0] {
            let p = dual(theta, 8, 0.99, 1.0);
            let s = 50.0;
            let n = 200;
            let ts: Vec<f64> = (0..=n).map(|i| s / 8.0 * i as f64 / n as f64).collect();
            for i in 0..ts.len() {
                for j in (i + 1..ts.len()).step_by(7) {
                    let mid = dual_d(&p, s, 0.5 * (ts[i] + ts[j])).unwrap();
                    let avg = 0.5 * (dual_d(&p, s, ts[i]).unwrap() + dual_d(&p, s, ts[j]).unwrap());
                    assert!(mid <= avg + 1e-10);
                }
            }
        }
    }

    #[test]
    fn dual_worst_var_root_and_monotonicity() {
        let wang = worst_var_wang(&WangProblem::pareto(2.0, 8, 0.99, WangMode::Analytic).unwrap()).unwrap();
        let p = dual(2.0, 8, 0.99, 0.5 * wang.value);
        let s_star = worst_var_dual(&p).unwrap();
        assert!(rel(s_star, wang.value) < 5e-4, "{s_star} vs {}", wang.value);
        let (d_star, _) = dual_d_min(&p, s_star).unwrap();
        assert!((d_star - 0.01).abs() < 1e-12);
        let delta = 1e-3 * s_star;
        let below = dual_d_min(&p, s_star - delta).unwrap().0;
        let above = dual_d_min(&p, s_star + delta).unwrap().0;
        assert!(below >= d_star && d_star >= above);

        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let s = s_star * (1.0 + 0.05 * i as f64);
            let v = dual_d_min(&p, s).unwrap().0;
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn dual_s_too_small_propagates() {
        let p = dual(2.0, 8, 0.99, 2.0);
        assert!(matches!(worst_var_dual(&p), Err(Error::STooSmall { .. })));
    }

    #[test]
    fn wang_ab_examples() {
        assert_eq!(wang_ab(0.0, 0.99, 8).unwrap(), (0.99, 1.0));
        let (a, b) = wang_ab(0.01 / 8.0, 0.99, 8).unwrap();
        assert!((a - b).abs() < 1e-15 && (a - (1.0 - 0.01 / 8.0)).abs() < 1e-15);
        let (a, b) = wang_ab(0.000625, 0.99, 8).unwrap();
        assert!((a - 0.994375).abs() < 1e-15 && (b - 0.999375).abs() < 1e-15);
        assert!(wang_ab(0.01, 0.99, 8).is_err());
        assert!(wang_ab(-1e-9, 0.99, 8).is_err());
    }

    #[test]
    fn ibar_matches_literal_form() {
        for &theta in &[0.5, 1.0, 2.0, 5.0] {
            let p = WangProblem::pareto(theta, 8, 0.99, WangMode::Analytic).unwrap();
            for &c in &[1e-12, 1e-8, 1e-5, 3e-4, 1e-3, 1.2e-3] {
                let lit = ibar_literal(theta, c, 0.99, 8.0);
                assert!(rel(ibar(&p, c).unwrap(), lit) < 1e-9, "theta {theta} c {c}");
            }
        }
    }

    #[test]
    fn ibar_theta_one_matches_quadrature() {
        let analytic = WangProblem::pareto(1.0, 8, 0.99, WangMode::Analytic).unwrap();
        let numeric = WangProblem::pareto(1.0, 8, 0.99, WangMode::Numeric).unwrap();
        for &c in &[1e-6, 1e-4, 5e-4, 1.2e-3] {
            let (a, b) = wang_ab(c, 0.99, 8).unwrap();
            let quad = integrate(|y| 1.0 / (1.0 - y) - 1.0, a, b, &default_wang_quad()).unwrap() / (b - a);
            assert!(rel(ibar(&analytic, c).unwrap(), quad) < 1e-8);
            assert!(rel(ibar(&numeric, c).unwrap(), quad) < 1e-8);
        }
    }

    #[test]
    fn ibar_endpoint_and_expected_shortfall() {
        let alpha = 0.99;
        for &theta in &[0.5, 1.0, 2.0] {
            let p = WangProblem::pareto(theta, 8, alpha, WangMode::Analytic).unwrap();
            let c_max = p.c_max();
            let q = Pareto::new(theta).unwrap().quantile(1.0 - (1.0 - alpha) / 8.0);
            assert!(rel(ibar(&p, c_max).unwrap(), q) < 1e-12);
        }
        // At c = 0 the mean is the expected shortfall.
        for &theta in &[1.5, 2.0, 5.0] {
            let p = WangProblem::pareto(theta, 8, alpha, WangMode::Analytic).unwrap();
            let es = expected_shortfall_pareto(theta, alpha).unwrap();
            assert!(rel(ibar(&p, 0.0).unwrap(), es) < 1e-13);
            // Near zero the gap closes only like c^(1 - 1/theta): the mass of
            // u^(-1/theta) on [0, c] is missing from the average.
            let c = 1e-12;
            let beta = 1.0 - 1.0 / theta;
            let gap = es - ibar(&p, c).unwrap();
            let first_order = c.powf(beta) / (beta * (1.0 - alpha));
            assert!(gap > 0.0 && rel(gap, first_order) < 0.05, "theta {theta}: {gap} vs {first_order}");
        }
        let p = WangProblem::pareto(1.0, 8, alpha, WangMode::Analytic).unwrap();
        assert!(ibar(&p, 0.0).is_err());
    }

    #[test]
    fn wang_h_vanishes_at_upper_end() {
        for &theta in &[0.5, 1.0, 2.0, 5.0] {
            for mode in [WangMode::Analytic, WangMode::Numeric] {
                let p = WangProblem::pareto(theta, 8, 0.99, mode).unwrap();
                assert_eq!(wang_h(&p, p.c_max()).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn wang_h_analytic_matches_numeric() {
        for &theta in &[0.5, 1.0, 2.0, 5.0] {
            let a = WangProblem::pareto(theta, 8, 0.99, WangMode::Analytic).unwrap();
            let n = WangProblem::pareto(theta, 8, 0.99, WangMode::Numeric).unwrap();
            for &c in &[1e-6, 1e-4, 8e-4] {
                let ha = wang_h(&a, c).unwrap();
                let hn = wang_h(&n, c).unwrap();
                // numeric h loses digits to the subtraction; compare on Ī's scale
                let scale = ibar(&a, c).unwrap();
                assert!(((ha - hn) / scale).abs() < 1e-10, "theta {theta} c {c}: {ha} vs {hn}");
            }
        }
    }

    #[test]
    fn wang_h_single_sign_change() {
        for &theta in &[0.5, 1.0, 2.0, 5.0] {
            for &d in &[8usize, 100] {
                for &alpha in &[0.9, 0.99, 0.999] {
                    let p = WangProblem::pareto(theta, d, alpha, WangMode::Analytic).unwrap();
                    // log-spaced: for large theta the root is far below any
                    // uniform grid step
                    let n = 10_000;
                    let c_max = p.c_max();
                    let mut changes = 0;
                    let mut prev = None;
                    for i in 0..n {
                        let c = c_max * 10f64.powf(-14.0 * (1.0 - i as f64 / n as f64));
                        let h = wang_h(&p, c).unwrap();
                        assert!(h.is_finite());
                        let s = h > 0.0;
                        if prev.is_some_and(|q| q != s) {
                            changes += 1;
                        }
                        prev = Some(s);
                    }
                    assert_eq!(changes, 1, "theta {theta} d {d} alpha {alpha}");
                }
            }
        }
    }

    #[test]
    fn wang_interval_examples() {
        let (_, c_u) = wang_interval_pareto(1.0, 0.99, 8).unwrap();
        assert!(rel(c_u, 0.01 / 11.0) < 1e-14);
        let (c_l, _) = wang_interval_pareto(0.5, 0.99, 8).unwrap();
        assert!(rel(c_l, 3.125e-4) < 1e-13);
        let (c_l, _) = wang_interval_pareto(2.0, 0.99, 8).unwrap();
        assert!(rel(2.0 * c_l, 0.01 / 88.0) < 1e-13);
    }

    #[test]
    fn wang_interval_brackets_root() {
        for &theta in &[0.1, 0.5, 0.9, 1.0, 1.1, 2.0, 5.0, 10.0] {
            for &d in &[3usize, 8, 100, 1000] {
                for &alpha in &[0.9, 0.99, 0.999] {
                    let p = WangProblem::pareto(theta, d, alpha, WangMode::Analytic).unwrap();
                    let (c_l, c_u) = p.c_interval();
                    let lo = wang_h(&p, c_l).unwrap();
                    let hi = wang_h(&p, c_u).unwrap();
                    assert!(lo < 0.0 && hi > 0.0, "theta {theta} d {d} alpha {alpha}: {lo} {hi}");
                }
            }
        }
    }

    #[test]
    fn wang_worst_var_consistency() {
        let p = WangProblem::pareto(2.0, 8, 0.99, WangMode::Analytic).unwrap();
        let out = worst_var_wang(&p).unwrap();
        assert!(out.discrepancy <= 1e-9);
        let tr = worst_var_wang_transformed(2.0, 0.99, 8).unwrap();
        assert!(rel(tr.value, out.value) <= 1e-8);
        let num = worst_var_wang(&WangProblem::pareto(2.0, 8, 0.99, WangMode::Numeric).unwrap()).unwrap();
        assert!(rel(num.value, out.value) <= 1e-8);
        let (lo, hi) = crude_var_bounds(&vec![par(2.0); 8], 0.99).unwrap();
        assert!(lo <= out.value && out.value <= hi);
    }

    #[test]
    fn wang_numeric_generic_margin() {
        let m = crate::margins::CustomMargin::new(
            "pareto2",
            |p: f64| (1.0 - p).powf(-0.5) - 1.0,
            |x: f64| (1.0 + x).powi(-2),
        )
        .with_finite_mean(true);
        let interval = wang_interval_pareto(2.0, 0.99, 8).unwrap();
        let p = WangProblem::numeric(Arc::new(m), 8, 0.99, interval).unwrap();
        let out = worst_var_wang(&p).unwrap();
        let reference = worst_var_wang_transformed(2.0, 0.99, 8).unwrap();
        assert!(rel(out.value, reference.value) < 1e-7);

        // the degenerate upper end (1 - alpha)/d is accepted via the override
        let p = p.with_interval(interval.0, 0.01 / 8.0).unwrap();
        let out = worst_var_wang(&p).unwrap();
        assert!(rel(out.value, reference.value) < 1e-7);
    }

    #[test]
    fn wang_monotone_in_alpha() {
        let mut prev = 0.0;
        for &alpha in &[0.9, 0.95, 0.99, 0.999] {
            let v = worst_var_wang(&WangProblem::pareto(2.0, 8, alpha, WangMode::Analytic).unwrap())
                .unwrap()
                .value;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn wang_steep_h_stays_finite() {
        let p = WangProblem::pareto(0.5, 100, 0.99, WangMode::Analytic).unwrap();
        for i in 1..=1000 {
            let c = p.c_max() * i as f64 / 1000.0;
            assert!(wang_h(&p, c).unwrap().is_finite());
        }
    }

    #[test]
    fn h2_anchors() {
        for &theta in &[0.1, 0.5, 1.0, 2.0, 5.0] {
            for &d in &[3usize, 8, 100] {
                assert!(h2(1.0, theta, d).abs() < 1e-10);
            }
        }
        assert!((h2_inflection(2.0, 8) - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(h2_inflection(1.0, 8), 4.0);
    }

    #[test]
    fn h2_matches_literal_and_wang_h() {
        for &theta in &[0.3, 0.5, 0.9, 1.1, 2.0, 5.0] {
            for &d in &[3usize, 8, 100] {
                for &x in &[1.5, 3.0, 10.0, 1e3] {
                    let lit = h2_literal(x, theta, d as f64);
                    let scale = x.max(d as f64 * x.powf(1.0 - 1.0 / theta).abs() / (1.0 - theta).abs());
                    assert!(((h2(x, theta, d) - lit) / scale).abs() < 1e-12, "theta {theta} d {d} x {x}");
                    // h2(x) = -d (x - 1) c^(1/theta) h(c) at c = x_to_c(x)
                    let p = WangProblem::pareto(theta, d, 0.99, WangMode::Analytic).unwrap();
                    let c = x_to_c(x, 0.99, d);
                    let via_h = -(d as f64) * (x - 1.0) * c.powf(1.0 / theta) * wang_h(&p, c).unwrap();
                    assert!(((h2(x, theta, d) - via_h) / scale).abs() < 1e-9);
                }
            }
        }
        // theta = 1 form equals x times the limit of h2
        let x: f64 = 7.5;
        let d = 8.0;
        let limit = -d * x.ln() + d - 2.0 - (d - 1.0) / x + x;
        assert!(rel(h2(x, 1.0, 8), x * limit) < 1e-14);
    }

    #[test]
    fn transformed_rejects_bad_input() {
        assert!(worst_var_wang_transformed(2.0, 0.99, 2).is_err());
        assert!(worst_var_wang_transformed(-1.0, 0.99, 8).is_err());
    }

    proptest! {
        #[test]
        fn c_x_round_trip(frac in 1e-9f64..0.999_999, alpha in 0.5f64..0.999, d in 3usize..1000) {
            let c = frac * (1.0 - alpha) / d as f64;
            let x = c_to_x(c, alpha, d);
            prop_assert!(x > 1.0);
            prop_assert!(rel(x_to_c(x, alpha, d), c) <= 1e-14);
        }

        #[test]
        fn worst_var_within_crude(theta in 0.3f64..6.0, d in 3usize..50, alpha in 0.9f64..0.999) {
            let out = worst_var_wang_transformed(theta, alpha, d).unwrap();
            let (lo, hi) = crude_var_bounds(&vec![par(theta); d], alpha).unwrap();
            prop_assert!(lo <= out.value && out.value <= hi);
            prop_assert!(out.discrepancy <= 1e-9);
        }
    }
}
