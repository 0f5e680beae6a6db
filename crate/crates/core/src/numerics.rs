//! Scalar kernels: bracketed root finding and adaptive quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Tolerance used for root finding unless stated otherwise (`2^-52`).
pub const DEFAULT_ROOT_TOLERANCE: f64 = 2.2204e-16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("invalid root bracket [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("function value {fx} at x = {x} is not finite")]
    NonFinite { x: f64, fx: f64 },

    #[error("root finding did not converge; best bracket [{lo}, {hi}], best estimate {best}")]
    NotConverged { lo: f64, hi: f64, best: f64 },
}

/// Settings for [`find_root`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootConfig {
    /// Absolute tolerance on `x`. The effective tolerance also carries a
    /// `4 * EPSILON * |x|` term so that tiny tolerances stay meaningful for
    /// large roots.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Use this value instead of evaluating `f(lo)`.
    pub f_lower: Option<f64>,
    /// Use this value instead of evaluating `f(hi)`.
    pub f_upper: Option<f64>,
}

impl Default for RootConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_ROOT_TOLERANCE,
            max_iterations: 1000,
            f_lower: None,
            f_upper: None,
        }
    }
}

impl RootConfig {
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_f_lower(mut self, value: f64) -> Self {
        self.f_lower = Some(value);
        self
    }

    pub fn with_f_upper(mut self, value: f64) -> Self {
        self.f_upper = Some(value);
        self
    }
}

/// Finds a root of `f` in `[lo, hi]` with Brent's method.
///
/// The bracket is maintained throughout: every iterate keeps a sign change
/// between the returned point and the other end of the current bracket.
pub fn find_root<F>(mut f: F, lo: f64, hi: f64, cfg: &RootConfig) -> Result<f64, RootError>
where
    F: FnMut(f64) -> f64,
{
    try_find_root(|x| Ok::<_, RootError>(f(x)), lo, hi, cfg)
}

/// [`find_root`] for fallible objectives; the first error returned by `f`
/// aborts the search and is passed through.
pub fn try_find_root<F, E>(mut f: F, lo: f64, hi: f64, cfg: &RootConfig) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
    E: From<RootError>,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(RootError::InvalidInterval { lo, hi }.into());
    }
    if !(cfg.tolerance > 0.0) || cfg.max_iterations == 0 {
        return Err(RootError::InvalidInterval { lo, hi }.into());
    }
    let mut eval = |x: f64| -> Result<f64, E> {
        let fx = f(x)?;
        if fx.is_finite() {
            Ok(fx)
        } else {
            Err(RootError::NonFinite { x, fx }.into())
        }
    };

    let mut a = lo;
    let mut b = hi;
    let mut fa = match cfg.f_lower {
        Some(v) => v,
        None => eval(a)?,
    };
    let mut fb = match cfg.f_upper {
        Some(v) => v,
        None => eval(b)?,
    };
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(RootError::NoBracket { lo, hi, f_lo: fa, f_hi: fb }.into());
    }

    let tol = cfg.tolerance;
    let mut c = a;
    let mut fc = fa;
    for _ in 0..cfg.max_iterations {
        let prev_step = b - a;
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol_act = 2.0 * f64::EPSILON * b.abs() + tol / 2.0;
        let mut new_step = (c - b) / 2.0;
        if new_step.abs() <= tol_act || fb == 0.0 {
            return Ok(b);
        }

        if prev_step.abs() >= tol_act && fa.abs() > fb.abs() {
            let cb = c - b;
            let (mut p, mut q);
            if a == c {
                // secant
                let t1 = fb / fa;
                p = cb * t1;
                q = 1.0 - t1;
            } else {
                // inverse quadratic interpolation
                let qq = fa / fc;
                let t1 = fb / fc;
                let t2 = fb / fa;
                p = t2 * (cb * qq * (qq - t1) - (b - a) * (t1 - 1.0));
                q = (qq - 1.0) * (t1 - 1.0) * (t2 - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if p < 0.75 * cb * q - (tol_act * q).abs() / 2.0 && p < (prev_step * q / 2.0).abs() {
                new_step = p / q;
            }
        }

        if new_step.abs() < tol_act {
            new_step = if new_step > 0.0 { tol_act } else { -tol_act };
        }
        a = b;
        fa = fb;
        b += new_step;
        fb = eval(b)?;
        if (fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0) {
            c = a;
            fc = fa;
        }
    }
    Err(RootError::NotConverged { lo: b.min(c), hi: b.max(c), best: b }.into())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("invalid integration interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },

    #[error("integrand value {fx} at x = {x} is not finite")]
    NonFinite { x: f64, fx: f64 },

    #[error("quadrature did not reach the requested accuracy: estimate {estimate}, error bound {error_bound}")]
    NotConverged { estimate: f64, error_bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub rel_tolerance: f64,
    pub abs_tolerance: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-10,
            abs_tolerance: 0.0,
            max_subdivisions: 1000,
        }
    }
}

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
// Digits kept as published.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Segment, QuadError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut eval = |x: f64| {
        let fx = f(x);
        if fx.is_finite() {
            Ok(fx)
        } else {
            Err(QuadError::NonFinite { x, fx })
        }
    };

    let fc = eval(center)?;
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx)?;
        let f2 = eval(center + dx)?;
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut error = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Segment { a, b, value, error })
}

/// Integrates `f` over `[a, b]` with globally adaptive 15-point
/// Gauss-Kronrod quadrature.
///
/// Subdivision stops once the summed error estimate is below
/// `max(abs_tolerance, rel_tolerance * |estimate|)`. Segments that can no
/// longer be bisected in floating point keep their error in the total.
pub fn integrate<F>(mut f: F, a: f64, b: f64, cfg: &QuadConfig) -> Result<f64, QuadError>
where
    F: FnMut(f64) -> f64,
{
    if !(a <= b) || !a.is_finite() || !b.is_finite() {
        return Err(QuadError::InvalidInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }

    let first = kronrod15(&mut f, a, b)?;
    let mut total = first.value;
    let mut total_err = first.error;
    let mut frozen_err = 0.0;
    let mut frozen_value = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut segments = 1;

    loop {
        let target = cfg.abs_tolerance.max(cfg.rel_tolerance * total.abs());
        if total_err <= target {
            break;
        }
        let Some(worst) = heap.pop() else {
            // only unsplittable segments remain
            return Err(QuadError::NotConverged { estimate: total, error_bound: total_err });
        };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            frozen_value += worst.value;
            frozen_err += worst.error;
            continue;
        }
        if segments >= cfg.max_subdivisions {
            return Err(QuadError::NotConverged { estimate: total, error_bound: total_err });
        }
        let left = kronrod15(&mut f, worst.a, mid)?;
        let right = kronrod15(&mut f, mid, worst.b)?;
        segments += 1;
        heap.push(left);
        heap.push(right);

        // resum to avoid drift from repeated add/subtract
        total = frozen_value + heap.iter().map(|s| s.value).sum::<f64>();
        total_err = frozen_err + heap.iter().map(|s| s.error).sum::<f64>();
    }
    Ok(total)
}
