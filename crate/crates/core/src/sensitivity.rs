//! Partial identification under bounded contamination: identified sets,
//! Imbens–Manski intervals and breakdown points.

use serde::{Deserialize, Serialize};


use crate::error::{Error, Result};

const MAX_ITER: usize = 200;

/// Standard normal CDF, `Φ(x) = erfc(−x/√2) / 2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile by bisection on `Φ`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile level {p} must lie in (0, 1)")));
    }
    bisect(|x| normal_cdf(x) - p, -40.0, 40.0, 1e-15)
}

/// Finds a root of an increasing `f` on `[lo, hi]` where `f(lo) ≤ 0 ≤ f(hi)`.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, width: f64) -> Result<f64> {
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= width * (1.0 + mid.abs()) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::NoConvergence(format!("bisection did not reach width {width} on [{lo}, {hi}]")))
}

/// `[β̂ − b̄, β̂ − b̲]`.
pub fn identified_set(beta_hat: f64, b_lower: f64, b_upper: f64) -> Result<[f64; 2]> {
    if b_lower > b_upper {
        return Err(Error::InvertedBounds { lower: b_lower, upper: b_upper });
    }
    Ok([beta_hat - b_upper, beta_hat - b_lower])
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(())
}

/// Solves `Φ(B/se + C) − Φ(−C) = 1 − α` for `C ∈ [z_{1−α}, z_{1−α/2}]`.
pub fn imbens_manski_constant(b_len: f64, se: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(b_len >= 0.0) || !b_len.is_finite() {
        return Err(Error::Domain(format!("set length must be nonnegative, got {b_len}")));
    }
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::Domain(format!("standard error must be positive, got {se}")));
    }
    let x = b_len / se;
    let lo = normal_quantile(1.0 - alpha)?;
    let hi = normal_quantile(1.0 - alpha / 2.0)?;
    let f = |c: f64| normal_cdf(x + c) - normal_cdf(-c) - (1.0 - alpha);
    if f(lo) >= 0.0 {
        return Ok(lo);
    }
    if f(hi) <= 0.0 {
        return Ok(hi);
    }
    let c = bisect(f, lo, hi, 1e-15)?;
    let resid = f(c).abs();
    if resid >= 1e-10 {
        return Err(Error::NoConvergence(format!("Imbens-Manski residual {resid:e} at C = {c}")));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImForm {
    /// `β̂ ± C·se`.
    #[default]
    Symmetric,
    /// `[β̂ − b̄ − C·se, β̂ − b̲ + C·se]`.
    Bracketing,
}

impl std::str::FromStr for ImForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "bracketing" => Ok(Self::Bracketing),
            other => Err(Error::Config(format!("unknown interval form `{other}` (expected symmetric or bracketing)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityResult {
    pub beta_hat: f64,
    pub std_error: f64,
    pub b_lower: f64,
    pub b_upper: f64,
    pub bound_lower: f64,
    pub bound_upper: f64,
    pub im_constant: f64,
    pub im_form: ImForm,
    pub im_interval: [f64; 2],
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown_point: Option<f64>,
}

pub fn imbens_manski_interval(
    beta_hat: f64,
    se: f64,
    b_lower: f64,
    b_upper: f64,
    alpha: f64,
    form: ImForm,
) -> Result<SensitivityResult> {
    let [bound_lower, bound_upper] = identified_set(beta_hat, b_lower, b_upper)?;
    let c = imbens_manski_constant(b_upper - b_lower, se, alpha)?;
    let im_interval = match form {
        ImForm::Symmetric => [beta_hat - c * se, beta_hat + c * se],
        ImForm::Bracketing => [bound_lower - c * se, bound_upper + c * se],
    };
    Ok(SensitivityResult {
        beta_hat,
        std_error: se,
        b_lower,
        b_upper,
        bound_lower,
        bound_upper,
        im_constant: c,
        im_form: form,
        im_interval,
        alpha,
        null_value: None,
        breakdown_point: None,
    })
}

/// Smallest `b ≥ 0` such that the bracketing interval for the contamination
/// set `[−b, b]` contains `null_value`.
///
/// The bracketing half-width `b + C(2b/se)·se` is strictly increasing in `b`
/// because `dC/dx > −1/2`, so bisection on `[0, |β̂ − null|]` applies.
pub fn breakdown_point(beta_hat: f64, se: f64, alpha: f64, null_value: f64) -> Result<f64> {
    let d = (beta_hat - null_value).abs();
    let reach = |b: f64| -> Result<f64> { Ok(b + imbens_manski_constant(2.0 * b, se, alpha)? * se) };
    if reach(0.0)? >= d {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = d;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if reach(mid)? >= d {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + d) {
            return Ok(hi);
        }
    }
    Err(Error::NoConvergence("breakdown search".into()))
}
