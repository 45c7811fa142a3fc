//! Standard normal special functions and one-sided truncated-normal moments.
//!
//! Everything here is expressed through the inverse Mills ratio
//! `φ(t)/Φ(t)`. Below `t = -8` the ratio comes from a continued fraction
//! instead of dividing two vanishing numbers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Below this argument the continued fraction replaces `φ/Φ`.
const CF_SWITCH: f64 = -8.0;
const CF_TERMS: usize = 120;

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `Φ(-x) / φ(x)` for `x > 0`, by backward evaluation of
/// `1/(x + 1/(x + 2/(x + 3/(x + ...))))`.
fn upper_tail_mills(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=CF_TERMS).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

/// Inverse Mills ratio `φ(t)/Φ(t)`. Positive for every finite `t`.
pub fn inv_mills(t: f64) -> f64 {
    if t < CF_SWITCH {
        1.0 / upper_tail_mills(-t)
    } else {
        pdf(t) / cdf(t)
    }
}

/// `ln Φ(t)`, accurate in both tails.
pub fn log_cdf(t: f64) -> f64 {
    if t < CF_SWITCH {
        -0.5 * t * t - 0.5 * (2.0 * PI).ln() + upper_tail_mills(-t).ln()
    } else if t > 0.0 {
        (-0.5 * libm::erfc(t * FRAC_1_SQRT_2)).ln_1p()
    } else {
        cdf(t).ln()
    }
}

/// Moments of a unit-variance normal with location `loc`, truncated to
/// `z > 0` when `positive` and to `z <= 0` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub variance: f64,
    /// `ln Φ(s·loc)`, the log probability of the kept half-line.
    pub log_mass: f64,
    pub entropy: f64,
}

impl TruncatedMoments {
    pub fn new(loc: f64, positive: bool) -> Self {
        let s = if positive { 1.0 } else { -1.0 };
        let t = s * loc;
        let ratio = inv_mills(t);
        let log_mass = log_cdf(t);
        let variance = (1.0 - ratio * (ratio + t)).max(0.0);
        Self {
            mean: loc + s * ratio,
            variance,
            log_mass,
            entropy: 0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_mass - 0.5 * t * ratio,
        }
    }
}
