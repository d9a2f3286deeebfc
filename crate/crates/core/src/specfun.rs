//! Digamma and trigamma on the positive half-line.
//!
//! Both functions shift the argument above [`ASYMPTOTIC_THRESHOLD`] with the
//! recurrences `ψ(x+1) = ψ(x) + 1/x` and `ψ'(x+1) = ψ'(x) − 1/x²`, then apply
//! the Bernoulli-number asymptotic expansions.

use std::fmt;

use thiserror::Error;

const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

/// B_{2k} / (2k) for k = 1..7.
const DIGAMMA_COEFFS: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2k} for k = 1..8.
const TRIGAMMA_COEFFS: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("argument {0} is outside (0, ∞)")]
pub struct DomainError(pub f64);

/// A strictly positive, finite real.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PositiveReal(f64);

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self, DomainError> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            Err(DomainError(value))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = DomainError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl fmt::Display for PositiveReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Digamma ψ(x) = d/dx log Γ(x).
pub fn digamma(x: PositiveReal) -> f64 {
    digamma_raw(x.0)
}

/// Trigamma ψ'(x) = d²/dx² log Γ(x).
pub fn trigamma(x: PositiveReal) -> f64 {
    trigamma_raw(x.0)
}

/// Unchecked digamma for hot loops. Returns NaN outside (0, ∞).
pub fn digamma_raw(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut shift = 0.0;
    let mut xx = x;
    while xx < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / xx;
        xx += 1.0;
    }
    let inv2 = 1.0 / (xx * xx);
    // Horner in 1/x²
    let mut series = 0.0;
    for &c in DIGAMMA_COEFFS.iter().rev() {
        series = series * inv2 + c;
    }
    series *= inv2;
    xx.ln() - 0.5 / xx - series - shift
}

/// Unchecked trigamma for hot loops. Returns NaN outside (0, ∞).
pub fn trigamma_raw(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut shift = 0.0;
    let mut xx = x;
    while xx < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / (xx * xx);
        xx += 1.0;
    }
    let inv = 1.0 / xx;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for &c in TRIGAMMA_COEFFS.iter().rev() {
        series = series * inv2 + c;
    }
    // 1/x + 1/(2x²) + Σ B_{2k} / x^{2k+1}
    let tail = inv + 0.5 * inv2 + series * inv2 * inv;
    tail + shift
}

/// Row of the bound-verification table printed by `specfun-check`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub x: f64,
    pub digamma: f64,
    pub trigamma: f64,
    /// 1/x
    pub lower: f64,
    /// (1+x)/x²
    pub upper: f64,
    pub ln_x: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub digamma_ok: bool,
}

impl BoundCheck {
    pub fn passed(&self) -> bool {
        self.lower_ok && self.upper_ok && self.digamma_ok
    }
}

/// Slack allowed on each inequality, relative to the bound.
pub const BOUND_SLACK: f64 = 1e-14;

/// Checks `1/x ≤ ψ'(x) ≤ (1+x)/x²` and `ψ(x) ≤ ln x` at one point.
pub fn check_bounds(x: PositiveReal) -> BoundCheck {
    let v = x.get();
    let dg = digamma(x);
    let tg = trigamma(x);
    let lower = 1.0 / v;
    let upper = (1.0 + v) / (v * v);
    let ln_x = v.ln();
    BoundCheck {
        x: v,
        digamma: dg,
        trigamma: tg,
        lower,
        upper,
        ln_x,
        lower_ok: tg >= lower * (1.0 - BOUND_SLACK),
        upper_ok: tg <= upper * (1.0 + BOUND_SLACK),
        digamma_ok: dg <= ln_x + BOUND_SLACK * ln_x.abs().max(1.0),
    }
}

/// `n` log-spaced points covering `[lo, hi]` inclusive.
pub fn log_grid(lo: PositiveReal, hi: PositiveReal, n: usize) -> Vec<PositiveReal> {
    let (a, b) = (lo.get().ln(), hi.get().ln());
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                let s = a + (b - a) * i as f64 / (n - 1) as f64;
                PositiveReal(s.exp())
            })
            .collect(),
    }
}
