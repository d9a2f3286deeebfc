//! Recursive maximum likelihood for the shape of Gamma(θ, 1).
//!
//! With `i(u) = ψ'(u)` the Fisher information, the estimator
//! `θ̂_t = [θ̂_{t−1} + (ln X_t − ψ(θ̂_{t−1})) / (t ψ'(θ̂_{t−1}))]` truncated to
//! `[α_t, β_t]` is the engine with `γ_t = 1/t` and
//! `Ψ_t(u) = (ln X_t − ψ(u)) / ψ'(u)`.

use std::sync::Arc;

use nalgebra::dvector;
use rand_distr::{Distribution, Gamma};

use crate::convex::{expanding_interval_schedule, ExpandingKind};
use crate::engine::Problem;
use crate::error::{Result, SaError};
use crate::fields::{DriveField, HarmonicStep, PointMoments, SimRng, Vector};
use crate::history::ObservationRecord;
use crate::specfun::{digamma, digamma_raw, trigamma, trigamma_raw, PositiveReal};

/// `X_t ~ Gamma(θ, 1)`; observations are the raw `X_t`.
#[derive(Debug, Clone)]
pub struct GammaField {
    theta: f64,
    digamma_theta: f64,
    trigamma_theta: f64,
    sampler: Gamma<f64>,
}

impl GammaField {
    pub fn new(theta: f64) -> Result<Self> {
        let th = PositiveReal::new(theta)?;
        let sampler = Gamma::new(theta, 1.0).map_err(|e| SaError::invalid(e.to_string()))?;
        Ok(Self { theta, digamma_theta: digamma(th), trigamma_theta: trigamma(th), sampler })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `(R(u), E‖Ψ(u)‖², E‖ε(u)‖²)`; NaN outside `u > 0`.
    pub fn moments_at(&self, u: f64) -> (f64, f64, f64) {
        let d = self.digamma_theta - digamma_raw(u);
        let i = trigamma_raw(u);
        let i2 = i * i;
        (d / i, (self.trigamma_theta + d * d) / i2, self.trigamma_theta / i2)
    }
}

impl DriveField for GammaField {
    fn dim(&self) -> usize {
        1
    }

    fn regression(&self, _: usize, z: &Vector, _: &ObservationRecord) -> Vector {
        dvector![self.moments_at(z[0]).0]
    }

    fn observe(&self, _: usize, _: &ObservationRecord, rng: &mut SimRng, out: &mut Vec<f64>) {
        out.clear();
        out.push(self.sampler.sample(rng));
    }

    fn psi(&self, _: usize, z: &Vector, _: &ObservationRecord, observation: &[f64]) -> Vector {
        let u = z[0];
        dvector![(observation[0].ln() - digamma_raw(u)) / trigamma_raw(u)]
    }

    fn second_moment(&self, _: usize, z: &Vector, _: &ObservationRecord) -> Option<f64> {
        Some(self.moments_at(z[0]).1)
    }

    fn noise_second_moment(&self, _: usize, z: &Vector, _: &ObservationRecord) -> Option<f64> {
        Some(self.moments_at(z[0]).2)
    }

    fn point_moments(&self, _: usize, z: &Vector, _: &ObservationRecord) -> PointMoments {
        let (r, psi, noise) = self.moments_at(z[0]);
        PointMoments { r: dvector![r], psi: Some(psi), noise: Some(noise) }
    }

    fn history_free(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "gamma"
    }
}

/// Exponents of the bound family `α_t = C₁ ln(t+2)^{−a}`, `β_t = C₂ (t+2)^b`
/// (`b = None` for `β_t = ∞`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBounds {
    pub alpha_log_exponent: f64,
    pub beta_power: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaScheduleCheck {
    /// `Σ α_{t−1}² / t = ∞`
    pub alpha_series_diverges: bool,
    /// `Σ (ln² α_{t−1} + ln² β_{t−1}) / t² < ∞`
    pub log_series_converges: bool,
}

impl GammaScheduleCheck {
    pub fn holds(&self) -> bool {
        self.alpha_series_diverges && self.log_series_converges
    }
}

/// Symbolic check of the two series for the bound family.
/// `Σ 1/(t ln^{2a} t)` diverges iff `2a ≤ 1`; `ln² α` grows like
/// `(ln ln t)²` and `ln² β` like `ln² t`, both summable against `t^{−2}`
/// while finite.
pub fn gamma_schedule_check(bounds: GammaBounds) -> GammaScheduleCheck {
    let a = bounds.alpha_log_exponent;
    GammaScheduleCheck {
        alpha_series_diverges: a >= 0.0 && 2.0 * a <= 1.0,
        log_series_converges: matches!(bounds.beta_power, Some(b) if b.is_finite()),
    }
}

/// The bounds used by [`make_gamma_example`].
pub const GAMMA_BOUNDS: GammaBounds = GammaBounds { alpha_log_exponent: 0.5, beta_power: Some(1.0) };

/// Bundle with `γ_t = 1/t`, `α_t = C₁ ln(t+2)^{−1/2}`, `β_t = C₂ (t+2)`.
pub fn make_gamma_example(theta: f64, c1: f64, c2: f64) -> Result<Problem> {
    let field = GammaField::new(theta)?;
    let schedule = expanding_interval_schedule(ExpandingKind::LogSqrtInverse, &[c1, c2])?;
    Ok(Problem::new(Arc::new(field), Arc::new(HarmonicStep { c: 1.0 }), schedule)
        .with_root(dvector![theta])
        .named("gamma"))
}

/// Same as [`make_gamma_example`] with `β_t = ∞`. Fails the growth
/// condition on `R`; used to demonstrate the failure.
pub fn make_gamma_unbounded_example(theta: f64, c1: f64) -> Result<Problem> {
    let field = GammaField::new(theta)?;
    let schedule = expanding_interval_schedule(ExpandingKind::LogSqrtInverseLower, &[c1])?;
    Ok(Problem::new(Arc::new(field), Arc::new(HarmonicStep { c: 1.0 }), schedule)
        .with_root(dvector![theta])
        .named("gamma_unbounded"))
}
