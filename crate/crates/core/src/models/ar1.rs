//! AR(1) least squares: `X_t = θ X_{t−1} + ξ_t` and the recursive estimator
//! `θ̂_t = θ̂_{t−1} + Î_t^{−1} X_{t−1}(X_t − θ̂_{t−1} X_{t−1})`,
//! `Î_t = Î_{t−1} + X_{t−1}²`, run untruncated.
//!
//! Explosive parameters (|θ| > 1) overflow f64 after a few thousand steps, so
//! the field works in the observation record's power-of-two scale. Products
//! such as `Î_t^{−1} Ψ_t` are scale-free, and a rescale is an exact power of
//! two, so for non-explosive data nothing differs from plain arithmetic.

use std::sync::Arc;

use nalgebra::dvector;
use rand_distr::{Distribution, StandardNormal};

use crate::convex::TruncationSchedule;
use crate::engine::{PreStep, Problem, StepHook};
use crate::error::{Result, SaError};
use crate::fields::{DriveField, SimRng, StepSchedule, StepValue, Vector};
use crate::history::{ldexp, ObservationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Innovation {
    StandardNormal,
    /// `ξ ≡ 0`
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Field {
    pub theta: f64,
    pub x0: f64,
    pub innovation: Innovation,
}

impl Ar1Field {
    /// `X_{t−1}` in the record's current scale.
    fn x_prev(history: &ObservationRecord) -> f64 {
        history.last(0).expect("AR record always holds X_0")
    }
}

impl DriveField for Ar1Field {
    fn dim(&self) -> usize {
        1
    }

    fn initial_record(&self) -> ObservationRecord {
        ObservationRecord::with_rows(1, &[self.x0])
    }

    fn regression(&self, _: usize, z: &Vector, history: &ObservationRecord) -> Vector {
        let x = Self::x_prev(history);
        dvector![x * x * (self.theta - z[0])]
    }

    fn observe(&self, _: usize, history: &ObservationRecord, rng: &mut SimRng, out: &mut Vec<f64>) {
        out.clear();
        let xi: f64 = match self.innovation {
            Innovation::StandardNormal => StandardNormal.sample(rng),
            Innovation::Zero => 0.0,
        };
        out.push(self.theta * Self::x_prev(history) + ldexp(xi, -history.scale_exp()));
    }

    fn psi(&self, _: usize, z: &Vector, history: &ObservationRecord, observation: &[f64]) -> Vector {
        let x_prev = Self::x_prev(history);
        dvector![x_prev * (observation[0] - z[0] * x_prev)]
    }

    fn second_moment(&self, _: usize, z: &Vector, history: &ObservationRecord) -> Option<f64> {
        let x = Self::x_prev(history);
        let d = self.theta - z[0];
        Some(x.powi(4) * d * d + self.noise_part(history))
    }

    fn noise_second_moment(&self, _: usize, _: &Vector, history: &ObservationRecord) -> Option<f64> {
        Some(self.noise_part(history))
    }

    fn name(&self) -> &str {
        "ar1"
    }
}

impl Ar1Field {
    /// `E{(X_{t−1} ξ_t)²} = X_{t−1}²`, in the squared record scale.
    fn noise_part(&self, history: &ObservationRecord) -> f64 {
        match self.innovation {
            Innovation::StandardNormal => {
                let x = Self::x_prev(history);
                ldexp(x * x, -2 * history.scale_exp())
            }
            Innovation::Zero => 0.0,
        }
    }
}

/// `γ_t = Î_t^{−1}` with `Î_t = Î_0 + Σ_{s<t} X_s²`, in the record scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseInformationStep {
    pub i0: f64,
}

impl InverseInformationStep {
    /// `Î_t` in the record's squared scale.
    pub fn information_scaled(&self, history: &ObservationRecord) -> f64 {
        ldexp(self.i0, -2 * history.scale_exp()) + history.square_sum(0)
    }
}

impl StepSchedule for InverseInformationStep {
    fn step(&self, _: usize, _: &Vector, history: &ObservationRecord) -> StepValue {
        StepValue::Scalar(1.0 / self.information_scaled(history))
    }

    fn describe(&self) -> String {
        format!("1/I_t, I_0 = {}", self.i0)
    }
}

/// `Î_t` in true units (may be +∞ for explosive data).
pub fn information(i0: f64, history: &ObservationRecord) -> f64 {
    let s = history.scale_exp();
    ldexp(ldexp(i0, -2 * s) + history.square_sum(0), 2 * s)
}

pub fn make_ar1_example(theta: f64, i0: f64) -> Result<Problem> {
    make_ar1_with(theta, i0, 0.0, Innovation::StandardNormal)
}

pub fn make_ar1_with(theta: f64, i0: f64, x0: f64, innovation: Innovation) -> Result<Problem> {
    if !(i0 > 0.0) || !i0.is_finite() {
        return Err(SaError::invalid(format!("I_0 must be > 0, got {i0}")));
    }
    if !theta.is_finite() || !x0.is_finite() {
        return Err(SaError::invalid("θ and X_0 must be finite"));
    }
    let field = Ar1Field { theta, x0, innovation };
    Ok(Problem::new(
        Arc::new(field),
        Arc::new(InverseInformationStep { i0 }),
        TruncationSchedule::unrestricted(1)?,
    )
    .with_root(dvector![theta])
    .named("ar1"))
}

/// Partial sums of `Î_t^{−1} X_{t−1}²` (must diverge) and
/// `Î_t^{−2} X_{t−1}²` (must converge), sampled at chosen steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InformationMonitor {
    checkpoints: Vec<usize>,
    inverse_sum: f64,
    inverse_square_sum: f64,
    /// `(t, Σ Î⁻¹X², Σ Î⁻²X²)` at each checkpoint reached.
    pub samples: Vec<(usize, f64, f64)>,
}

impl InformationMonitor {
    pub fn new(mut checkpoints: Vec<usize>) -> Self {
        checkpoints.sort_unstable();
        checkpoints.dedup();
        Self { checkpoints, ..Self::default() }
    }

    pub fn sums(&self) -> (f64, f64) {
        (self.inverse_sum, self.inverse_square_sum)
    }

    pub fn at(&self, t: usize) -> Option<(f64, f64)> {
        self.samples.iter().find(|s| s.0 == t).map(|s| (s.1, s.2))
    }
}

impl StepHook for InformationMonitor {
    fn before_update(&mut self, _: &Problem, pre: &PreStep<'_>) -> Result<()> {
        let gamma = pre.step.as_scalar().ok_or_else(|| SaError::Contract("scalar step expected".into()))?;
        let x = pre.history.last(0).unwrap_or(0.0);
        let x2 = x * x;
        // γX² is scale-free; γ²X² carries one inverse squared scale
        self.inverse_sum += gamma * x2;
        self.inverse_square_sum += ldexp(gamma * gamma * x2, -2 * pre.history.scale_exp());
        if self.checkpoints.binary_search(&pre.t).is_ok() {
            self.samples.push((pre.t, self.inverse_sum, self.inverse_square_sum));
        }
        Ok(())
    }

    fn diag_columns(&self) -> Vec<String> {
        vec!["inv_info_sum".into(), "inv_info_sq_sum".into()]
    }

    fn diag_values(&self) -> Vec<f64> {
        vec![self.inverse_sum, self.inverse_square_sum]
    }
}
