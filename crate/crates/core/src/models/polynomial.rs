//! Odd-degree polynomial root finding: `R(z) = −(z − z⁰)^l` observed with
//! additive state-free noise, truncated to `[−α_t, α_t]`.

use std::sync::Arc;

use nalgebra::dvector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::convex::{expanding_interval_schedule, ExpandingKind};
use crate::engine::Problem;
use crate::error::{Result, SaError};
use crate::fields::{DriveField, HarmonicStep, SimRng, Vector};
use crate::history::ObservationRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian,
    /// Laplace with the same variance as the Gaussian.
    Laplace,
    /// Student t with `df > 2`, rescaled to unit variance before `σ`.
    StudentT { df: f64 },
    /// Gaussian with `σ_t² = σ² ln t`: unbounded variances that still keep
    /// `Σ σ_t² γ_t²` finite for `γ_t = 1/t`.
    GrowingLog,
}

impl NoiseKind {
    pub fn parse(name: &str, df: Option<f64>) -> Result<Self> {
        match name {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "laplace" => Ok(NoiseKind::Laplace),
            "student_t" => {
                let df = df.ok_or_else(|| SaError::invalid("student_t noise needs model.params.df"))?;
                Ok(NoiseKind::StudentT { df })
            }
            "growing_log" => Ok(NoiseKind::GrowingLog),
            other => Err(SaError::invalid(format!("unknown noise kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Laplace => "laplace",
            NoiseKind::StudentT { .. } => "student_t",
            NoiseKind::GrowingLog => "growing_log",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolynomialField {
    degree: i32,
    root: f64,
    sigma: f64,
    noise: NoiseKind,
    student: Option<StudentT<f64>>,
}

impl PolynomialField {
    pub fn new(degree: u32, root: f64, sigma: f64, noise: NoiseKind) -> Result<Self> {
        if degree.is_multiple_of(2) {
            return Err(SaError::invalid(format!("degree must be odd, got {degree}")));
        }
        if !root.is_finite() {
            return Err(SaError::invalid("root must be finite"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(SaError::invalid(format!("noise sigma must be ≥ 0, got {sigma}")));
        }
        let student = match noise {
            NoiseKind::StudentT { df } => {
                if !(df > 2.0) {
                    return Err(SaError::invalid(format!("student_t needs df > 2, got {df}")));
                }
                Some(StudentT::new(df).map_err(|e| SaError::invalid(e.to_string()))?)
            }
            _ => None,
        };
        Ok(Self { degree: degree as i32, root, sigma, noise, student })
    }

    pub fn degree(&self) -> u32 {
        self.degree as u32
    }

    /// Noise variance at step t.
    pub fn variance(&self, t: usize) -> f64 {
        let s2 = self.sigma * self.sigma;
        match self.noise {
            NoiseKind::GrowingLog => s2 * (t as f64).ln(),
            _ => s2,
        }
    }

    fn r(&self, z: f64) -> f64 {
        -(z - self.root).powi(self.degree)
    }

    fn unit_draw(&self, rng: &mut SimRng) -> f64 {
        match self.noise {
            NoiseKind::Gaussian | NoiseKind::GrowingLog => StandardNormal.sample(rng),
            NoiseKind::Laplace => {
                // inverse CDF with scale 1/√2 (unit variance)
                let u: f64 = rng.random::<f64>() - 0.5;
                let b = std::f64::consts::FRAC_1_SQRT_2;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseKind::StudentT { df } => {
                let x = self.student.as_ref().expect("validated").sample(rng);
                x * ((df - 2.0) / df).sqrt()
            }
        }
    }
}

impl DriveField for PolynomialField {
    fn dim(&self) -> usize {
        1
    }

    fn regression(&self, _: usize, z: &Vector, _: &ObservationRecord) -> Vector {
        dvector![self.r(z[0])]
    }

    /// `X_t` is the noise draw itself.
    fn observe(&self, t: usize, _: &ObservationRecord, rng: &mut SimRng, out: &mut Vec<f64>) {
        out.clear();
        let sd = self.variance(t).sqrt();
        out.push(if sd > 0.0 { sd * self.unit_draw(rng) } else { 0.0 });
    }

    fn psi(&self, _: usize, z: &Vector, _: &ObservationRecord, observation: &[f64]) -> Vector {
        dvector![self.r(z[0]) + observation[0]]
    }

    fn second_moment(&self, t: usize, z: &Vector, _: &ObservationRecord) -> Option<f64> {
        Some(self.r(z[0]).powi(2) + self.variance(t))
    }

    fn noise_second_moment(&self, t: usize, _: &Vector, _: &ObservationRecord) -> Option<f64> {
        Some(self.variance(t))
    }

    fn history_free(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "poly"
    }
}

/// Truncation bound family for the polynomial example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolySchedule {
    /// `α_t = C t^{1/(2l) − δ}`
    Power { c: f64, delta: f64 },
    /// `α_t = C ln(t + 2)`; the shift keeps `α_1 > 0`.
    Log { c: f64 },
}

/// Outcome of the symbolic summability check for `γ_t = c/t^a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summability {
    /// `Σ γ_t = ∞`
    pub step_diverges: bool,
    /// `Σ α_{t−1}^{2l} γ_t² < ∞`
    pub bound_sum_converges: bool,
    /// `Σ σ_t² γ_t² < ∞`
    pub noise_sum_converges: bool,
}

impl Summability {
    pub fn holds(&self) -> bool {
        self.step_diverges && self.bound_sum_converges && self.noise_sum_converges
    }
}

/// Decides the three series by comparison with `Σ t^{−p}` and
/// `Σ (ln t)^k t^{−p}`, which converge iff `p > 1`.
pub fn polynomial_summability(degree: u32, schedule: PolySchedule, step_exponent: f64) -> Summability {
    let a = step_exponent;
    let l = degree as f64;
    let step_diverges = a > 0.0 && a <= 1.0;
    let bound_sum_converges = match schedule {
        // α^{2l}γ² ~ t^{2l(1/(2l) − δ) − 2a} = t^{1 − 2lδ − 2a}
        PolySchedule::Power { delta, .. } => 2.0 * a - (1.0 - 2.0 * l * delta) > 1.0,
        // (ln t)^{2l} t^{−2a}
        PolySchedule::Log { .. } => 2.0 * a > 1.0,
    };
    // every noise kind has σ_t² constant or ~ ln t
    let noise_sum_converges = 2.0 * a > 1.0;
    Summability { step_diverges, bound_sum_converges, noise_sum_converges }
}

/// Bundle with `γ_t = 1/t` and truncation `[−α_t, α_t]`.
pub fn make_polynomial_example(
    degree: u32,
    root: f64,
    sigma: f64,
    noise: NoiseKind,
    schedule: PolySchedule,
) -> Result<Problem> {
    let field = PolynomialField::new(degree, root, sigma, noise)?;
    let trunc = match schedule {
        PolySchedule::Power { c, delta } => {
            expanding_interval_schedule(ExpandingKind::Power, &[c, degree as f64, delta])?
        }
        PolySchedule::Log { c } => expanding_interval_schedule(ExpandingKind::Log, &[c, 2.0])?,
    };
    let check = polynomial_summability(degree, schedule, 1.0);
    if !check.holds() {
        return Err(SaError::invalid(format!("schedule fails the summability conditions: {check:?}")));
    }
    Ok(Problem::new(Arc::new(field), Arc::new(HarmonicStep { c: 1.0 }), trunc)
        .with_root(dvector![root])
        .named("poly"))
}
