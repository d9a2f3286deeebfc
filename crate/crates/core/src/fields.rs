//! Regression fields, martingale-difference noise and predictable step sizes.
//!
//! A [`DriveField`] splits the random drive `Ψ_t(z) = R_t(z) + ε_t(z)` into
//! two calls: [`DriveField::observe`] draws the next observation `X_t` given
//! the record up to `t − 1`, and [`DriveField::psi`] evaluates `Ψ_t(z)` on it.
//! The noise draw `ε_t(z)` is the difference `Ψ_t(z) − R_t(z)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SaError};
use crate::history::ObservationRecord;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Generator used for every random draw. ChaCha8 keeps streams identical
/// across platforms and supports independent streams per replication.
pub type SimRng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn sim_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub trait DriveField: Send + Sync {
    /// Dimension m of the state z.
    fn dim(&self) -> usize;

    /// Width of one observation row.
    fn observation_width(&self) -> usize {
        1
    }

    /// Record at t = 0, before any observation is drawn.
    fn initial_record(&self) -> ObservationRecord {
        ObservationRecord::new(self.observation_width())
    }

    /// `R_t(z)`; may use `history` (rows up to `t − 1`) only.
    fn regression(&self, t: usize, z: &Vector, history: &ObservationRecord) -> Vector;

    /// Draws `X_t` into `out` (cleared first), given rows up to `t − 1`.
    /// Values are written in the record's current scale.
    fn observe(&self, t: usize, history: &ObservationRecord, rng: &mut SimRng, out: &mut Vec<f64>);

    /// `Ψ_t(z)` evaluated on the fresh observation `X_t`.
    fn psi(&self, t: usize, z: &Vector, history: &ObservationRecord, observation: &[f64]) -> Vector;

    /// Analytic `E{‖Ψ_t(z)‖² | F_{t−1}}`, when known.
    fn second_moment(&self, _t: usize, _z: &Vector, _history: &ObservationRecord) -> Option<f64> {
        None
    }

    /// Analytic `E{‖ε_t(z)‖² | F_{t−1}}`, when known.
    fn noise_second_moment(&self, _t: usize, _z: &Vector, _history: &ObservationRecord) -> Option<f64> {
        None
    }

    /// `R_t(z)` together with both analytic moments. Fields whose three
    /// quantities share expensive work override this.
    fn point_moments(&self, t: usize, z: &Vector, history: &ObservationRecord) -> PointMoments {
        PointMoments {
            r: self.regression(t, z, history),
            psi: self.second_moment(t, z, history),
            noise: self.noise_second_moment(t, z, history),
        }
    }

    /// True when `R_t` and the moments ignore the observation record.
    fn history_free(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMoments {
    pub r: Vector,
    /// `E{‖Ψ_t(z)‖² | F_{t−1}}`
    pub psi: Option<f64>,
    /// `E{‖ε_t(z)‖² | F_{t−1}}`
    pub noise: Option<f64>,
}

/// One evaluation of the drive at a frozen point.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiSample {
    pub psi: Vector,
    pub r: Vector,
    /// `psi − r`. The identity `psi = r + eps` holds up to one rounding.
    pub eps: Vector,
    pub observation: Vec<f64>,
}

fn finite_or_poisoned(t: usize, z: &Vector, v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SaError::Poisoned { t, z: z.iter().copied().collect(), what: what.into() })
    }
}

/// Draws `X_t` and returns `(Ψ_t(z), R_t(z), ε_t(z))`. The record is not
/// modified.
pub fn eval_psi(
    field: &dyn DriveField,
    t: usize,
    z: &Vector,
    history: &ObservationRecord,
    rng: &mut SimRng,
) -> Result<PsiSample> {
    let mut observation = Vec::with_capacity(field.observation_width());
    field.observe(t, history, rng, &mut observation);
    let psi = field.psi(t, z, history, &observation);
    finite_or_poisoned(t, z, &psi, "Ψ")?;
    let r = field.regression(t, z, history);
    finite_or_poisoned(t, z, &r, "R")?;
    let eps = &psi - &r;
    Ok(PsiSample { psi, r, eps, observation })
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MomentEstimate {
    /// |mean − target| in units of standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == target { 0.0 } else { f64::INFINITY }
        } else {
            (self.mean - target).abs() / self.std_error
        }
    }

    fn from_samples(samples: impl Iterator<Item = f64>) -> Self {
        // Welford
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for x in samples {
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self { mean, std_error: (var / n as f64).sqrt(), n }
    }
}

/// Which conditional second moment to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    /// `E{‖Ψ_t(z)‖²}`
    Psi,
    /// `E{‖ε_t(z)‖²}`
    Noise,
}

/// Sample mean of `‖Ψ_t(z)‖²` (or `‖ε_t(z)‖²`) over `n` redraws of `X_t`
/// from the same record.
pub fn second_moment_estimate(
    field: &dyn DriveField,
    t: usize,
    z: &Vector,
    history: &ObservationRecord,
    n: usize,
    which: Moment,
    rng: &mut SimRng,
) -> Result<MomentEstimate> {
    if n < 2 {
        return Err(SaError::invalid(format!("Monte Carlo sample size must be ≥ 2, got {n}")));
    }
    let r = field.regression(t, z, history);
    finite_or_poisoned(t, z, &r, "R")?;
    let mut obs = Vec::with_capacity(field.observation_width());
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        field.observe(t, history, rng, &mut obs);
        let psi = field.psi(t, z, history, &obs);
        let v = match which {
            Moment::Psi => psi.norm_squared(),
            Moment::Noise => (psi - &r).norm_squared(),
        };
        if !v.is_finite() {
            return Err(SaError::Poisoned {
                t,
                z: z.iter().copied().collect(),
                what: "second-moment sample".into(),
            });
        }
        samples.push(v);
    }
    Ok(MomentEstimate::from_samples(samples.into_iter()))
}

/// Step size at one time step: a scalar gain or an m×m gain matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum StepValue {
    Scalar(f64),
    Matrix(Matrix),
}

impl StepValue {
    /// `γ v`.
    pub fn apply(&self, v: &Vector) -> Vector {
        match self {
            StepValue::Scalar(g) => v * *g,
            StepValue::Matrix(m) => m * v,
        }
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            StepValue::Scalar(g) => Some(*g),
            StepValue::Matrix(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            StepValue::Scalar(g) => g.is_finite(),
            StepValue::Matrix(m) => m.iter().all(|x| x.is_finite()),
        }
    }
}

/// Predictable step size `γ_t(z)`.
pub trait StepSchedule: Send + Sync {
    /// May use `history` (rows up to `t − 1`) only.
    fn step(&self, t: usize, z: &Vector, history: &ObservationRecord) -> StepValue;

    fn describe(&self) -> String;
}

/// `γ_t = c / t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicStep {
    pub c: f64,
}

impl StepSchedule for HarmonicStep {
    fn step(&self, t: usize, _: &Vector, _: &ObservationRecord) -> StepValue {
        StepValue::Scalar(self.c / t as f64)
    }

    fn describe(&self) -> String {
        format!("{}/t", self.c)
    }
}

/// `γ_t = c / t^a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerStep {
    pub c: f64,
    pub exponent: f64,
}

impl StepSchedule for PowerStep {
    fn step(&self, t: usize, _: &Vector, _: &ObservationRecord) -> StepValue {
        StepValue::Scalar(self.c / (t as f64).powf(self.exponent))
    }

    fn describe(&self) -> String {
        format!("{}/t^{}", self.c, self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantStep {
    pub c: f64,
}

impl StepSchedule for ConstantStep {
    fn step(&self, _: usize, _: &Vector, _: &ObservationRecord) -> StepValue {
        StepValue::Scalar(self.c)
    }

    fn describe(&self) -> String {
        format!("constant {}", self.c)
    }
}

/// Constant gain matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixStep {
    pub gain: Matrix,
}

impl StepSchedule for MatrixStep {
    fn step(&self, _: usize, _: &Vector, _: &ObservationRecord) -> StepValue {
        StepValue::Matrix(self.gain.clone())
    }

    fn describe(&self) -> String {
        format!("matrix {}x{}", self.gain.nrows(), self.gain.ncols())
    }
}

/// Deterministic field `R(z) = −A (z − z⁰)` with optional additive Gaussian
/// noise of standard deviation `sigma` per component. Handy for tests and
/// as a template for user fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub gain: Matrix,
    pub root: Vector,
    pub sigma: f64,
}

impl LinearField {
    pub fn scalar(slope: f64, root: f64, sigma: f64) -> Self {
        Self {
            gain: Matrix::from_element(1, 1, slope),
            root: Vector::from_element(1, root),
            sigma,
        }
    }
}

impl DriveField for LinearField {
    fn dim(&self) -> usize {
        self.root.len()
    }

    fn observation_width(&self) -> usize {
        self.root.len()
    }

    fn regression(&self, _: usize, z: &Vector, _: &ObservationRecord) -> Vector {
        -(&self.gain * (z - &self.root))
    }

    fn observe(&self, _: usize, _: &ObservationRecord, rng: &mut SimRng, out: &mut Vec<f64>) {
        use rand_distr::{Distribution, StandardNormal};
        out.clear();
        for _ in 0..self.dim() {
            let x: f64 = if self.sigma > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
            out.push(self.sigma * x);
        }
    }

    fn psi(&self, t: usize, z: &Vector, history: &ObservationRecord, observation: &[f64]) -> Vector {
        self.regression(t, z, history) + Vector::from_column_slice(observation)
    }

    fn second_moment(&self, t: usize, z: &Vector, history: &ObservationRecord) -> Option<f64> {
        Some(self.regression(t, z, history).norm_squared() + self.sigma * self.sigma * self.dim() as f64)
    }

    fn noise_second_moment(&self, _: usize, _: &Vector, _: &ObservationRecord) -> Option<f64> {
        Some(self.sigma * self.sigma * self.dim() as f64)
    }

    fn history_free(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "linear"
    }
}
