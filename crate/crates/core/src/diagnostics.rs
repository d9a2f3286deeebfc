//! Runtime monitors for the convergence conditions.
//!
//! Everything here is finite-horizon evidence, not proof. Series get a
//! verdict from their growth over the last decade of t; suprema and infima
//! over continuous sets are taken on deterministic grids (dimension ≤ 3).
//! An infimum over an empty set is 1.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::SymmetricEigen;
use serde::Serialize;

use crate::convex::{ConvexRegion, RegionKind};
use crate::engine::{run_with, PreStep, Problem, RecordPlan, StepHook, StepOutcome, Trajectory};
use crate::error::{Result, SaError};
use crate::fields::{sim_rng, second_moment_estimate, DriveField, Matrix, Moment, SimRng, StepValue, Vector};
use crate::history::ObservationRecord;

/// Lyapunov function `V` with a global bound on `‖V''‖`.
pub trait Lyapunov: Send + Sync {
    fn value(&self, u: &Vector) -> f64;
    fn gradient(&self, u: &Vector) -> Vector;
    /// `sup_v ‖V''(v)‖`, supplied rather than estimated.
    fn hessian_sup(&self) -> f64;
    /// Norm radii `(a, b)` with `{lo ≤ V(u) ≤ hi} = {a ≤ ‖u‖ ≤ b}`, for
    /// radial V.
    fn level_radii(&self, _lo: f64, _hi: f64) -> Option<(f64, f64)> {
        None
    }
    fn name(&self) -> String;
}

/// `V(u) = uᵀu`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredNorm;

impl Lyapunov for SquaredNorm {
    fn value(&self, u: &Vector) -> f64 {
        u.norm_squared()
    }

    fn gradient(&self, u: &Vector) -> Vector {
        u * 2.0
    }

    fn hessian_sup(&self) -> f64 {
        2.0
    }

    fn level_radii(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        Some((lo.max(0.0).sqrt(), hi.sqrt()))
    }

    fn name(&self) -> String {
        "squared_norm".into()
    }
}

/// `V(u) = uᵀPu` for symmetric positive semidefinite P.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    p: Matrix,
    spectral: f64,
}

impl QuadraticForm {
    pub fn new(p: Matrix) -> Result<Self> {
        if !p.is_square() || (&p - p.transpose()).amax() > 1e-12 * p.amax().max(1.0) {
            return Err(SaError::invalid("quadratic form needs a symmetric matrix"));
        }
        let eig = SymmetricEigen::new(p.clone()).eigenvalues;
        if eig.iter().any(|&l| l < 0.0) {
            return Err(SaError::invalid("quadratic form must be positive semidefinite"));
        }
        let spectral = eig.amax();
        Ok(Self { p, spectral })
    }
}

impl Lyapunov for QuadraticForm {
    fn value(&self, u: &Vector) -> f64 {
        u.dot(&(&self.p * u))
    }

    fn gradient(&self, u: &Vector) -> Vector {
        (&self.p * u) * 2.0
    }

    fn hessian_sup(&self) -> f64 {
        2.0 * self.spectral
    }

    fn name(&self) -> String {
        format!("quadratic_form({}x{})", self.p.nrows(), self.p.ncols())
    }
}

#[inline]
pub fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}

/// Conditional moments from the field when analytic, else Monte Carlo on a
/// private stream so the trajectory's own draws are untouched.
#[derive(Debug, Clone)]
pub struct MomentSource {
    mc_n: usize,
    rng: SimRng,
    cache: HashMap<(usize, Vec<u64>, bool), f64>,
}

impl MomentSource {
    pub fn new(mc_n: usize, seed: u64, stream: u64) -> Self {
        Self { mc_n, rng: sim_rng(seed, stream), cache: HashMap::new() }
    }

    /// Analytic moments only; Monte Carlo requests fail.
    pub fn analytic_only() -> Self {
        Self::new(0, 0, 0)
    }

    fn clear(&mut self) {
        self.cache.clear();
    }

    fn monte_carlo(
        &mut self,
        field: &dyn DriveField,
        t: usize,
        z: &Vector,
        history: &ObservationRecord,
        which: Moment,
    ) -> Result<f64> {
        if self.mc_n == 0 {
            return Err(SaError::Diagnostics(format!(
                "field `{}` has no analytic second moment and Monte Carlo is disabled",
                field.name()
            )));
        }
        let key = (t, z.iter().map(|x| x.to_bits()).collect(), which == Moment::Noise);
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let est = second_moment_estimate(field, t, z, history, self.mc_n, which, &mut self.rng)?;
        self.cache.insert(key, est.mean);
        Ok(est.mean)
    }

    /// `E{‖Ψ_t(z)‖² | F_{t−1}}`
    pub fn psi(&mut self, field: &dyn DriveField, t: usize, z: &Vector, history: &ObservationRecord) -> Result<f64> {
        match field.second_moment(t, z, history) {
            Some(v) => Ok(v),
            None => self.monte_carlo(field, t, z, history, Moment::Psi),
        }
    }

    /// `E{‖ε_t(z)‖² | F_{t−1}}`
    pub fn noise(&mut self, field: &dyn DriveField, t: usize, z: &Vector, history: &ObservationRecord) -> Result<f64> {
        match field.noise_second_moment(t, z, history) {
            Some(v) => Ok(v),
            None => self.monte_carlo(field, t, z, history, Moment::Noise),
        }
    }

    /// `E{‖Γ Ψ_t(z)‖² | F_{t−1}}` for a gain matrix Γ; always Monte Carlo.
    pub fn gained(
        &mut self,
        field: &dyn DriveField,
        t: usize,
        z: &Vector,
        history: &ObservationRecord,
        gain: &Matrix,
    ) -> Result<f64> {
        if self.mc_n < 2 {
            return Err(SaError::Diagnostics("matrix steps need Monte Carlo (mc_n ≥ 2)".into()));
        }
        let mut obs = Vec::new();
        let mut sum = 0.0;
        for _ in 0..self.mc_n {
            field.observe(t, history, &mut self.rng, &mut obs);
            sum += (gain * field.psi(t, z, history, &obs)).norm_squared();
        }
        Ok(sum / self.mc_n as f64)
    }
}

/// `𝒩_t(u) = V'(u) γ_t(z⁰+u) R_t(z⁰+u) + ½ sup‖V''‖ E{‖γ_t Ψ_t(z⁰+u)‖² | F_{t−1}}`.
pub fn n_t(
    problem: &Problem,
    lyap: &dyn Lyapunov,
    root: &Vector,
    t: usize,
    u: &Vector,
    history: &ObservationRecord,
    moments: &mut MomentSource,
) -> Result<f64> {
    let z = root + u;
    let field = problem.field.as_ref();
    let step = problem.step.step(t, &z, history);
    let r = field.regression(t, &z, history);
    let drift = lyap.gradient(u).dot(&step.apply(&r));
    let second = match &step {
        StepValue::Scalar(g) => g * g * moments.psi(field, t, &z, history)?,
        StepValue::Matrix(m) => moments.gained(field, t, &z, history, m)?,
    };
    Ok(drift + 0.5 * lyap.hessian_sup() * second)
}

/// `𝒩_t(u)` for `V = ‖u‖²` and scalar γ: `2uᵀγR + γ² E‖Ψ‖²`.
pub fn n_t_closed_form(u: &Vector, gamma: f64, r: &Vector, psi_second_moment: f64) -> f64 {
    2.0 * gamma * u.dot(r) + gamma * gamma * psi_second_moment
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorConfig {
    /// Grid points per dimension.
    pub grid: usize,
    /// Half-width of the box used to grid unbounded regions.
    pub window: f64,
    /// Annulus parameters ε ∈ (0, 1).
    pub epsilons: Vec<f64>,
    /// Monte Carlo redraws per moment evaluation when no analytic form exists.
    pub mc_n: usize,
    /// Tail increment over the last decade below this fraction of the total:
    /// summable-looking.
    pub summable_tol: f64,
    /// Tail increment at or above this fraction: diverging.
    pub diverge_tol: f64,
    /// Evaluate the grid monitors (scalar steps only).
    pub grid_monitors: bool,
    /// Evaluate the annulus infima of `[𝒩_t]⁻`.
    pub lemma_infima: bool,
    /// Window probe uses widths `window · 10^k`, k = 0..=probe_decades.
    pub probe_decades: usize,
    /// Allowed oscillation of V(Δ_t) over the last decade, relative to sup V.
    pub rs_tol: f64,
    /// Slack for the sign condition, scaled by 1 + ‖z − z⁰‖².
    pub sign_tol: f64,
    /// Seed of the Monte Carlo stream.
    pub seed: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            grid: 2048,
            window: 50.0,
            epsilons: vec![0.3, 0.1, 0.03],
            mc_n: 1024,
            summable_tol: 1e-3,
            diverge_tol: 0.05,
            grid_monitors: true,
            lemma_infima: true,
            probe_decades: 4,
            rs_tol: 1e-2,
            sign_tol: 1e-12,
            seed: 0,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(SaError::Diagnostics(m));
        if self.grid < 2 {
            return bad(format!("grid needs ≥ 2 points per dimension, got {}", self.grid));
        }
        if self.grid_monitors && dim > 3 {
            return bad(format!("grid monitors support dimension ≤ 3, got {dim}"));
        }
        if !(self.window > 0.0) || !self.window.is_finite() {
            return bad(format!("window must be positive, got {}", self.window));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return bad(format!("epsilons must lie in (0, 1), got {:?}", self.epsilons));
        }
        if !(self.summable_tol > 0.0 && self.summable_tol < self.diverge_tol && self.diverge_tol < 1.0) {
            return bad(format!(
                "need 0 < summable_tol < diverge_tol < 1, got {} and {}",
                self.summable_tol, self.diverge_tol
            ));
        }
        if !(self.rs_tol > 0.0) || !(self.sign_tol >= 0.0) {
            return bad("rs_tol must be > 0 and sign_tol ≥ 0".into());
        }
        Ok(())
    }
}

/// Running series with one term per step.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub terms: Vec<f64>,
    pub partial: Vec<f64>,
}

impl Series {
    fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    fn push(&mut self, term: f64) {
        let prev = self.partial.last().copied().unwrap_or(0.0);
        self.terms.push(term);
        self.partial.push(prev + term);
    }

    pub fn total(&self) -> f64 {
        self.partial.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    SummableLooking,
    Diverging,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub name: String,
    pub total: f64,
    /// `S_T − S_{⌊T/10⌋}`: growth over the last decade of t.
    pub tail_increment: f64,
    /// Same increment relative to the total.
    pub tail_fraction: f64,
    pub verdict: Verdict,
}

/// Verdict from partial sums `S_1..S_T` (index `t − 1`).
pub fn series_verdict(name: &str, partial: &[f64], summable_tol: f64, diverge_tol: f64) -> SeriesSummary {
    let horizon = partial.len();
    let total = partial.last().copied().unwrap_or(0.0);
    let early = match horizon / 10 {
        0 => 0.0,
        k => partial[k - 1],
    };
    let tail = total - early;
    let tail_fraction = if total > 0.0 { tail / total } else { 0.0 };
    let verdict = if horizon < 10 {
        Verdict::Inconclusive
    } else if total == 0.0 || tail_fraction <= summable_tol {
        Verdict::SummableLooking
    } else if tail_fraction >= diverge_tol {
        Verdict::Diverging
    } else {
        Verdict::Inconclusive
    };
    SeriesSummary { name: name.into(), total, tail_increment: tail, tail_fraction, verdict }
}

/// Growth of the `r_t` supremum as the grid window widens.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowProbe {
    pub t: usize,
    pub windows: Vec<f64>,
    pub r_sup: Vec<f64>,
    /// Strictly increasing with no deceleration: the last increment is at
    /// least half the first.
    pub unbounded_growth: bool,
}

impl WindowProbe {
    fn assess(t: usize, windows: Vec<f64>, r_sup: Vec<f64>) -> Self {
        let inc: Vec<f64> = r_sup.windows(2).map(|w| w[1] - w[0]).collect();
        let unbounded_growth = !inc.is_empty()
            && inc.iter().all(|&d| d > 0.0)
            && inc[inc.len() - 1] >= 0.5 * inc[0];
        Self { t, windows, r_sup, unbounded_growth }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignSummary {
    pub points_checked: u64,
    pub violations: u64,
    /// Largest `(z − z⁰)ᵀR_t(z) / (1 + ‖z − z⁰‖²)` seen.
    pub max_scaled: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobbinsSiegmundCheck {
    /// Only meaningful when `Σ B_t` looks summable.
    pub applicable: bool,
    /// max − min of V(Δ_t) over the last decade.
    pub oscillation: f64,
    /// sup of V(Δ_t) over the run.
    pub reference: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub model: String,
    pub horizon: usize,
    pub lyapunov: String,
    pub config: MonitorConfig,
    /// `B_t` is the `s_plus` term.
    pub series: Vec<SeriesSummary>,
    pub sign_condition: Option<SignSummary>,
    pub window_truncated: bool,
    pub window_probe: Option<WindowProbe>,
    pub robbins_siegmund: RobbinsSiegmundCheck,
    pub final_v: f64,
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn series(&self, name: &str) -> Option<&SeriesSummary> {
        self.series.iter().find(|s| s.name == name)
    }

    /// The (CC) series diverges for every sampled ε.
    pub fn cc_diverging(&self) -> bool {
        let mut any = false;
        for s in self.series.iter().filter(|s| s.name.starts_with("nu_gamma@")) {
            any = true;
            if s.verdict != Verdict::Diverging {
                return false;
            }
        }
        any
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if lo == hi {
        return vec![lo];
    }
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Cartesian lattice of `n` points per axis on `[lo, hi]`.
fn lattice(lo: &Vector, hi: &Vector, n: usize) -> Vec<Vector> {
    let axes: Vec<Vec<f64>> = lo.iter().zip(hi.iter()).map(|(&a, &b)| linspace(a, b, n)).collect();
    let mut out = vec![Vector::zeros(lo.len())];
    for (d, axis) in axes.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for p in &out {
            for &x in axis {
                let mut q = p.clone();
                q[d] = x;
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Grid of `region ∩ [z⁰ − W, z⁰ + W]`; the flag reports whether the window
/// cut the region.
fn region_grid(region: &ConvexRegion, root: &Vector, window: f64, n: usize) -> (Vec<Vector>, bool) {
    let (blo, bhi) = region.bounding_box();
    let mut cut = false;
    let mut lo = blo.clone();
    let mut hi = bhi.clone();
    for i in 0..lo.len() {
        let (wl, wh) = (root[i] - window, root[i] + window);
        if blo[i] < wl {
            lo[i] = wl;
            cut = true;
        }
        if bhi[i] > wh {
            hi[i] = wh;
            cut = true;
        }
    }
    if (0..lo.len()).any(|i| lo[i] > hi[i]) {
        return (Vec::new(), cut);
    }
    let pts = lattice(&lo, &hi, n);
    let pts = match region.kind() {
        RegionKind::Ball { .. } => pts.into_iter().filter(|p| region.contains(p)).collect(),
        _ => pts,
    };
    (pts, cut)
}

/// Grid of `{z ∈ region : a ≤ ‖z − z⁰‖ ≤ b}`. In one dimension the two
/// segments are gridded directly.
fn annulus_grid(region: &ConvexRegion, root: &Vector, a: f64, b: f64, n: usize) -> Vec<Vector> {
    let (blo, bhi) = region.bounding_box();
    if root.len() == 1 {
        let z0 = root[0];
        let mut pts = Vec::new();
        for (lo, hi) in [(z0 - b, z0 - a), (z0 + a, z0 + b)] {
            let (lo, hi) = (lo.max(blo[0]), hi.min(bhi[0]));
            if lo <= hi {
                pts.extend(linspace(lo, hi, n).into_iter().map(|x| Vector::from_element(1, x)));
            }
        }
        return pts;
    }
    let lo = Vector::from_iterator(root.len(), (0..root.len()).map(|i| (root[i] - b).max(blo[i])));
    let hi = Vector::from_iterator(root.len(), (0..root.len()).map(|i| (root[i] + b).min(bhi[i])));
    if (0..lo.len()).any(|i| lo[i] > hi[i]) {
        return Vec::new();
    }
    lattice(&lo, &hi, n)
        .into_iter()
        .filter(|p| {
            let d = (p - root).norm();
            a <= d && d <= b && region.contains(p)
        })
        .collect()
}

/// Grid of `{z ∈ region : lo ≤ V(z − z⁰) ≤ hi}`.
fn level_set_grid(
    region: &ConvexRegion,
    root: &Vector,
    lyap: &dyn Lyapunov,
    lo: f64,
    hi: f64,
    window: f64,
    n: usize,
) -> Vec<Vector> {
    if let Some((a, b)) = lyap.level_radii(lo, hi) {
        return annulus_grid(region, root, a, b, n);
    }
    let (pts, _) = region_grid(region, root, window, n);
    pts.into_iter()
        .filter(|p| {
            let v = lyap.value(&(p - root));
            lo <= v && v <= hi
        })
        .collect()
}

fn is_power_of_ten(mut t: usize) -> bool {
    while t >= 10 && t.is_multiple_of(10) {
        t /= 10;
    }
    t == 1
}

struct PointEval {
    u: Vector,
    r: Vector,
    psi: f64,
    noise: f64,
}

/// Per-step monitor. Attach to a run as a [`StepHook`], then call
/// [`ConditionMonitor::report`].
pub struct ConditionMonitor {
    config: MonitorConfig,
    lyap: Arc<dyn Lyapunov>,
    root: Vector,
    moments: MomentSource,
    model: String,
    pub n: Series,
    pub s_plus: Series,
    pub s_minus: Series,
    pub v: Vec<f64>,
    pub inf_nminus: Vec<Series>,
    pub q_gamma: Series,
    pub r_gamma2: Series,
    pub e_gamma2: Series,
    pub nu_gamma: Vec<Series>,
    sign: SignSummary,
    window_truncated: bool,
    probe: Option<WindowProbe>,
}

impl std::fmt::Debug for ConditionMonitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConditionMonitor")
            .field("config", &self.config)
            .field("lyapunov", &self.lyap.name())
            .field("steps", &self.v.len())
            .finish()
    }
}

impl ConditionMonitor {
    pub fn new(problem: &Problem, lyap: Arc<dyn Lyapunov>, config: MonitorConfig, stream: u64) -> Result<Self> {
        let root = problem
            .root
            .clone()
            .ok_or_else(|| SaError::Diagnostics("monitors need the target z⁰".into()))?;
        config.validate(problem.dim())?;
        let eps_series = |prefix: &str| -> Vec<Series> {
            config.epsilons.iter().map(|e| Series::new(format!("{prefix}@{e}"))).collect()
        };
        Ok(Self {
            moments: MomentSource::new(config.mc_n, config.seed, stream),
            inf_nminus: eps_series("inf_nminus"),
            nu_gamma: eps_series("nu_gamma"),
            lyap,
            root,
            model: problem.name.clone(),
            n: Series::new("n"),
            s_plus: Series::new("s_plus"),
            s_minus: Series::new("s_minus"),
            v: Vec::new(),
            q_gamma: Series::new("q_gamma"),
            r_gamma2: Series::new("r_gamma2"),
            e_gamma2: Series::new("e_gamma2"),
            sign: SignSummary { points_checked: 0, violations: 0, max_scaled: f64::NEG_INFINITY, holds: true },
            window_truncated: false,
            probe: None,
            config,
        })
    }

    fn eval_point(
        &mut self,
        field: &dyn DriveField,
        t: usize,
        z: &Vector,
        history: &ObservationRecord,
        need_noise: bool,
    ) -> Result<PointEval> {
        let pm = field.point_moments(t, z, history);
        let psi = match pm.psi {
            Some(v) => v,
            None => self.moments.psi(field, t, z, history)?,
        };
        let noise = match (pm.noise, need_noise) {
            (Some(v), _) => v,
            (None, true) => self.moments.noise(field, t, z, history)?,
            (None, false) => f64::NAN,
        };
        Ok(PointEval { u: z - &self.root, r: pm.r, psi, noise })
    }

    /// `𝒩_t` at a grid point, reusing the point's moments.
    fn n_at(&mut self, problem: &Problem, t: usize, z: &Vector, history: &ObservationRecord, p: &PointEval) -> Result<f64> {
        match problem.step.step(t, z, history) {
            StepValue::Scalar(g) => {
                Ok(self.lyap.gradient(&p.u).dot(&(&p.r * g)) + 0.5 * self.lyap.hessian_sup() * g * g * p.psi)
            }
            StepValue::Matrix(m) => {
                let drift = self.lyap.gradient(&p.u).dot(&(&m * &p.r));
                let second = self.moments.gained(problem.field.as_ref(), t, z, history, &m)?;
                Ok(drift + 0.5 * self.lyap.hessian_sup() * second)
            }
        }
    }

    fn grid_step(&mut self, problem: &Problem, t: usize, gamma: f64, region: &ConvexRegion, history: &ObservationRecord) -> Result<()> {
        let field = problem.field.as_ref();
        let n = self.config.grid;
        let (pts, cut) = region_grid(region, &self.root, self.config.window, n);
        self.window_truncated |= cut;

        let (mut q, mut r, mut e) = (0.0f64, 0.0f64, 0.0f64);
        for z in &pts {
            let p = self.eval_point(field, t, z, history, true)?;
            let un2 = p.u.norm_squared();
            let denom = 1.0 + un2;
            let inner = p.u.dot(&p.r);
            q = q.max(pos(2.0 * inner + gamma * p.psi) / denom);
            r = r.max(p.r.norm_squared() / denom);
            e = e.max(p.noise / denom);
            let scaled = inner / denom;
            self.sign.points_checked += 1;
            self.sign.max_scaled = self.sign.max_scaled.max(scaled);
            if scaled > self.config.sign_tol {
                self.sign.violations += 1;
                self.sign.holds = false;
            }
        }
        self.q_gamma.push(q * gamma);
        self.r_gamma2.push(r * gamma * gamma);
        self.e_gamma2.push(e * gamma * gamma);

        for k in 0..self.config.epsilons.len() {
            let eps = self.config.epsilons[k];
            let ann = annulus_grid(region, &self.root, eps, 1.0 / eps, n);
            let nu = if ann.is_empty() {
                1.0
            } else {
                let mut inf = f64::INFINITY;
                for z in &ann {
                    let u = z - &self.root;
                    inf = inf.min(-u.dot(&field.regression(t, z, history)));
                }
                inf
            };
            // largest admissible ν_t ≥ 0; a negative infimum contributes nothing
            self.nu_gamma[k].push(pos(nu) * gamma);
        }

        if !region.is_bounded() && is_power_of_ten(t) {
            self.window_probe(problem, t, region, history)?;
        }
        Ok(())
    }

    /// Runs at t = 1, 10, 100, … on unbounded regions; keeps the latest.
    fn window_probe(&mut self, problem: &Problem, t: usize, region: &ConvexRegion, history: &ObservationRecord) -> Result<()> {
        let field = problem.field.as_ref();
        let mut windows = Vec::new();
        let mut sups = Vec::new();
        for k in 0..=self.config.probe_decades {
            let w = self.config.window * 10f64.powi(k as i32);
            let (pts, _) = region_grid(region, &self.root, w, self.config.grid);
            let mut r = 0.0f64;
            for z in &pts {
                let u = z - &self.root;
                r = r.max(field.regression(t, z, history).norm_squared() / (1.0 + u.norm_squared()));
            }
            windows.push(w);
            sups.push(r);
        }
        self.probe = Some(WindowProbe::assess(t, windows, sups));
        Ok(())
    }

    fn lemma_infima(&mut self, problem: &Problem, t: usize, region: &ConvexRegion, history: &ObservationRecord) -> Result<()> {
        let field = problem.field.as_ref();
        for k in 0..self.config.epsilons.len() {
            let eps = self.config.epsilons[k];
            let pts = level_set_grid(
                region,
                &self.root,
                self.lyap.as_ref(),
                eps,
                1.0 / eps,
                self.config.window,
                self.config.grid,
            );
            let inf = if pts.is_empty() {
                1.0
            } else {
                let mut inf = f64::INFINITY;
                for z in &pts {
                    let p = self.eval_point(field, t, z, history, false)?;
                    inf = inf.min(neg(self.n_at(problem, t, z, history, &p)?));
                }
                inf
            };
            self.inf_nminus[k].push(inf);
        }
        Ok(())
    }

    pub fn report(&self) -> ConditionReport {
        let c = &self.config;
        let verdict = |s: &Series| series_verdict(&s.name, &s.partial, c.summable_tol, c.diverge_tol);
        let mut series = vec![verdict(&self.s_plus), verdict(&self.s_minus)];
        if c.lemma_infima {
            series.extend(self.inf_nminus.iter().map(verdict));
        }
        let grid = !self.q_gamma.terms.is_empty();
        if grid {
            series.push(verdict(&self.q_gamma));
            series.push(verdict(&self.r_gamma2));
            series.push(verdict(&self.e_gamma2));
            series.extend(self.nu_gamma.iter().map(verdict));
        }

        let horizon = self.v.len();
        let tail = &self.v[(horizon / 10).min(horizon)..];
        let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let oscillation = if tail.is_empty() { 0.0 } else { hi - lo };
        let reference = self.v.iter().copied().fold(0.0, f64::max);
        let applicable = series[0].verdict == Verdict::SummableLooking;
        let robbins_siegmund = RobbinsSiegmundCheck {
            applicable,
            oscillation,
            reference,
            passed: !applicable || oscillation <= c.rs_tol * reference.max(f64::MIN_POSITIVE),
        };

        let mut notes = vec![
            "verdicts are finite-horizon evidence; the annulus conditions are sampled at finitely many ε".to_owned(),
        ];
        if self.window_truncated {
            notes.push(format!("unbounded regions were gridded on z⁰ ± {}", c.window));
        }
        ConditionReport {
            model: self.model.clone(),
            horizon,
            lyapunov: self.lyap.name(),
            config: c.clone(),
            series,
            sign_condition: grid.then(|| self.sign.clone()),
            window_truncated: self.window_truncated,
            window_probe: self.probe.clone(),
            robbins_siegmund,
            final_v: self.v.last().copied().unwrap_or(0.0),
            notes,
        }
    }

    /// Per-step monitor terms as CSV.
    pub fn to_csv(&self) -> String {
        use crate::engine::fmt_f64;
        let mut cols: Vec<String> = ["t", "n", "s_plus", "s_minus", "v"].iter().map(|s| s.to_string()).collect();
        let infima = self.config.lemma_infima;
        if infima {
            cols.extend(self.inf_nminus.iter().map(|s| s.name.clone()));
        }
        let grid = !self.q_gamma.terms.is_empty();
        if grid {
            for s in [&self.q_gamma, &self.r_gamma2, &self.e_gamma2] {
                cols.push(s.name.clone());
            }
            cols.extend(self.nu_gamma.iter().map(|s| s.name.clone()));
        }
        let mut out = cols.join(",");
        out.push('\n');
        for i in 0..self.v.len() {
            let mut row = vec![(i + 1).to_string()];
            row.push(fmt_f64(self.n.terms[i]));
            row.push(fmt_f64(self.s_plus.partial[i]));
            row.push(fmt_f64(self.s_minus.partial[i]));
            row.push(fmt_f64(self.v[i]));
            if infima {
                row.extend(self.inf_nminus.iter().map(|s| fmt_f64(s.partial[i])));
            }
            if grid {
                for s in [&self.q_gamma, &self.r_gamma2, &self.e_gamma2] {
                    row.push(fmt_f64(s.partial[i]));
                }
                row.extend(self.nu_gamma.iter().map(|s| fmt_f64(s.partial[i])));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

impl StepHook for ConditionMonitor {
    fn before_update(&mut self, problem: &Problem, pre: &PreStep<'_>) -> Result<()> {
        self.moments.clear();
        let t = pre.t;
        let u = pre.z_prev - &self.root;
        let root = self.root.clone();
        let n = n_t(problem, self.lyap.as_ref(), &root, t, &u, pre.history, &mut self.moments)?;
        let v_prev = self.lyap.value(&u);
        self.n.push(n);
        self.s_plus.push(pos(n) / (1.0 + v_prev));
        self.s_minus.push(neg(n));

        // U_{t−1}; at t = 1 the schedule's first region stands in for U_0
        let first;
        let region = match pre.region_prev {
            Some(r) => r,
            None => {
                first = problem
                    .schedule
                    .region(1, pre.history)
                    .map_err(|source| SaError::Schedule { t, source })?;
                &first
            }
        };
        if self.config.lemma_infima {
            self.lemma_infima(problem, t, region, pre.history)?;
        }
        if self.config.grid_monitors {
            let gamma = pre.step.as_scalar().ok_or_else(|| {
                SaError::Diagnostics("grid monitors need a scalar step; disable grid_monitors".into())
            })?;
            self.grid_step(problem, t, gamma, region, pre.history)?;
        }
        Ok(())
    }

    fn after_update(&mut self, _: &Problem, outcome: &StepOutcome<'_>) -> Result<()> {
        self.v.push(self.lyap.value(&(outcome.z_post - &self.root)));
        Ok(())
    }

    fn diag_columns(&self) -> Vec<String> {
        vec!["n".into(), "s_plus".into(), "s_minus".into(), "v".into()]
    }

    fn diag_values(&self) -> Vec<f64> {
        vec![
            self.n.terms.last().copied().unwrap_or(0.0),
            self.s_plus.total(),
            self.s_minus.total(),
            self.v.last().copied().unwrap_or(0.0),
        ]
    }
}

/// Runs `problem` with a [`ConditionMonitor`] attached.
#[allow(clippy::too_many_arguments)]
pub fn diagnose(
    problem: &Problem,
    z0: Vector,
    horizon: usize,
    seed: u64,
    stream: u64,
    plan: &RecordPlan,
    lyap: Arc<dyn Lyapunov>,
    config: MonitorConfig,
) -> Result<(Trajectory, ConditionMonitor)> {
    let mut monitor = ConditionMonitor::new(problem, lyap, config, stream)?;
    let traj = run_with(problem, z0, horizon, seed, stream, plan, &mut monitor)?;
    Ok((traj, monitor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::TruncationSchedule;
    use crate::fields::{ConstantStep, HarmonicStep, LinearField};
    use crate::models::{make_ar1_example, make_polynomial_example, NoiseKind, PolySchedule};
    use nalgebra::dvector;
    use rand::Rng;

    #[test]
    fn positive_and_negative_parts() {
        for x in [-3.5, -0.0, 0.0, 1e-300, 7.0] {
            assert_eq!(pos(x) - neg(x), x);
            assert!(pos(x) >= 0.0 && neg(x) >= 0.0);
        }
    }

    #[test]
    fn squared_norm_gradient_matches_finite_differences() {
        let mut rng = sim_rng(1, 0);
        let q = QuadraticForm::new(Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let lyaps: [&dyn Lyapunov; 2] = [&SquaredNorm, &q];
        for lyap in lyaps {
            for _ in 0..100 {
                let u = dvector![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                assert!(lyap.value(&u) >= 0.0);
                let g = lyap.gradient(&u);
                let h = 1e-5;
                for i in 0..2 {
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (lyap.value(&up) - lyap.value(&dn)) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-6f64.max(1e-4 * g.norm()));
                }
            }
        }
        assert!(QuadraticForm::new(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
    }

    #[test]
    fn n_t_vanishing_drift_at_root() {
        let p = Problem::new(
            Arc::new(LinearField::scalar(1.0, 0.0, 0.5)),
            Arc::new(ConstantStep { c: 0.3 }),
            TruncationSchedule::unrestricted(1).unwrap(),
        );
        let h = p.field.initial_record();
        let mut m = MomentSource::analytic_only();
        let n = n_t(&p, &SquaredNorm, &dvector![0.0], 1, &dvector![0.0], &h, &mut m).unwrap();
        assert!((n - 0.09 * 0.25).abs() < 1e-17);
    }

    #[test]
    fn n_t_deterministic_linear() {
        // −2cu² + c²u² with c = 1, u = 1
        let p = Problem::new(
            Arc::new(LinearField::scalar(1.0, 0.0, 0.0)),
            Arc::new(ConstantStep { c: 1.0 }),
            TruncationSchedule::unrestricted(1).unwrap(),
        );
        let h = p.field.initial_record();
        let mut m = MomentSource::analytic_only();
        let n = n_t(&p, &SquaredNorm, &dvector![0.0], 1, &dvector![1.0], &h, &mut m).unwrap();
        assert_eq!(n, -1.0);
        assert_eq!(n_t_closed_form(&dvector![1.0], 1.0, &dvector![-1.0], 1.0), -1.0);
    }

    #[test]
    fn n_t_ar1_closed_form() {
        let p = make_ar1_example(0.5, 1.0).unwrap();
        let h = ObservationRecord::with_rows(1, &[0.0, 1.2, -0.7]);
        let i_hat = 1.0 + 1.2f64.powi(2) + 0.49;
        let x2 = 0.49;
        let mut m = MomentSource::analytic_only();
        for u in [-2.0, -0.1, 0.0, 0.3, 4.0] {
            let n = n_t(&p, &SquaredNorm, &dvector![0.5], 4, &dvector![u], &h, &mut m).unwrap();
            let expect = -2.0 / i_hat * x2 * u * u + x2 * x2 * u * u / (i_hat * i_hat) + x2 / (i_hat * i_hat);
            assert!((n - expect).abs() < 1e-14, "{u}: {n} vs {expect}");
        }
    }

    #[test]
    fn verdicts() {
        let summable: Vec<f64> = (1..=10_000).scan(0.0, |s, t| {
            *s += 1.0 / (t as f64).powi(3);
            Some(*s)
        }).collect();
        assert_eq!(series_verdict("a", &summable, 1e-3, 0.05).verdict, Verdict::SummableLooking);
        let harmonic: Vec<f64> = (1..=10_000).scan(0.0, |s, t| {
            *s += 1.0 / t as f64;
            Some(*s)
        }).collect();
        assert_eq!(series_verdict("b", &harmonic, 1e-3, 0.05).verdict, Verdict::Diverging);
        assert_eq!(series_verdict("c", &[0.0; 20], 1e-3, 0.05).verdict, Verdict::SummableLooking);
        assert_eq!(series_verdict("d", &[1.0; 5], 1e-3, 0.05).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn fixed_point_run_is_all_zero() {
        let p = Problem::new(
            Arc::new(LinearField::scalar(1.0, 0.0, 0.0)),
            Arc::new(HarmonicStep { c: 1.0 }),
            TruncationSchedule::fixed(ConvexRegion::interval(-5.0, 5.0).unwrap()),
        )
        .with_root(dvector![0.0]);
        let config = MonitorConfig { grid: 16, ..MonitorConfig::default() };
        let (_, mon) = diagnose(&p, dvector![0.0], 50, 0, 0, &RecordPlan::Every(10), Arc::new(SquaredNorm), config).unwrap();
        assert_eq!(mon.s_plus.total(), 0.0);
        assert!(mon.v.iter().all(|&v| v == 0.0));
        assert!(mon.n.terms.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn polynomial_grid_bounds() {
        // l = 3, z⁰ = 0: r_t ≤ 4^l α^{2l}; ν_t = ε^{l+1} up to grid resolution
        let p = make_polynomial_example(3, 0.0, 1.0, NoiseKind::Gaussian, PolySchedule::Power { c: 10.0, delta: 0.1 })
            .unwrap();
        let config = MonitorConfig { grid: 257, ..MonitorConfig::default() };
        let eps = config.epsilons.clone();
        let (_, mon) = diagnose(&p, dvector![0.5], 200, 3, 0, &RecordPlan::Every(50), Arc::new(SquaredNorm), config).unwrap();
        for t in 1..=200usize {
            let alpha = 10.0 * ((t.max(2) - 1) as f64).powf(1.0 / 6.0 - 0.1);
            let gamma = 1.0 / t as f64;
            let r = mon.r_gamma2.terms[t - 1] / (gamma * gamma);
            assert!(r <= 4f64.powi(3) * alpha.powi(6) * (1.0 + 1e-12), "t={t}");
            for (k, e) in eps.iter().enumerate() {
                let nu = mon.nu_gamma[k].terms[t - 1] / gamma;
                assert!((nu - e.powi(4)).abs() <= 1e-12, "t={t} ε={e}: {nu}");
            }
        }
        let report = mon.report();
        assert!(report.sign_condition.unwrap().holds);
    }

    #[test]
    fn config_validation() {
        let p = make_ar1_example(0.5, 1.0).unwrap();
        let bad = MonitorConfig { grid: 1, ..MonitorConfig::default() };
        assert!(ConditionMonitor::new(&p, Arc::new(SquaredNorm), bad, 0).is_err());
        let bad = MonitorConfig { epsilons: vec![1.5], ..MonitorConfig::default() };
        assert!(ConditionMonitor::new(&p, Arc::new(SquaredNorm), bad, 0).is_err());
        let no_root = Problem { root: None, ..p };
        assert!(ConditionMonitor::new(&no_root, Arc::new(SquaredNorm), MonitorConfig::default(), 0).is_err());
    }

    #[test]
    fn high_dimension_grid_refused() {
        let field = LinearField {
            gain: Matrix::identity(4, 4),
            root: Vector::zeros(4),
            sigma: 0.0,
        };
        let p = Problem::new(Arc::new(field), Arc::new(HarmonicStep { c: 1.0 }), TruncationSchedule::unrestricted(4).unwrap())
            .with_root(Vector::zeros(4));
        assert!(ConditionMonitor::new(&p, Arc::new(SquaredNorm), MonitorConfig::default(), 0).is_err());
        let lemma_only = MonitorConfig { grid_monitors: false, grid: 3, ..MonitorConfig::default() };
        assert!(ConditionMonitor::new(&p, Arc::new(SquaredNorm), lemma_only, 0).is_ok());
    }

    #[test]
    fn probe_times() {
        let hits: Vec<usize> = (1..=2000).filter(|&t| is_power_of_ten(t)).collect();
        assert_eq!(hits, vec![1, 10, 100, 1000]);
    }

    #[test]
    fn annulus_grid_respects_region() {
        let region = ConvexRegion::interval(0.5, 100.0).unwrap();
        let pts = annulus_grid(&region, &dvector![2.0], 0.1, 10.0, 11);
        assert!(pts.iter().all(|p| region.contains(p)));
        let d: Vec<f64> = pts.iter().map(|p| (p[0] - 2.0).abs()).collect();
        assert!(d.iter().all(|&x| (0.1 - 1e-12..=10.0 + 1e-12).contains(&x)));
        assert_eq!(pts.first().unwrap()[0], 0.5);
        let ball = ConvexRegion::ball(dvector![0.0, 0.0], 1.0).unwrap();
        let pts = annulus_grid(&ball, &dvector![0.0, 0.0], 0.5, 2.0, 41);
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|p| ball.contains(p) && p.norm() >= 0.5));
        let far = annulus_grid(&ball, &dvector![10.0, 0.0], 0.1, 1.0, 11);
        assert!(far.is_empty());
    }
}
