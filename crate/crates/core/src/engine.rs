//! The truncated recursion `Z_t = [Z_{t−1} + γ_t(Z_{t−1}) Ψ_t(Z_{t−1})]_{U_t}`.
//!
//! Within one step every quantity is evaluated at the frozen point `Z_{t−1}`:
//! the step size is computed from the record up to `t − 1`, then `X_t` is
//! drawn and `Ψ_t` evaluated, then `X_t` is appended and `U_t` generated from
//! the extended record. `Z_0` need not lie in any region; the first
//! projection happens at `t = 1`.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::convex::{ConvexRegion, TruncationSchedule};
use crate::error::{Result, SaError};
use crate::fields::{sim_rng, DriveField, SimRng, StepSchedule, StepValue, Vector};
use crate::history::ObservationRecord;

/// Drive, step size and truncation schedule, plus the target when known.
#[derive(Clone)]
pub struct Problem {
    pub field: Arc<dyn DriveField>,
    pub step: Arc<dyn StepSchedule>,
    pub schedule: TruncationSchedule,
    pub root: Option<Vector>,
    pub name: String,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("field", &self.field.name())
            .field("step", &self.step.describe())
            .field("schedule", &self.schedule)
            .field("root", &self.root)
            .finish()
    }
}

impl Problem {
    pub fn new(
        field: Arc<dyn DriveField>,
        step: Arc<dyn StepSchedule>,
        schedule: TruncationSchedule,
    ) -> Self {
        let name = field.name().to_owned();
        Self { field, step, schedule, root: None, name }
    }

    pub fn with_root(mut self, root: Vector) -> Self {
        self.root = Some(root);
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }
}

/// State after `t` steps.
#[derive(Debug, Clone)]
pub struct SaState {
    pub t: usize,
    pub z: Vector,
    pub history: ObservationRecord,
    pub rng: SimRng,
    /// `U_t`; `None` before the first step.
    pub region: Option<ConvexRegion>,
    /// Number of truncated steps so far.
    pub truncations: u64,
}

impl SaState {
    pub fn new(problem: &Problem, z0: Vector, rng: SimRng) -> Result<Self> {
        if z0.len() != problem.dim() {
            return Err(SaError::Contract(format!(
                "initial value has dimension {}, field has {}",
                z0.len(),
                problem.dim()
            )));
        }
        if !z0.iter().all(|x| x.is_finite()) {
            return Err(SaError::invalid("initial value must be finite"));
        }
        Ok(Self {
            t: 0,
            z: z0,
            history: problem.field.initial_record(),
            rng,
            region: None,
            truncations: 0,
        })
    }
}

/// What a hook sees before `X_t` is drawn.
#[derive(Debug)]
pub struct PreStep<'a> {
    pub t: usize,
    pub z_prev: &'a Vector,
    /// Record up to `t − 1`.
    pub history: &'a ObservationRecord,
    pub step: &'a StepValue,
    /// `U_{t−1}`; `None` at `t = 1`.
    pub region_prev: Option<&'a ConvexRegion>,
}

/// What a hook sees after `Z_t` is formed.
#[derive(Debug)]
pub struct StepOutcome<'a> {
    pub t: usize,
    pub z_prev: &'a Vector,
    pub z_pre: &'a Vector,
    pub z_post: &'a Vector,
    pub truncated: bool,
    pub step_norm: f64,
    pub region: &'a ConvexRegion,
    /// Record up to `t`.
    pub history: &'a ObservationRecord,
}

/// Per-step observer. Monitors plug in here so they see exactly the frozen
/// quantities the update used.
pub trait StepHook {
    fn before_update(&mut self, _problem: &Problem, _pre: &PreStep<'_>) -> Result<()> {
        Ok(())
    }

    fn after_update(&mut self, _problem: &Problem, _outcome: &StepOutcome<'_>) -> Result<()> {
        Ok(())
    }

    /// Extra trajectory columns, without the `diag_` prefix.
    fn diag_columns(&self) -> Vec<String> {
        Vec::new()
    }

    /// Values for [`StepHook::diag_columns`] at the latest step.
    fn diag_values(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Hook that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHook;

impl StepHook for NoHook {}

/// Result of one step, apart from the new state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub t: usize,
    pub z_pre: Vector,
    pub truncated: bool,
    pub step_norm: f64,
}

fn poisoned(t: usize, z: &Vector, what: &str) -> SaError {
    SaError::Poisoned { t, z: z.iter().copied().collect(), what: what.into() }
}

/// Advances `state` by one step.
pub fn sa_step(problem: &Problem, state: &mut SaState, hook: &mut dyn StepHook) -> Result<StepReport> {
    let t = state.t + 1;
    let field = problem.field.as_ref();

    let step = problem.step.step(t, &state.z, &state.history);
    if !step.is_finite() {
        return Err(poisoned(t, &state.z, "step size"));
    }
    if let StepValue::Scalar(g) = step {
        if g < 0.0 {
            return Err(SaError::Contract(format!("negative scalar step {g} at t = {t}")));
        }
    }
    hook.before_update(
        problem,
        &PreStep {
            t,
            z_prev: &state.z,
            history: &state.history,
            step: &step,
            region_prev: state.region.as_ref(),
        },
    )?;

    let mut observation = Vec::with_capacity(field.observation_width());
    field.observe(t, &state.history, &mut state.rng, &mut observation);
    let psi = field.psi(t, &state.z, &state.history, &observation);
    let increment = step.apply(&psi);
    let z_pre = &state.z + &increment;
    if !z_pre.iter().all(|x| x.is_finite()) {
        return Err(poisoned(t, &state.z, "pre-truncation point"));
    }

    state.history.push(&observation);
    let region = problem
        .schedule
        .region(t, &state.history)
        .map_err(|source| SaError::Schedule { t, source })?;
    let z_post = region.project(&z_pre)?;
    let truncated = !region.contains(&z_pre);
    let step_norm = increment.norm();

    hook.after_update(
        problem,
        &StepOutcome {
            t,
            z_prev: &state.z,
            z_pre: &z_pre,
            z_post: &z_post,
            truncated,
            step_norm,
            region: &region,
            history: &state.history,
        },
    )?;

    state.t = t;
    state.z = z_post;
    state.region = Some(region);
    state.truncations += truncated as u64;
    Ok(StepReport { t, z_pre, truncated, step_norm })
}

/// Which steps to keep in a [`Trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub enum RecordPlan {
    /// Every n-th step plus the final one.
    Every(usize),
    /// Exactly these steps (sorted, deduplicated), plus the final one.
    At(Vec<usize>),
}

impl RecordPlan {
    fn wants(&self, t: usize, horizon: usize) -> bool {
        t == horizon
            || match self {
                RecordPlan::Every(n) => t.is_multiple_of(*n),
                RecordPlan::At(ts) => ts.binary_search(&t).is_ok(),
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub z: Vector,
    pub pre: Vector,
    pub truncated: bool,
    pub step_norm: f64,
    /// Truncated steps in `1..=t`.
    pub truncations: u64,
    pub diag: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub z0: Vector,
    pub root: Option<Vector>,
    pub rows: Vec<TrajectoryRow>,
    pub diag_columns: Vec<String>,
    pub seed: u64,
    pub stream: u64,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryRow {
        self.rows.last().expect("a trajectory has at least one row")
    }

    /// `Δ_t = Z_t − z⁰` for a recorded row, when the target is known.
    pub fn deviation(&self, row: &TrajectoryRow) -> Option<Vector> {
        self.root.as_ref().map(|r| &row.z - r)
    }

    pub fn row_at(&self, t: usize) -> Option<&TrajectoryRow> {
        self.rows.binary_search_by_key(&t, |r| r.t).ok().map(|i| &self.rows[i])
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_owned()];
        cols.extend((1..=self.dim).map(|i| format!("z_{i}")));
        cols.extend((1..=self.dim).map(|i| format!("pre_{i}")));
        cols.push("truncated".into());
        cols.push("step_norm".into());
        cols.extend(self.diag_columns.iter().map(|c| format!("diag_{c}")));
        cols.join(",")
    }

    /// CSV with 17 significant digits per float.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for row in &self.rows {
            write!(out, "{}", row.t).unwrap();
            for v in row.z.iter().chain(row.pre.iter()) {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            write!(out, ",{},{}", row.truncated as u8, fmt_f64(row.step_norm)).unwrap();
            for v in &row.diag {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Runs `horizon` steps from `z0` on stream `(seed, stream)`.
pub fn run_with(
    problem: &Problem,
    z0: Vector,
    horizon: usize,
    seed: u64,
    stream: u64,
    plan: &RecordPlan,
    hook: &mut dyn StepHook,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(SaError::invalid("horizon must be ≥ 1"));
    }
    if let RecordPlan::Every(0) = plan {
        return Err(SaError::invalid("record_every must be ≥ 1"));
    }
    let mut state = SaState::new(problem, z0.clone(), sim_rng(seed, stream))?;
    let mut rows = Vec::new();
    for _ in 0..horizon {
        let report = sa_step(problem, &mut state, hook)?;
        if plan.wants(report.t, horizon) {
            rows.push(TrajectoryRow {
                t: report.t,
                z: state.z.clone(),
                pre: report.z_pre,
                truncated: report.truncated,
                step_norm: report.step_norm,
                truncations: state.truncations,
                diag: hook.diag_values(),
            });
        }
    }
    Ok(Trajectory {
        dim: problem.dim(),
        z0,
        root: problem.root.clone(),
        rows,
        diag_columns: hook.diag_columns(),
        seed,
        stream,
    })
}

/// [`run_with`] on stream 0, recording every `record_every`-th step.
pub fn run(
    problem: &Problem,
    z0: Vector,
    horizon: usize,
    seed: u64,
    record_every: usize,
) -> Result<Trajectory> {
    run_with(problem, z0, horizon, seed, 0, &RecordPlan::Every(record_every), &mut NoHook)
}
