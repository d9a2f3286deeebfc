//! Seeded Monte Carlo replications of one problem.
//!
//! Replication k draws its observations from stream k of the base seed and
//! its initial value from stream k of a salted seed, so results do not
//! depend on scheduling. Serial and parallel runs are byte-identical.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{fmt_f64, sa_step, NoHook, Problem, SaState, StepHook};
use crate::error::{Result, SaError};
use crate::fields::{sim_rng, Vector};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "TRUNC_SA_THREADS";

const INIT_SALT: u64 = 0x5eed_1417_a11c_e5e5;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    Fixed { value: Vec<f64> },
    /// Independent uniform coordinates on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl InitSpec {
    pub fn draw(&self, dim: usize, base_seed: u64, rep: u64) -> Result<Vector> {
        match self {
            InitSpec::Fixed { value } => {
                if value.len() != dim {
                    return Err(SaError::Contract(format!(
                        "initial value has dimension {}, field has {dim}",
                        value.len()
                    )));
                }
                Ok(Vector::from_column_slice(value))
            }
            InitSpec::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(SaError::invalid(format!("init interval [{lo}, {hi}] is empty or unbounded")));
                }
                let mut rng = sim_rng(base_seed ^ INIT_SALT, rep);
                Ok(Vector::from_fn(dim, |_, _| rng.random_range(*lo..*hi)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSpec {
    pub n_reps: usize,
    pub horizon: usize,
    /// Steps at which errors are recorded; the horizon is always added.
    pub checkpoints: Vec<usize>,
    pub seed: u64,
    pub init: InitSpec,
    /// Required ratio of first to last checkpoint median for "converging".
    pub decay_factor: f64,
    /// Worker count; `Some(1)` runs serially, `None` defers to
    /// [`THREADS_ENV`] and then to rayon's default. Left out of serialized
    /// output since it cannot change results.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl ReplicationSpec {
    fn checkpoints(&self) -> Result<Vec<usize>> {
        if self.n_reps == 0 {
            return Err(SaError::invalid("n_reps must be ≥ 1"));
        }
        if self.horizon == 0 {
            return Err(SaError::invalid("horizon must be ≥ 1"));
        }
        if !(self.decay_factor > 0.0) {
            return Err(SaError::invalid("decay_factor must be > 0"));
        }
        let mut cps = self.checkpoints.clone();
        if let Some(&bad) = cps.iter().find(|&&t| t == 0 || t > self.horizon) {
            return Err(SaError::invalid(format!("checkpoint {bad} outside 1..={}", self.horizon)));
        }
        cps.push(self.horizon);
        cps.sort_unstable();
        cps.dedup();
        Ok(cps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub rep: usize,
    pub seed: u64,
    pub stream: u64,
    pub z0: Vec<f64>,
    /// `‖Z_t − z⁰‖` per checkpoint reached.
    pub errors: Vec<f64>,
    /// Cumulative truncations per checkpoint reached.
    pub truncations: Vec<u64>,
    pub final_z: Vec<f64>,
    pub steps_completed: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointSummary {
    pub t: usize,
    /// Replications that reached this checkpoint.
    pub n: usize,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
    pub mean: f64,
    /// Truncated steps per step since the previous checkpoint, averaged
    /// over replications.
    pub truncation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceVerdict {
    /// First checkpoint median over last checkpoint median.
    pub decay_ratio: f64,
    pub decay_factor: f64,
    pub medians_decreasing: bool,
    pub converging: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationReport {
    pub model: String,
    pub spec: ReplicationSpec,
    pub checkpoints: Vec<CheckpointSummary>,
    pub verdict: ConvergenceVerdict,
    pub failures: usize,
    pub replications: Vec<ReplicationResult>,
}

impl ReplicationReport {
    pub fn checkpoint(&self, t: usize) -> Option<&CheckpointSummary> {
        self.checkpoints.iter().find(|c| c.t == t)
    }

    /// Aligned columns for reading in a terminal.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "model {}  reps {}  seed {}  failures {}\n",
            self.model, self.spec.n_reps, self.spec.seed, self.failures
        );
        out.push_str(&format!(
            "{:>10} {:>5} {:>12} {:>12} {:>12} {:>12}\n",
            "t", "n", "q10", "median", "q90", "trunc_rate"
        ));
        for c in &self.checkpoints {
            out.push_str(&format!(
                "{:>10} {:>5} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}\n",
                c.t, c.n, c.q10, c.median, c.q90, c.truncation_rate
            ));
        }
        let v = &self.verdict;
        out.push_str(&format!(
            "decay ratio {:.4e} (factor {}): {}\n",
            v.decay_ratio,
            v.decay_factor,
            if v.converging { "converging" } else { "not converging" }
        ));
        out
    }

    /// One row per (replication, checkpoint).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rep,seed,stream,t,error,truncations\n");
        let cps: Vec<usize> = self.checkpoints.iter().map(|c| c.t).collect();
        for r in &self.replications {
            for (i, e) in r.errors.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.rep,
                    r.seed,
                    r.stream,
                    cps[i],
                    fmt_f64(*e),
                    r.truncations[i]
                ));
            }
        }
        out
    }
}

/// Type-7 sample quantile (linear interpolation between order statistics).
/// `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `a / b` with `0/0 = 1` and `x/0 = ∞`.
pub fn decay_ratio(first: f64, last: f64) -> f64 {
    match (first == 0.0, last == 0.0) {
        (true, true) => 1.0,
        (false, true) => f64::INFINITY,
        _ => first / last,
    }
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn run_one<H: StepHook>(
    problem: &Problem,
    spec: &ReplicationSpec,
    cps: &[usize],
    rep: usize,
    hook: &mut H,
) -> Result<ReplicationResult> {
    let root = problem
        .root
        .as_ref()
        .ok_or_else(|| SaError::Contract("replications need the target z⁰".into()))?;
    let stream = rep as u64;
    let z0 = spec.init.draw(problem.dim(), spec.seed, stream)?;
    let mut result = ReplicationResult {
        rep,
        seed: spec.seed,
        stream,
        z0: z0.iter().copied().collect(),
        errors: Vec::with_capacity(cps.len()),
        truncations: Vec::with_capacity(cps.len()),
        final_z: Vec::new(),
        steps_completed: 0,
        failure: None,
    };
    let mut state = SaState::new(problem, z0, sim_rng(spec.seed, stream))?;
    let mut next = 0;
    for _ in 0..spec.horizon {
        if let Err(e) = sa_step(problem, &mut state, hook) {
            result.failure = Some(e.to_string());
            break;
        }
        if cps[next] == state.t {
            result.errors.push((&state.z - root).norm());
            result.truncations.push(state.truncations);
            next += 1;
        }
    }
    result.steps_completed = state.t;
    result.final_z = state.z.iter().copied().collect();
    Ok(result)
}

fn summarize(cps: &[usize], reps: &[ReplicationResult]) -> Vec<CheckpointSummary> {
    let mut out = Vec::with_capacity(cps.len());
    for (i, &t) in cps.iter().enumerate() {
        let prev_t = if i == 0 { 0 } else { cps[i - 1] };
        let mut errs = Vec::new();
        let mut rate = 0.0;
        for r in reps.iter().filter(|r| r.errors.len() > i) {
            errs.push(r.errors[i]);
            let prev = if i == 0 { 0 } else { r.truncations[i - 1] };
            rate += (r.truncations[i] - prev) as f64 / (t - prev_t) as f64;
        }
        if errs.is_empty() {
            break;
        }
        errs.sort_by(f64::total_cmp);
        let n = errs.len();
        out.push(CheckpointSummary {
            t,
            n,
            q10: quantile(&errs, 0.1),
            median: quantile(&errs, 0.5),
            q90: quantile(&errs, 0.9),
            mean: errs.iter().sum::<f64>() / n as f64,
            truncation_rate: rate / n as f64,
        });
    }
    out
}

/// Runs the replications with one fresh hook each; hooks come back in
/// replication order.
pub fn replicate_with<H, F>(problem: &Problem, spec: &ReplicationSpec, make_hook: F) -> Result<(ReplicationReport, Vec<H>)>
where
    H: StepHook + Send,
    F: Fn(usize) -> H + Sync,
{
    let cps = spec.checkpoints()?;
    let job = |rep: usize| -> Result<(ReplicationResult, H)> {
        let mut hook = make_hook(rep);
        let r = run_one(problem, spec, &cps, rep, &mut hook)?;
        Ok((r, hook))
    };
    let threads = spec.threads.or_else(thread_cap);
    let outcomes: Vec<Result<(ReplicationResult, H)>> = if threads == Some(1) {
        (0..spec.n_reps).map(job).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| SaError::Contract(format!("thread pool: {e}")))?;
        pool.install(|| (0..spec.n_reps).into_par_iter().map(job).collect())
    };
    let mut reps = Vec::with_capacity(spec.n_reps);
    let mut hooks = Vec::with_capacity(spec.n_reps);
    for o in outcomes {
        let (r, h) = o?;
        reps.push(r);
        hooks.push(h);
    }

    let checkpoints = summarize(&cps, &reps);
    let medians: Vec<f64> = checkpoints.iter().map(|c| c.median).collect();
    let ratio = match (medians.first(), medians.last()) {
        (Some(&a), Some(&b)) => decay_ratio(a, b),
        _ => f64::NAN,
    };
    let verdict = ConvergenceVerdict {
        decay_ratio: ratio,
        decay_factor: spec.decay_factor,
        medians_decreasing: medians.len() == cps.len() && medians.windows(2).all(|w| w[1] < w[0]),
        converging: ratio >= spec.decay_factor,
    };
    let report = ReplicationReport {
        model: problem.name.clone(),
        spec: spec.clone(),
        failures: reps.iter().filter(|r| r.failure.is_some()).count(),
        checkpoints,
        verdict,
        replications: reps,
    };
    Ok((report, hooks))
}

pub fn replicate(problem: &Problem, spec: &ReplicationSpec) -> Result<ReplicationReport> {
    replicate_with(problem, spec, |_| NoHook).map(|(r, _)| r)
}
