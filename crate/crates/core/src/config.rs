//! Experiment configuration.
//!
//! A config file is TOML read as a flat map of dotted keys
//! (`model.params.theta = 2.0` and a `[model.params]` table with
//! `theta = 2.0` are the same key). Values are strings, booleans, integers,
//! floats, or arrays of numbers. Unknown keys are errors, and every
//! offending key is reported at once. The canonical form lists every
//! resolved key, defaults included, one `key = value` per line in sorted
//! order; it parses back to the same config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use toml::Value;

use crate::convex::{interval_formula, ExpandingKind};
use crate::diagnostics::MonitorConfig;
use crate::engine::Problem;
use crate::fields::{HarmonicStep, PowerStep};
use crate::harness::{InitSpec, ReplicationSpec};
use crate::models::polynomial::{polynomial_summability, PolynomialField};
use crate::models::{
    make_ar1_with, make_gamma_example, make_gamma_unbounded_example, make_polynomial_example, GammaField, Innovation,
    NoiseKind, PolySchedule,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration")?;
        for i in &self.issues {
            write!(f, "\n  {}: {}", i.key, i.message)?;
        }
        Ok(())
    }
}

impl ConfigError {
    fn single(key: &str, message: impl Into<String>) -> Self {
        Self { issues: vec![ConfigIssue { key: key.into(), message: message.into() }] }
    }

    pub fn mentions(&self, key: &str) -> bool {
        self.issues.iter().any(|i| i.key == key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelName {
    Poly,
    Gamma,
    Ar1,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Poly => "poly",
            ModelName::Gamma => "gamma",
            ModelName::Ar1 => "ar1",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "poly" => Some(ModelName::Poly),
            "gamma" => Some(ModelName::Gamma),
            "ar1" => Some(ModelName::Ar1),
            _ => None,
        }
    }

    fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelName::Poly => &["degree", "root", "sigma", "df"],
            ModelName::Gamma => &["theta"],
            ModelName::Ar1 => &["theta", "i0", "x0"],
        }
    }
}

/// `kind` plus a flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub kind: String,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateConfig {
    pub n_reps: usize,
    pub checkpoints: Vec<usize>,
    pub decay_factor: f64,
    pub csv: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub csv: bool,
    pub monitor: MonitorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelName,
    pub params: BTreeMap<String, f64>,
    pub noise: String,
    pub step: Descriptor,
    pub schedule: Descriptor,
    pub init: InitSpec,
    pub horizon: usize,
    pub record_every: usize,
    pub seed: u64,
    pub diagnostics: DiagnosticsConfig,
    pub replicate: ReplicateConfig,
    pub output_dir: PathBuf,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

struct Reader {
    entries: BTreeMap<String, Value>,
    issues: Vec<ConfigIssue>,
}

impl Reader {
    fn issue(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue { key: key.into(), message: message.into() });
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.entries.remove(key)? {
            Value::String(s) => Some(s),
            other => {
                self.issue(key, format!("expected a string, got {}", other.type_str()));
                None
            }
        }
    }

    fn number(&mut self, key: &str, default: f64) -> f64 {
        match self.entries.remove(key) {
            None => default,
            Some(Value::Integer(i)) => i as f64,
            Some(Value::Float(f)) => f,
            Some(other) => {
                self.issue(key, format!("expected a number, got {}", other.type_str()));
                default
            }
        }
    }

    fn uint(&mut self, key: &str, default: u64) -> u64 {
        match self.entries.remove(key) {
            None => default,
            Some(Value::Integer(i)) if i >= 0 => i as u64,
            Some(other) => {
                self.issue(key, format!("expected a nonnegative integer, got {other}"));
                default
            }
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.entries.remove(key) {
            None => default,
            Some(Value::Boolean(b)) => b,
            Some(other) => {
                self.issue(key, format!("expected a boolean, got {}", other.type_str()));
                default
            }
        }
    }

    fn numbers(&mut self, key: &str, default: Vec<f64>) -> Vec<f64> {
        match self.entries.remove(key) {
            None => default,
            Some(Value::Array(a)) => {
                let mut out = Vec::with_capacity(a.len());
                for v in a {
                    match v {
                        Value::Integer(i) => out.push(i as f64),
                        Value::Float(f) => out.push(f),
                        other => {
                            self.issue(key, format!("expected numbers, found {other}"));
                            return default;
                        }
                    }
                }
                out
            }
            Some(Value::Integer(i)) => vec![i as f64],
            Some(Value::Float(f)) => vec![f],
            Some(other) => {
                self.issue(key, format!("expected an array of numbers, got {}", other.type_str()));
                default
            }
        }
    }

    fn uints(&mut self, key: &str, default: Vec<usize>) -> Vec<usize> {
        match self.entries.remove(key) {
            None => default,
            Some(Value::Array(a)) => {
                let mut out = Vec::with_capacity(a.len());
                for v in a {
                    match v {
                        Value::Integer(i) if i >= 0 => out.push(i as usize),
                        other => {
                            self.issue(key, format!("expected nonnegative integers, found {other}"));
                            return default;
                        }
                    }
                }
                out
            }
            Some(other) => {
                self.issue(key, format!("expected an array of integers, got {}", other.type_str()));
                default
            }
        }
    }
}

fn push(issues: &mut Vec<ConfigIssue>, key: &str, message: String) {
    issues.push(ConfigIssue { key: key.into(), message });
}

fn default_step(model: ModelName) -> Descriptor {
    match model {
        ModelName::Poly | ModelName::Gamma => Descriptor { kind: "harmonic".into(), params: vec![1.0] },
        ModelName::Ar1 => Descriptor { kind: "inverse_information".into(), params: vec![] },
    }
}

fn default_schedule(model: ModelName) -> Descriptor {
    match model {
        ModelName::Poly => Descriptor { kind: "power".into(), params: vec![10.0, 0.1] },
        ModelName::Gamma => Descriptor { kind: "log_sqrt_inverse".into(), params: vec![0.5, 2.0] },
        ModelName::Ar1 => Descriptor { kind: "unrestricted".into(), params: vec![] },
    }
}

fn default_params(model: ModelName) -> &'static [(&'static str, f64)] {
    match model {
        ModelName::Poly => &[("degree", 3.0), ("root", 1.0), ("sigma", 1.0)],
        ModelName::Gamma => &[("theta", 2.0)],
        ModelName::Ar1 => &[("theta", 0.5), ("i0", 1.0), ("x0", 0.0)],
    }
}

fn default_init(model: ModelName) -> (f64, f64) {
    match model {
        ModelName::Poly => (-5.0, 5.0),
        ModelName::Gamma => (0.5, 5.0),
        ModelName::Ar1 => (-1.0, 1.0),
    }
}

/// Decades `10^k` with `100 ≤ 10^k < horizon`.
fn default_checkpoints(horizon: usize) -> Vec<usize> {
    std::iter::successors(Some(100usize), |t| t.checked_mul(10)).take_while(|&t| t < horizon).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::single("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            ConfigError::single("<syntax>", e.message().to_owned())
        })?;
        let mut entries = BTreeMap::new();
        flatten("", &table, &mut entries);
        let mut r = Reader { entries, issues: Vec::new() };

        let model = match r.string("model.name") {
            Some(name) => ModelName::parse(&name).or_else(|| {
                r.issue("model.name", format!("unknown model `{name}` (expected poly, gamma or ar1)"));
                None
            }),
            None => {
                if !r.issues.iter().any(|i| i.key == "model.name") {
                    r.issue("model.name", "missing");
                }
                None
            }
        };
        // keep validating the rest under a stand-in so all issues surface
        let m = model.unwrap_or(ModelName::Gamma);

        let mut params = BTreeMap::new();
        for &(k, v) in default_params(m) {
            params.insert(k.to_owned(), v);
        }
        let given: Vec<String> = r.entries.keys().filter(|k| k.starts_with("model.params.")).cloned().collect();
        for key in given {
            let name = key["model.params.".len()..].to_owned();
            if model.is_some() && !m.param_names().contains(&name.as_str()) {
                r.issue(&key, format!("not a parameter of model `{}`", m.as_str()));
                r.entries.remove(&key);
                continue;
            }
            let v = r.number(&key, f64::NAN);
            params.insert(name, v);
        }
        let noise_default = "gaussian";
        let noise = r.string("model.noise").unwrap_or_else(|| noise_default.into());
        if m == ModelName::Poly && noise == "student_t" && !params.contains_key("df") {
            params.insert("df".into(), 5.0);
        }

        let step = Descriptor {
            kind: r.string("step.kind").unwrap_or_else(|| default_step(m).kind),
            params: r.numbers("step.params", default_step(m).params),
        };
        let sched_default = default_schedule(m);
        let schedule = Descriptor {
            kind: r.string("schedule.kind").unwrap_or_else(|| sched_default.kind.clone()),
            params: if r.has("schedule.params") {
                r.numbers("schedule.params", vec![])
            } else {
                sched_default.params.clone()
            },
        };

        let init = if r.has("init.value") {
            let v = r.numbers("init.value", vec![0.0]);
            for k in ["init.lo", "init.hi"] {
                if r.entries.remove(k).is_some() {
                    r.issue(k, "conflicts with init.value");
                }
            }
            InitSpec::Fixed { value: v }
        } else {
            let (lo, hi) = default_init(m);
            let lo = r.number("init.lo", lo);
            let hi = r.number("init.hi", hi);
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                r.issue("init.lo", format!("need finite init.lo < init.hi, got [{lo}, {hi}]"));
            }
            InitSpec::Uniform { lo, hi }
        };

        let horizon = r.uint("horizon", 10_000) as usize;
        if horizon == 0 {
            r.issue("horizon", "must be ≥ 1");
        }
        let record_every = r.uint("record_every", 100) as usize;
        if record_every == 0 {
            r.issue("record_every", "must be ≥ 1");
        }
        let seed = r.uint("seed", 0);

        let d = MonitorConfig::default();
        let monitor = MonitorConfig {
            grid: r.uint("diagnostics.grid", d.grid as u64) as usize,
            window: r.number("diagnostics.window", d.window),
            epsilons: r.numbers("diagnostics.epsilons", d.epsilons.clone()),
            mc_n: r.uint("diagnostics.mc_n", d.mc_n as u64) as usize,
            summable_tol: r.number("diagnostics.summable_tol", d.summable_tol),
            diverge_tol: r.number("diagnostics.diverge_tol", d.diverge_tol),
            grid_monitors: r.boolean("diagnostics.grid_monitors", d.grid_monitors),
            lemma_infima: r.boolean("diagnostics.lemma_infima", d.lemma_infima),
            probe_decades: r.uint("diagnostics.probe_decades", d.probe_decades as u64) as usize,
            rs_tol: r.number("diagnostics.rs_tol", d.rs_tol),
            sign_tol: r.number("diagnostics.sign_tol", d.sign_tol),
            seed,
        };
        let diagnostics = DiagnosticsConfig {
            enabled: r.boolean("diagnostics.enabled", false),
            csv: r.boolean("diagnostics.csv", true),
            monitor,
        };

        let replicate = ReplicateConfig {
            n_reps: r.uint("replicate.n_reps", 30) as usize,
            checkpoints: r.uints("replicate.checkpoints", default_checkpoints(horizon)),
            decay_factor: r.number("replicate.decay_factor", 10.0),
            csv: r.boolean("replicate.csv", true),
        };
        if replicate.n_reps == 0 {
            r.issue("replicate.n_reps", "must be ≥ 1");
        }
        if !(replicate.decay_factor > 1.0) {
            r.issue("replicate.decay_factor", format!("must be > 1, got {}", replicate.decay_factor));
        }
        if let Some(bad) = replicate.checkpoints.iter().find(|&&t| t == 0 || t > horizon) {
            r.issue("replicate.checkpoints", format!("checkpoint {bad} outside 1..={horizon}"));
        }

        let output_dir = PathBuf::from(r.string("output.dir").unwrap_or_else(|| "out".into()));

        let leftovers: Vec<String> = r.entries.keys().cloned().collect();
        for k in leftovers {
            r.issue(&k, "unknown key");
        }

        let cfg = ExperimentConfig {
            model: m,
            params,
            noise,
            step,
            schedule,
            init,
            horizon,
            record_every,
            seed,
            diagnostics,
            replicate,
            output_dir,
        };
        if model.is_some() {
            match cfg.build_problem() {
                Ok(p) => {
                    if let InitSpec::Fixed { value } = &cfg.init {
                        if value.len() != p.dim() {
                            r.issue("init.value", format!("needs {} entries", p.dim()));
                        }
                    }
                    if cfg.diagnostics.enabled {
                        if let Err(e) = cfg.diagnostics.monitor.validate(p.dim()) {
                            r.issue("diagnostics", e.to_string());
                        }
                    }
                }
                Err(e) => r.issues.extend(e.issues),
            }
        }
        if r.issues.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError { issues: r.issues })
        }
    }

    fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }

    /// The problem bundle named by the config, with every parameter checked
    /// by the owning module.
    pub fn build_problem(&self) -> Result<Problem, ConfigError> {
        let mut issues = Vec::new();
        let sp = &self.schedule.params;
        let problem = match self.model {
            ModelName::Poly => {
                let degree = self.param("degree");
                let deg_ok = degree >= 1.0 && degree.fract() == 0.0 && degree <= 31.0;
                if !deg_ok {
                    push(&mut issues, "model.params.degree", format!("must be an odd integer in 1..=31, got {degree}"));
                }
                let df = self.params.get("df").copied();
                let noise = NoiseKind::parse(&self.noise, df).map_err(|e| push(&mut issues, "model.noise", e.to_string())).ok();
                let root = self.param("root");
                let sigma = self.param("sigma");
                if let (true, Some(n)) = (deg_ok, noise) {
                    if let Err(e) = PolynomialField::new(degree as u32, root, sigma, n) {
                        push(&mut issues, "model.params", e.to_string());
                    }
                }
                let sched = match (self.schedule.kind.as_str(), sp.len()) {
                    ("power", 2) => Some(PolySchedule::Power { c: sp[0], delta: sp[1] }),
                    ("log", 1) => Some(PolySchedule::Log { c: sp[0] }),
                    ("power" | "log", _) => {
                        push(&mut issues, "schedule.params", format!("power takes [C, δ], log takes [C]; got {sp:?}"));
                        None
                    }
                    (other, _) => {
                        push(&mut issues, "schedule.kind", format!("poly supports power or log, got `{other}`"));
                        None
                    }
                };
                if let (true, Some(PolySchedule::Power { c, delta })) = (deg_ok, sched) {
                    if let Err(e) = interval_formula(ExpandingKind::Power, &[c, degree, delta]) {
                        push(&mut issues, "schedule.params", e.to_string());
                    }
                }
                if let (true, Some(PolySchedule::Log { c })) = (deg_ok, sched) {
                    if let Err(e) = interval_formula(ExpandingKind::Log, &[c, 2.0]) {
                        push(&mut issues, "schedule.params", e.to_string());
                    }
                }
                let exponent = match (self.step.kind.as_str(), self.step.params.as_slice()) {
                    ("harmonic", [c]) if *c > 0.0 && c.is_finite() => Some(1.0),
                    ("power", [c, a]) if *c > 0.0 && c.is_finite() && *a > 0.0 => Some(*a),
                    _ => {
                        push(&mut issues, "step", format!(
                            "poly supports harmonic [c > 0] or power [c > 0, a > 0], got {} {:?}",
                            self.step.kind, self.step.params
                        ));
                        None
                    }
                };
                if let (true, Some(s), Some(a)) = (deg_ok, sched, exponent) {
                    let check = polynomial_summability(degree as u32, s, a);
                    if !check.holds() {
                        push(&mut issues, "step.params", format!("step and schedule fail the summability conditions: {check:?}"));
                    }
                }
                match (deg_ok, noise, sched) {
                    (true, Some(n), Some(s)) if issues.is_empty() => {
                        make_polynomial_example(degree as u32, root, sigma, n, s).ok()
                    }
                    _ => None,
                }
            }
            ModelName::Gamma => {
                let theta = self.param("theta");
                if let Err(e) = GammaField::new(theta) {
                    push(&mut issues, "model.params.theta", e.to_string());
                }
                if self.noise != "gaussian" {
                    push(&mut issues, "model.noise", "the gamma model has no noise option".into());
                }
                if !matches!(self.step.params.as_slice(), [c] if *c > 0.0 && c.is_finite())
                    || self.step.kind != "harmonic"
                {
                    push(&mut issues, "step", format!("gamma supports harmonic [c > 0], got {} {:?}", self.step.kind, self.step.params));
                }
                let built = match (self.schedule.kind.as_str(), sp.as_slice()) {
                    ("log_sqrt_inverse", [c1, c2]) => make_gamma_example(theta, *c1, *c2),
                    ("log_sqrt_inverse_lower", [c1]) => make_gamma_unbounded_example(theta, *c1),
                    (k @ ("log_sqrt_inverse" | "log_sqrt_inverse_lower"), _) => {
                        push(&mut issues, "schedule.params", format!("wrong parameter count for {k}: {sp:?}"));
                        Err(crate::SaError::invalid(""))
                    }
                    (other, _) => {
                        push(&mut issues, "schedule.kind", format!(
                            "gamma supports log_sqrt_inverse or log_sqrt_inverse_lower, got `{other}`"
                        ));
                        Err(crate::SaError::invalid(""))
                    }
                };
                if let (Err(e), true) = (&built, issues.is_empty()) {
                    push(&mut issues, "schedule.params", e.to_string());
                }
                built.ok()
            }
            ModelName::Ar1 => {
                let innovation = match self.noise.as_str() {
                    "gaussian" => Some(Innovation::StandardNormal),
                    "zero" => Some(Innovation::Zero),
                    other => {
                        push(&mut issues, "model.noise", format!("ar1 supports gaussian or zero, got `{other}`"));
                        None
                    }
                };
                if self.step.kind != "inverse_information" || !self.step.params.is_empty() {
                    push(&mut issues, "step", format!("ar1 supports inverse_information [], got {} {:?}", self.step.kind, self.step.params));
                }
                if self.schedule.kind != "unrestricted" || !sp.is_empty() {
                    push(&mut issues, "schedule", format!("ar1 runs untruncated (unrestricted []), got {} {sp:?}", self.schedule.kind));
                }
                match make_ar1_with(self.param("theta"), self.param("i0"), self.param("x0"), innovation.unwrap_or(Innovation::Zero)) {
                    Ok(p) => innovation.map(|_| p),
                    Err(e) => {
                        push(&mut issues, "model.params", e.to_string());
                        None
                    }
                }
            }
        };
        match problem {
            Some(mut p) if issues.is_empty() => {
                match (self.step.kind.as_str(), self.step.params.as_slice()) {
                    ("harmonic", [c]) => p.step = Arc::new(HarmonicStep { c: *c }),
                    ("power", [c, a]) => p.step = Arc::new(PowerStep { c: *c, exponent: *a }),
                    _ => {}
                }
                Ok(p)
            }
            _ => {
                if issues.is_empty() {
                    issues.push(ConfigIssue { key: "model".into(), message: "could not build the model".into() });
                }
                Err(ConfigError { issues })
            }
        }
    }

    pub fn replication_spec(&self) -> ReplicationSpec {
        ReplicationSpec {
            n_reps: self.replicate.n_reps,
            horizon: self.horizon,
            checkpoints: self.replicate.checkpoints.clone(),
            seed: self.seed,
            init: self.init.clone(),
            decay_factor: self.replicate.decay_factor,
            threads: None,
        }
    }

    /// Replaces the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.diagnostics.monitor.seed = seed;
        self
    }

    /// Every resolved key in sorted order.
    pub fn entries(&self) -> Vec<(String, Value)> {
        let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
        let int = |x: u64| Value::Integer(x as i64);
        let mut e: Vec<(String, Value)> = vec![
            ("model.name".into(), Value::String(self.model.as_str().into())),
            ("model.noise".into(), Value::String(self.noise.clone())),
            ("step.kind".into(), Value::String(self.step.kind.clone())),
            ("step.params".into(), floats(&self.step.params)),
            ("schedule.kind".into(), Value::String(self.schedule.kind.clone())),
            ("schedule.params".into(), floats(&self.schedule.params)),
            ("horizon".into(), int(self.horizon as u64)),
            ("record_every".into(), int(self.record_every as u64)),
            ("seed".into(), int(self.seed)),
            ("output.dir".into(), Value::String(self.output_dir.to_string_lossy().into_owned())),
        ];
        for (k, v) in &self.params {
            e.push((format!("model.params.{k}"), Value::Float(*v)));
        }
        match &self.init {
            InitSpec::Fixed { value } => e.push(("init.value".into(), floats(value))),
            InitSpec::Uniform { lo, hi } => {
                e.push(("init.lo".into(), Value::Float(*lo)));
                e.push(("init.hi".into(), Value::Float(*hi)));
            }
        }
        let d = &self.diagnostics;
        let m = &d.monitor;
        e.extend([
            ("diagnostics.enabled".into(), Value::Boolean(d.enabled)),
            ("diagnostics.csv".into(), Value::Boolean(d.csv)),
            ("diagnostics.grid".into(), int(m.grid as u64)),
            ("diagnostics.window".into(), Value::Float(m.window)),
            ("diagnostics.epsilons".into(), floats(&m.epsilons)),
            ("diagnostics.mc_n".into(), int(m.mc_n as u64)),
            ("diagnostics.summable_tol".into(), Value::Float(m.summable_tol)),
            ("diagnostics.diverge_tol".into(), Value::Float(m.diverge_tol)),
            ("diagnostics.grid_monitors".into(), Value::Boolean(m.grid_monitors)),
            ("diagnostics.lemma_infima".into(), Value::Boolean(m.lemma_infima)),
            ("diagnostics.probe_decades".into(), int(m.probe_decades as u64)),
            ("diagnostics.rs_tol".into(), Value::Float(m.rs_tol)),
            ("diagnostics.sign_tol".into(), Value::Float(m.sign_tol)),
        ]);
        let rc = &self.replicate;
        e.extend([
            ("replicate.n_reps".into(), int(rc.n_reps as u64)),
            (
                "replicate.checkpoints".into(),
                Value::Array(rc.checkpoints.iter().map(|&t| int(t as u64)).collect()),
            ),
            ("replicate.decay_factor".into(), Value::Float(rc.decay_factor)),
            ("replicate.csv".into(), Value::Boolean(rc.csv)),
        ]);
        e.sort_by(|a, b| a.0.cmp(&b.0));
        e
    }

    pub fn canonical(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Resolved keys as a JSON object, for manifests and reports.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries()
            .into_iter()
            .map(|(k, v)| (k, serde_json::to_value(v).expect("toml values serialize")))
            .collect();
        serde_json::Value::Object(map)
    }
}
