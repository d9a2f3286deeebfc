//! Closed convex regions, nearest-point projection and time-indexed
//! truncation schedules.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::history::ObservationRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("dimension mismatch: region has dimension {expected}, point has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate region: {0}")]
    Degenerate(String),
}

/// Shape of a [`ConvexRegion`]. Read-only; build regions through the
/// validating constructors on [`ConvexRegion`].
#[derive(Debug, Clone, PartialEq)]
pub enum RegionKind {
    FullSpace { dim: usize },
    /// One-dimensional `[lo, hi]`, endpoints may be infinite.
    Interval { lo: f64, hi: f64 },
    Box { lo: DVector<f64>, hi: DVector<f64> },
    Ball { center: DVector<f64>, radius: f64 },
}

/// A nonempty closed convex subset of ℝ^m.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexRegion {
    kind: RegionKind,
}

fn check_bounds(lo: f64, hi: f64) -> Result<(), RegionError> {
    if lo.is_nan() || hi.is_nan() {
        return Err(RegionError::Degenerate("NaN endpoint".into()));
    }
    if lo > hi {
        return Err(RegionError::Degenerate(format!("lo {lo} > hi {hi}")));
    }
    if lo == f64::INFINITY || hi == f64::NEG_INFINITY {
        return Err(RegionError::Degenerate(format!("empty interval [{lo}, {hi}]")));
    }
    Ok(())
}

impl ConvexRegion {
    pub fn full_space(dim: usize) -> Result<Self, RegionError> {
        if dim == 0 {
            return Err(RegionError::Degenerate("zero dimension".into()));
        }
        Ok(Self { kind: RegionKind::FullSpace { dim } })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self, RegionError> {
        check_bounds(lo, hi)?;
        Ok(Self { kind: RegionKind::Interval { lo, hi } })
    }

    pub fn boxed(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self, RegionError> {
        if lo.len() != hi.len() {
            return Err(RegionError::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if lo.is_empty() {
            return Err(RegionError::Degenerate("zero dimension".into()));
        }
        for (&a, &b) in lo.iter().zip(hi.iter()) {
            check_bounds(a, b)?;
        }
        Ok(Self { kind: RegionKind::Box { lo, hi } })
    }

    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self, RegionError> {
        if center.is_empty() {
            return Err(RegionError::Degenerate("zero dimension".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(RegionError::Degenerate(format!("radius {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(RegionError::Degenerate("non-finite ball center".into()));
        }
        Ok(Self { kind: RegionKind::Ball { center, radius } })
    }

    pub fn kind(&self) -> &RegionKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            RegionKind::FullSpace { dim } => *dim,
            RegionKind::Interval { .. } => 1,
            RegionKind::Box { lo, .. } => lo.len(),
            RegionKind::Ball { center, .. } => center.len(),
        }
    }

    /// Exact membership test. Points of the wrong dimension are not members.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match &self.kind {
            RegionKind::FullSpace { .. } => true,
            RegionKind::Interval { lo, hi } => *lo <= x[0] && x[0] <= *hi,
            RegionKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (a, b))| a <= v && v <= b),
            RegionKind::Ball { center, radius } => (x - center).norm() <= *radius,
        }
    }

    /// Nearest point of the region to `x` (the truncation operator).
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>, RegionError> {
        if x.len() != self.dim() {
            return Err(RegionError::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(match &self.kind {
            RegionKind::FullSpace { .. } => x.clone(),
            RegionKind::Interval { lo, hi } => DVector::from_element(1, x[0].clamp(*lo, *hi)),
            RegionKind::Box { lo, hi } => {
                DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]))
            }
            RegionKind::Ball { center, radius } => {
                let d = x - center;
                let n = d.norm();
                if n <= *radius {
                    return Ok(x.clone());
                }
                let mut s = radius / n;
                let mut p = center + &d * s;
                // rounding can leave p a hair outside; pull it in until membership holds
                while (&p - center).norm() > *radius {
                    s *= 1.0 - f64::EPSILON;
                    p = center + &d * s;
                }
                p
            }
        })
    }

    /// Axis-aligned bounding box, with infinite sides where unbounded.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        match &self.kind {
            RegionKind::FullSpace { dim } => (
                DVector::from_element(*dim, f64::NEG_INFINITY),
                DVector::from_element(*dim, f64::INFINITY),
            ),
            RegionKind::Interval { lo, hi } => {
                (DVector::from_element(1, *lo), DVector::from_element(1, *hi))
            }
            RegionKind::Box { lo, hi } => (lo.clone(), hi.clone()),
            RegionKind::Ball { center, radius } => (center.add_scalar(-radius), center.add_scalar(*radius)),
        }
    }

    pub fn is_bounded(&self) -> bool {
        let (lo, hi) = self.bounding_box();
        lo.iter().chain(hi.iter()).all(|v| v.is_finite())
    }
}

impl fmt::Display for ConvexRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            RegionKind::FullSpace { dim } => write!(f, "R^{dim}"),
            RegionKind::Interval { lo, hi } => write!(f, "[{lo}, {hi}]"),
            RegionKind::Box { lo, hi } => write!(f, "box({:?}, {:?})", lo.as_slice(), hi.as_slice()),
            RegionKind::Ball { center, radius } => {
                write!(f, "ball({:?}, {radius})", center.as_slice())
            }
        }
    }
}

type Generator = dyn Fn(usize, &ObservationRecord) -> Result<ConvexRegion, RegionError> + Send + Sync;

/// Sequence of truncation regions `U_t`, `t ≥ 1`.
///
/// The generator sees the time index and the observation record up to and
/// including `X_t`; it must be a pure function of those.
#[derive(Clone)]
pub struct TruncationSchedule {
    generator: Arc<Generator>,
    description: String,
    history_free: bool,
}

impl fmt::Debug for TruncationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncationSchedule")
            .field("description", &self.description)
            .field("history_free", &self.history_free)
            .finish()
    }
}

impl TruncationSchedule {
    /// Schedule driven by data. Use [`TruncationSchedule::deterministic`]
    /// when the generator ignores the record.
    pub fn new<F>(description: impl Into<String>, generator: F) -> Self
    where
        F: Fn(usize, &ObservationRecord) -> Result<ConvexRegion, RegionError> + Send + Sync + 'static,
    {
        Self { generator: Arc::new(generator), description: description.into(), history_free: false }
    }

    pub fn deterministic<F>(description: impl Into<String>, generator: F) -> Self
    where
        F: Fn(usize) -> Result<ConvexRegion, RegionError> + Send + Sync + 'static,
    {
        Self {
            generator: Arc::new(move |t, _: &ObservationRecord| generator(t)),
            description: description.into(),
            history_free: true,
        }
    }

    /// `U_t = ℝ^dim` for every t.
    pub fn unrestricted(dim: usize) -> Result<Self, RegionError> {
        let region = ConvexRegion::full_space(dim)?;
        Ok(Self::fixed(region))
    }

    pub fn fixed(region: ConvexRegion) -> Self {
        let description = format!("fixed {region}");
        Self::deterministic(description, move |_| Ok(region.clone()))
    }

    pub fn region(&self, t: usize, history: &ObservationRecord) -> Result<ConvexRegion, RegionError> {
        (self.generator)(t, history)
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn is_history_free(&self) -> bool {
        self.history_free
    }
}

/// Closed-form interval schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpandingKind {
    /// `[−C t^{1/(2l) − δ}, C t^{1/(2l) − δ}]`; params `[C, l, δ]`.
    Power,
    /// `[−C ln(t + s), C ln(t + s)]`; params `[C]` (s = 0) or `[C, s]`.
    Log,
    /// `[−C t, C t]`; params `[C]`.
    Linear,
    /// `[C₁ (ln(t+2))^{−1/2}, C₂ (t+2)]`; params `[C₁, C₂]`.
    LogSqrtInverse,
    /// `[C₁ (ln(t+2))^{−1/2}, ∞)`; params `[C₁]`.
    LogSqrtInverseLower,
}

impl ExpandingKind {
    pub fn name(self) -> &'static str {
        match self {
            ExpandingKind::Power => "power",
            ExpandingKind::Log => "log",
            ExpandingKind::Linear => "linear",
            ExpandingKind::LogSqrtInverse => "log_sqrt_inverse",
            ExpandingKind::LogSqrtInverseLower => "log_sqrt_inverse_lower",
        }
    }
}

/// Endpoints of an [`ExpandingKind`] schedule at time `t`, validated params.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalFormula {
    kind: ExpandingKind,
    c: f64,
    a: f64,
    b: f64,
}

impl IntervalFormula {
    pub fn kind(&self) -> ExpandingKind {
        self.kind
    }

    /// (lower, upper) at time t. `t = 0` is allowed and used by monitors.
    pub fn bounds(&self, t: usize) -> (f64, f64) {
        let tf = t as f64;
        match self.kind {
            ExpandingKind::Power => {
                let alpha = self.c * tf.powf(self.a);
                (-alpha, alpha)
            }
            ExpandingKind::Log => {
                let alpha = self.c * (tf + self.a).ln();
                (-alpha, alpha)
            }
            ExpandingKind::Linear => (-self.c * tf, self.c * tf),
            ExpandingKind::LogSqrtInverse => (self.c / (tf + 2.0).ln().sqrt(), self.a * (tf + 2.0)),
            ExpandingKind::LogSqrtInverseLower => (self.c / (tf + 2.0).ln().sqrt(), f64::INFINITY),
        }
    }

    pub fn region(&self, t: usize) -> Result<ConvexRegion, RegionError> {
        let (lo, hi) = self.bounds(t);
        if !(lo < hi) {
            return Err(RegionError::Degenerate(format!(
                "{} schedule has zero width at t = {t}: [{lo}, {hi}]",
                self.kind.name()
            )));
        }
        ConvexRegion::interval(lo, hi)
    }
}

fn positive(name: &str, v: f64) -> Result<f64, RegionError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(RegionError::Degenerate(format!("{name} must be positive and finite, got {v}")))
    }
}

fn arity(kind: ExpandingKind, params: &[f64], allowed: &[usize]) -> Result<(), RegionError> {
    if allowed.contains(&params.len()) {
        Ok(())
    } else {
        Err(RegionError::Degenerate(format!(
            "{} schedule takes {allowed:?} parameters, got {}",
            kind.name(),
            params.len()
        )))
    }
}

/// Validates parameters and returns the closed-form endpoints.
pub fn interval_formula(kind: ExpandingKind, params: &[f64]) -> Result<IntervalFormula, RegionError> {
    let formula = match kind {
        ExpandingKind::Power => {
            arity(kind, params, &[3])?;
            let c = positive("C", params[0])?;
            let l = params[1];
            if !(l >= 1.0 && l.fract() == 0.0) {
                return Err(RegionError::Degenerate(format!("l must be a positive integer, got {l}")));
            }
            let delta = positive("δ", params[2])?;
            if delta >= 1.0 / (2.0 * l) {
                return Err(RegionError::Degenerate(format!(
                    "δ = {delta} must be below 1/(2l) = {}",
                    1.0 / (2.0 * l)
                )));
            }
            IntervalFormula { kind, c, a: 1.0 / (2.0 * l) - delta, b: 0.0 }
        }
        ExpandingKind::Log => {
            arity(kind, params, &[1, 2])?;
            let c = positive("C", params[0])?;
            let shift = params.get(1).copied().unwrap_or(0.0);
            if !(shift >= 0.0 && shift.is_finite()) {
                return Err(RegionError::Degenerate(format!("shift must be ≥ 0, got {shift}")));
            }
            IntervalFormula { kind, c, a: shift, b: 0.0 }
        }
        ExpandingKind::Linear => {
            arity(kind, params, &[1])?;
            IntervalFormula { kind, c: positive("C", params[0])?, a: 0.0, b: 0.0 }
        }
        ExpandingKind::LogSqrtInverse => {
            arity(kind, params, &[2])?;
            IntervalFormula { kind, c: positive("C1", params[0])?, a: positive("C2", params[1])?, b: 0.0 }
        }
        ExpandingKind::LogSqrtInverseLower => {
            arity(kind, params, &[1])?;
            IntervalFormula { kind, c: positive("C1", params[0])?, a: 0.0, b: 0.0 }
        }
    };
    // every schedule must produce a proper interval from t = 1 on
    // bounds are monotone in t (α_t ↓, β_t ↑ for the two-sided family), so t = 1 is the worst case
    formula.region(1)?;
    Ok(formula)
}

/// History-free interval schedule from a closed-form family.
pub fn expanding_interval_schedule(
    kind: ExpandingKind,
    params: &[f64],
) -> Result<TruncationSchedule, RegionError> {
    let formula = interval_formula(kind, params)?;
    let description = format!("{} {:?}", kind.name(), params);
    Ok(TruncationSchedule::deterministic(description, move |t| formula.region(t)))
}

/// Box of half-width `δ_t` around an auxiliary estimate computed from the
/// observation record.
pub fn auxiliary_shrinking_schedule<A, D>(aux: A, delta: D) -> TruncationSchedule
where
    A: Fn(&ObservationRecord) -> DVector<f64> + Send + Sync + 'static,
    D: Fn(usize) -> f64 + Send + Sync + 'static,
{
    TruncationSchedule::new("auxiliary shrinking box", move |t, history| {
        let d = delta(t);
        if !(d > 0.0 && d.is_finite()) {
            return Err(RegionError::Degenerate(format!("δ_{t} = {d} is not positive")));
        }
        let center = aux(history);
        ConvexRegion::boxed(center.add_scalar(-d), center.add_scalar(d))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn projection_examples() {
        let iv = ConvexRegion::interval(-1.0, 1.0).unwrap();
        assert_eq!(iv.project(&dvector![2.0]).unwrap(), dvector![1.0]);

        let ball = ConvexRegion::ball(dvector![0.0, 0.0], 1.0).unwrap();
        assert_eq!(ball.project(&dvector![0.2, 0.3]).unwrap(), dvector![0.2, 0.3]);
        let p = ball.project(&dvector![3.0, 4.0]).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert!(ball.contains(&p));

        let bx = ConvexRegion::boxed(dvector![0.0, 0.0], dvector![1.0, 1.0]).unwrap();
        assert_eq!(bx.project(&dvector![2.0, 0.5]).unwrap(), dvector![1.0, 0.5]);
    }

    #[test]
    fn box_projection_matches_grid_search() {
        let bx = ConvexRegion::boxed(dvector![0.0, 0.0], dvector![1.0, 1.0]).unwrap();
        let x = dvector![2.0, 0.5];
        let n = 400;
        let mut best = (f64::INFINITY, dvector![0.0, 0.0]);
        for i in 0..=n {
            for j in 0..=n {
                let y = dvector![i as f64 / n as f64, j as f64 / n as f64];
                let d = (&x - &y).norm();
                if d < best.0 {
                    best = (d, y);
                }
            }
        }
        assert_eq!(best.1, bx.project(&x).unwrap());
    }

    #[test]
    fn construction_rejects_degenerate_parameters() {
        assert!(ConvexRegion::interval(1.0, -1.0).is_err());
        assert!(ConvexRegion::interval(f64::NAN, 1.0).is_err());
        assert!(ConvexRegion::interval(f64::INFINITY, f64::INFINITY).is_err());
        assert!(ConvexRegion::interval(f64::NEG_INFINITY, f64::INFINITY).is_ok());
        assert!(ConvexRegion::ball(dvector![0.0], 0.0).is_err());
        assert!(ConvexRegion::ball(dvector![0.0], -1.0).is_err());
        assert!(ConvexRegion::boxed(dvector![0.0, 2.0], dvector![1.0, 1.0]).is_err());
        assert!(ConvexRegion::full_space(0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let bx = ConvexRegion::boxed(dvector![0.0, 0.0], dvector![1.0, 1.0]).unwrap();
        assert_eq!(
            bx.project(&dvector![1.0]),
            Err(RegionError::DimensionMismatch { expected: 2, found: 1 })
        );
        assert!(!bx.contains(&dvector![0.5]));
    }

    #[test]
    fn expanding_schedule_examples() {
        let h = ObservationRecord::new(1);
        let s = expanding_interval_schedule(ExpandingKind::Power, &[10.0, 3.0, 0.1]).unwrap();
        assert_eq!(s.region(1, &h).unwrap(), ConvexRegion::interval(-10.0, 10.0).unwrap());

        let g = expanding_interval_schedule(ExpandingKind::LogSqrtInverse, &[0.5, 2.0]).unwrap();
        match g.region(1, &h).unwrap().kind() {
            RegionKind::Interval { lo, hi } => {
                // 0.5 / sqrt(ln 3), evaluated in extended precision
                assert!((lo - 0.477_032_291_000_000_7).abs() < 1e-15, "{lo}");
                assert_eq!(*hi, 6.0);
            }
            other => panic!("{other:?}"),
        }

        assert!(expanding_interval_schedule(ExpandingKind::Log, &[1.0]).is_err());
        assert!(expanding_interval_schedule(ExpandingKind::Log, &[1.0, 1.0]).is_ok());
        assert!(expanding_interval_schedule(ExpandingKind::Power, &[10.0, 3.0, 1.0 / 6.0]).is_err());
        assert!(expanding_interval_schedule(ExpandingKind::Power, &[0.0, 3.0, 0.1]).is_err());
        assert!(expanding_interval_schedule(ExpandingKind::LogSqrtInverse, &[0.5, -2.0]).is_err());
    }

    #[test]
    fn expanding_schedules_eventually_contain_any_point() {
        let cases = [
            (ExpandingKind::Power, vec![10.0, 3.0, 0.1]),
            (ExpandingKind::Log, vec![1.0, 2.0]),
            (ExpandingKind::Linear, vec![0.5]),
        ];
        for (kind, params) in cases {
            let f = interval_formula(kind, &params).unwrap();
            for z in [-40.0, -3.0, 0.0, 0.7, 25.0] {
                // doubling search: the power bound needs ~10⁹ steps to reach 40
                let t0 = (0..62).map(|k| 1usize << k).find(|&t| {
                    let (lo, hi) = f.bounds(t);
                    lo <= z && z <= hi
                });
                let t0 = t0.unwrap_or_else(|| panic!("{kind:?} never reaches {z}"));
                // monotone bounds keep z inside afterwards
                for t in [t0, t0 + 1, 2 * t0, 10 * t0 + 7] {
                    let (lo, hi) = f.bounds(t);
                    assert!(lo <= z && z <= hi);
                }
            }
        }
        let g = interval_formula(ExpandingKind::LogSqrtInverse, &[0.5, 2.0]).unwrap();
        // α_t = 0.1 needs ln(t+2) = 25
        for z in [0.1, 0.3, 2.0, 50.0] {
            let t0 = (0..62).map(|k| 1usize << k).find(|&t| {
                let (lo, hi) = g.bounds(t);
                lo <= z && z <= hi
            });
            assert!(t0.is_some(), "{z}");
        }
    }

    #[test]
    fn shrinking_schedule() {
        let s = auxiliary_shrinking_schedule(|_| dvector![0.0], |t| 1.0 / t as f64);
        let h = ObservationRecord::new(1);
        assert_eq!(
            s.region(2, &h).unwrap(),
            ConvexRegion::boxed(dvector![-0.5], dvector![0.5]).unwrap()
        );
        let bad = auxiliary_shrinking_schedule(|_| dvector![0.0], |t| 1.0 - t as f64);
        assert!(bad.region(1, &h).is_err());

        let mean = auxiliary_shrinking_schedule(|h| dvector![h.mean(0)], |_| 1.0);
        let h = ObservationRecord::with_rows(1, &[1.0, 2.0, 6.0]);
        assert_eq!(
            mean.region(3, &h).unwrap(),
            ConvexRegion::boxed(dvector![2.0], dvector![4.0]).unwrap()
        );
    }
}
