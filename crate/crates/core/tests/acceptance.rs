//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs with `harness = false` so every line prints regardless of outcome.
//! Exits nonzero if any criterion fails.

use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{dvector, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use truncsa::convex::ConvexRegion;
use truncsa::diagnostics::{
    diagnose, n_t, n_t_closed_form, MomentSource, MonitorConfig, QuadraticForm, SquaredNorm, Verdict,
};
use truncsa::engine::{run_with, NoHook, Problem, RecordPlan};
use truncsa::fields::{eval_psi, second_moment_estimate, sim_rng, ConstantStep, LinearField, Matrix, Moment, Vector};
use truncsa::harness::{quantile, replicate, replicate_with, InitSpec, ReplicationSpec};
use truncsa::history::ObservationRecord;
use truncsa::models::{
    make_ar1_example, make_gamma_example, make_gamma_unbounded_example, make_polynomial_example, InformationMonitor,
    NoiseKind, PolySchedule,
};
use truncsa::specfun::{digamma_raw, log_grid, trigamma_raw, PositiveReal};
use truncsa::convex::TruncationSchedule;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within_budget(start: Instant, secs: f64) -> (bool, String) {
    let el = start.elapsed().as_secs_f64();
    (el < secs, format!("{el:.1}s of {secs:.0}s"))
}

// 1: projections

fn random_point(rng: &mut impl Rng, dim: usize, scale: f64) -> Vector {
    DVector::from_fn(dim, |_, _| rng.random_range(-scale..scale))
}

fn random_region(rng: &mut impl Rng, kind: usize) -> ConvexRegion {
    match kind {
        0 => {
            let a: f64 = rng.random_range(-5.0..5.0);
            let w: f64 = rng.random_range(0.0..5.0);
            ConvexRegion::interval(a, a + w).unwrap()
        }
        1 => {
            let dim = rng.random_range(1..=3);
            let lo = random_point(rng, dim, 5.0);
            let hi = DVector::from_fn(dim, |i, _| lo[i] + rng.random_range(0.0..5.0));
            ConvexRegion::boxed(lo, hi).unwrap()
        }
        2 => {
            let dim = rng.random_range(1..=3);
            ConvexRegion::ball(random_point(rng, dim, 5.0), rng.random_range(0.0..5.0)).unwrap()
        }
        _ => ConvexRegion::full_space(rng.random_range(1..=3)).unwrap(),
    }
}

/// A point of the region (projection of a random point is one).
fn member(rng: &mut impl Rng, r: &ConvexRegion) -> Vector {
    r.project(&random_point(rng, r.dim(), 10.0)).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = sim_rng(101, 0);
    let tol = 1e-12;
    let mut worst = [0.0f64; 3];
    let mut failures = 0usize;
    for kind in 0..4 {
        for _ in 0..10_000 {
            let r = random_region(&mut rng, kind);
            let x = random_point(&mut rng, r.dim(), 10.0);
            let y = random_point(&mut rng, r.dim(), 10.0);
            let px = r.project(&x).unwrap();
            let py = r.project(&y).unwrap();
            let idem = (r.project(&px).unwrap() - &px).norm();
            let expand = (&px - &py).norm() - (&x - &y).norm();
            // variational inequality (x − Px)ᵀ(w − Px) ≤ 0 for members w
            let mut opt = f64::NEG_INFINITY;
            for _ in 0..4 {
                let w = member(&mut rng, &r);
                opt = opt.max((&x - &px).dot(&(w - &px)));
            }
            worst[0] = worst[0].max(idem);
            worst[1] = worst[1].max(expand);
            worst[2] = worst[2].max(opt);
            if idem > tol || expand > tol || opt > tol || !r.contains(&px) {
                failures += 1;
            }
        }
    }
    let (fast, time) = within_budget(start, 10.0);
    outcome(
        failures == 0 && fast,
        format!(
            "4×10⁴ pairs, {failures} failures; worst idempotence {:.1e}, expansion {:.1e}, optimality {:.1e}; {time}",
            worst[0], worst[1], worst[2]
        ),
    )
}

// 2: special functions

/// Appendix series ψ'(x) = Σ_{n≥0} (x+n)^{−2}: N terms summed backwards plus
/// the midpoint Euler–Maclaurin remainder.
fn trigamma_series(x: f64, terms: usize) -> f64 {
    let m = x + terms as f64 - 0.5;
    let mut sum = 1.0 / m - 1.0 / (12.0 * m * m * m);
    for k in (0..terms).rev() {
        let d = x + k as f64;
        sum += 1.0 / (d * d);
    }
    sum
}

/// ψ(x) = −γ + Σ_{n≥0} (1/(n+1) − 1/(n+x)) with the same remainder scheme.
fn digamma_series(x: f64, terms: usize) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let m = terms as f64 - 0.5;
    let g_prime = -1.0 / ((m + 1.0) * (m + 1.0)) + 1.0 / ((m + x) * (m + x));
    let mut sum = ((m + x) / (m + 1.0)).ln() + g_prime / 24.0;
    for k in (0..terms).rev() {
        let n = k as f64;
        sum += (x - 1.0) / ((n + 1.0) * (n + x));
    }
    sum - EULER_GAMMA
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let lo = PositiveReal::new(1e-3).unwrap();
    let hi = PositiveReal::new(1e3).unwrap();
    let mut bound_failures = 0;
    for x in log_grid(lo, hi, 10_000) {
        let v = x.get();
        let tg = trigamma_raw(v);
        if !(1.0 / v <= tg && tg <= (1.0 + v) / (v * v) && digamma_raw(v) <= v.ln()) {
            bound_failures += 1;
        }
    }
    let mut rng = sim_rng(202, 0);
    let (mut worst_tri, mut worst_di) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let x: f64 = 100.0 * (1.0 - rng.random::<f64>());
        let t_ref = trigamma_series(x, 20_000);
        worst_tri = worst_tri.max((trigamma_raw(x) - t_ref).abs() / t_ref);
        let d_ref = digamma_series(x, 20_000);
        // ψ has a root near 1.46, so relative error is measured against max(|ψ|, 1)
        worst_di = worst_di.max((digamma_raw(x) - d_ref).abs() / d_ref.abs().max(1.0));
    }
    let (fast, time) = within_budget(start, 60.0);
    outcome(
        bound_failures == 0 && worst_tri <= 1e-12 && worst_di <= 1e-12 && fast,
        format!(
            "{bound_failures} bound failures on 10⁴ grid; series agreement trigamma {worst_tri:.1e}, digamma {worst_di:.1e}; {time}"
        ),
    )
}

// 3: martingale differences and moments

type StateSampler = Box<dyn Fn(&mut truncsa::fields::SimRng) -> (Vector, ObservationRecord)>;

fn models() -> Vec<(&'static str, Problem, StateSampler)> {
    let poly = make_polynomial_example(3, 1.0, 1.0, NoiseKind::Gaussian, PolySchedule::Power { c: 10.0, delta: 0.1 })
        .unwrap();
    let gamma = make_gamma_example(2.0, 0.5, 2.0).unwrap();
    let ar1 = make_ar1_example(0.5, 1.0).unwrap();
    let poly_h = poly.field.initial_record();
    let gamma_h = gamma.field.initial_record();
    vec![
        ("poly", poly, Box::new(move |rng| (dvector![rng.random_range(-3.0..3.0)], poly_h.clone()))),
        ("gamma", gamma, Box::new(move |rng| (dvector![rng.random_range(0.2..8.0)], gamma_h.clone()))),
        (
            "ar1",
            ar1,
            Box::new(|rng| {
                // a short AR(1) path so X_{t−1} varies between states
                let len = rng.random_range(1..50);
                let mut rows = vec![0.0];
                for _ in 0..len {
                    let xi: f64 = StandardNormal.sample(rng);
                    rows.push(0.5 * rows.last().unwrap() + xi);
                }
                (dvector![rng.random_range(-2.0..2.0)], ObservationRecord::with_rows(1, &rows))
            }),
        ),
    ]
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;
    let mut rng = sim_rng(303, 0);
    for (name, p, state) in models() {
        let field = p.field.as_ref();
        let (z, h) = state(&mut rng);
        let t = h.len().max(1);
        let n = 1_000_000usize;
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for k in 0..n {
            let s = eval_psi(field, t, &z, &h, &mut rng).unwrap();
            let e = s.psi[0] - s.r[0];
            let d = e - mean;
            mean += d / (k + 1) as f64;
            m2 += d * (e - mean);
        }
        let sd = (m2 / (n - 1) as f64).sqrt();
        let zscore = mean / (sd / (n as f64).sqrt());
        let ok_mean = zscore.abs() <= 4.0;

        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (z, h) = state(&mut rng);
            let t = h.len().max(1);
            for which in [Moment::Psi, Moment::Noise] {
                let analytic = match which {
                    Moment::Psi => field.second_moment(t, &z, &h),
                    Moment::Noise => field.noise_second_moment(t, &z, &h),
                }
                .unwrap();
                let est = second_moment_estimate(field, t, &z, &h, 20_000, which, &mut rng).unwrap();
                worst = worst.max(est.z_score(analytic).abs());
            }
        }
        let ok_mom = worst <= 4.0;
        pass &= ok_mean && ok_mom;
        notes.push(format!("{name}: mean z {zscore:+.2}, worst moment z {worst:.2}"));
    }
    let (fast, time) = within_budget(start, 120.0);
    outcome(pass && fast, format!("{}; {time}", notes.join("; ")))
}

// 4–6: convergence

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let p = make_polynomial_example(3, 1.0, 1.0, NoiseKind::Gaussian, PolySchedule::Power { c: 10.0, delta: 0.1 })
        .unwrap();
    let spec = ReplicationSpec {
        n_reps: 200,
        horizon: 100_000,
        checkpoints: vec![1000, 10_000],
        seed: 4,
        init: InitSpec::Uniform { lo: -5.0, hi: 5.0 },
        decay_factor: 3.0,
        threads: None,
    };
    let r = replicate(&p, &spec).unwrap();
    let m1 = r.checkpoint(1000).unwrap().median;
    let m3 = r.checkpoint(10_000).unwrap().median;
    let m_final = r.checkpoint(100_000).unwrap().median;
    let (fast, time) = within_budget(start, 300.0);
    outcome(
        m_final <= m1 / 3.0 && m_final <= 0.1 && r.failures == 0 && fast,
        format!(
            "medians t=10³ {m1:.4}, 10⁴ {m3:.4}, 10⁵ {m_final:.4}; ratio {:.2} (need ≥ 3), final ≤ 0.1 {}; {time}",
            m1 / m_final,
            m_final <= 0.1
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let p = make_gamma_example(2.0, 0.5, 2.0).unwrap();
    let spec = ReplicationSpec {
        n_reps: 200,
        horizon: 100_000,
        checkpoints: vec![1000, 10_000],
        seed: 5,
        init: InitSpec::Uniform { lo: 0.5, hi: 5.0 },
        decay_factor: 10.0,
        threads: None,
    };
    let r = replicate(&p, &spec).unwrap();
    let med: Vec<f64> = r.checkpoints.iter().map(|c| c.median).collect();
    let decreasing = med.windows(2).all(|w| w[1] < w[0]);
    let final_rate = r.checkpoints.last().unwrap().truncation_rate;
    let (fast, time) = within_budget(start, 600.0);
    outcome(
        decreasing && med[2] <= 0.05 && final_rate <= 1e-3 && r.failures == 0 && fast,
        format!(
            "medians {:.4}/{:.4}/{:.4}; final-decade truncation rate {final_rate:.1e} (≤ 1e-3); {time}",
            med[0], med[1], med[2]
        ),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let horizon = 100_000;
    let mut lines = Vec::new();
    let (mut a_ok, mut b_ok, mut c_ok) = (true, true, true);
    for theta in [0.5, 1.0, 1.5] {
        let p = make_ar1_example(theta, 1.0).unwrap();
        let spec = ReplicationSpec {
            n_reps: 100,
            horizon,
            checkpoints: vec![10, 100, 1000, 10_000],
            seed: 6,
            init: InitSpec::Uniform { lo: -1.0, hi: 1.0 },
            decay_factor: 10.0,
            threads: None,
        };
        let (r, mons) =
            replicate_with(&p, &spec, |_| InformationMonitor::new(vec![horizon / 100, horizon / 10, horizon]))
                .unwrap();
        let converging = r.verdict.converging && r.failures == 0;
        // per replication: share of Σ Î⁻²X² added in the last decade, and
        // growth factor of Σ Î⁻¹X² over the last decade
        let mut tail_share = Vec::new();
        let mut growth = Vec::new();
        for m in &mons {
            let (s1_mid, s2_mid) = m.at(horizon / 10).unwrap();
            let (s1_end, s2_end) = m.at(horizon).unwrap();
            tail_share.push(if s2_end > 0.0 { (s2_end - s2_mid) / s2_end } else { 0.0 });
            growth.push(s1_end / s1_mid);
        }
        tail_share.sort_by(f64::total_cmp);
        growth.sort_by(f64::total_cmp);
        let share = quantile(&tail_share, 0.5);
        let grow = quantile(&growth, 0.5);
        a_ok &= converging;
        b_ok &= share <= 1e-3;
        c_ok &= grow >= 2.0;
        lines.push(format!(
            "θ={theta}: decay {:.3e} {}, Σ Î⁻²X² last-decade share {share:.1e}, Σ Î⁻¹X² growth {grow:.2}×",
            r.verdict.decay_ratio,
            if converging { "converging" } else { "not converging" }
        ));
    }
    let (fast, time) = within_budget(start, 600.0);
    let tag = |b: bool| if b { "pass" } else { "FAIL" };
    outcome(
        a_ok && b_ok && c_ok && fast,
        format!(
            "6a converging {} / 6b tail → 0 {} / 6c growth ≥ 2× {}; {}; {time}",
            tag(a_ok),
            tag(b_ok),
            tag(c_ok),
            lines.join("; ")
        ),
    )
}

// 7: monitors

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let p = make_gamma_example(2.0, 0.5, 2.0).unwrap();
    let horizon = 100_000;
    let init = InitSpec::Uniform { lo: 0.5, hi: 5.0 };
    let mut good = 0;
    let (mut s_plus_ok, mut cc_ok, mut sign_ok) = (0, 0, 0);
    for seed in 0..100u64 {
        let config = MonitorConfig { grid: 32, lemma_infima: false, seed, ..MonitorConfig::default() };
        let z0 = init.draw(1, seed, 0).unwrap();
        let (_, mon) = diagnose(&p, z0, horizon, seed, 0, &RecordPlan::Every(horizon), Arc::new(SquaredNorm), config)
            .unwrap();
        let rep = mon.report();
        let a = rep.series("s_plus").unwrap().verdict == Verdict::SummableLooking;
        let b = rep.cc_diverging();
        let c = rep.sign_condition.as_ref().unwrap().holds;
        s_plus_ok += a as usize;
        cc_ok += b as usize;
        sign_ok += c as usize;
        good += (a && b && c) as usize;
    }

    let unbounded = make_gamma_unbounded_example(2.0, 0.5).unwrap();
    let config = MonitorConfig { grid: 256, lemma_infima: false, ..MonitorConfig::default() };
    let (_, mon) =
        diagnose(&unbounded, dvector![1.0], 1000, 0, 0, &RecordPlan::Every(1000), Arc::new(SquaredNorm), config).unwrap();
    let probe = mon.report().window_probe.unwrap();
    let (fast, time) = within_budget(start, 600.0);
    outcome(
        good >= 95 && probe.unbounded_growth && fast,
        format!(
            "{good}/100 seeds coherent (s_plus {s_plus_ok}, cc {cc_ok}, sign {sign_ok}); β=∞ r-sup over windows {:?} flagged {}; {time}",
            probe.r_sup.iter().map(|r| format!("{r:.1}")).collect::<Vec<_>>(),
            probe.unbounded_growth
        ),
    )
}

// 8: generic vs specialized

fn criterion_8() -> Outcome {
    let mut rng = sim_rng(808, 0);
    let mut worst: f64 = 0.0;
    let identity = QuadraticForm::new(Matrix::identity(1, 1)).unwrap();
    for _ in 0..1000 {
        let slope: f64 = rng.random_range(0.1..5.0);
        let root: f64 = rng.random_range(-5.0..5.0);
        let sigma: f64 = rng.random_range(0.0..3.0);
        let gamma: f64 = rng.random_range(0.0..2.0);
        let u = dvector![rng.random_range(-10.0..10.0)];
        let p = Problem::new(
            Arc::new(LinearField::scalar(slope, root, sigma)),
            Arc::new(ConstantStep { c: gamma }),
            TruncationSchedule::unrestricted(1).unwrap(),
        );
        let h = p.field.initial_record();
        let r = dvector![-slope * u[0]];
        let m2 = r[0] * r[0] + sigma * sigma;
        let closed = n_t_closed_form(&u, gamma, &r, m2);
        let mut m = MomentSource::analytic_only();
        for lyap in [&SquaredNorm as &dyn truncsa::diagnostics::Lyapunov, &identity] {
            let generic = n_t(&p, lyap, &dvector![root], 1, &u, &h, &mut m).unwrap();
            worst = worst.max((generic - closed).abs() / closed.abs().max(1.0));
        }
    }

    // recursive least squares by hand against the engine, same draws
    let (theta, i0, theta0, steps, seed) = (0.5, 1.0, 0.2, 10_000, 88);
    let p = make_ar1_example(theta, i0).unwrap();
    let traj = run_with(&p, dvector![theta0], steps, seed, 0, &RecordPlan::Every(1), &mut NoHook).unwrap();
    let mut draws = sim_rng(seed, 0);
    let (mut x_prev, mut s, mut est) = (0.0f64, 0.0f64, theta0);
    let mut identical = 0;
    for row in &traj.rows {
        let xi: f64 = StandardNormal.sample(&mut draws);
        let x = theta * x_prev + xi;
        s += x_prev * x_prev;
        let i_hat = i0 + s;
        est += (1.0 / i_hat) * (x_prev * (x - est * x_prev));
        x_prev = x;
        identical += (row.z[0].to_bits() == est.to_bits()) as usize;
    }
    outcome(
        worst <= 1e-12 && identical == steps,
        format!("𝒩 generic vs closed form worst {worst:.1e} on 10³ inputs; RLS bitwise identical on {identical}/{steps} steps"),
    )
}

// 9: reproducibility

fn read_dir_sorted(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_trunc-sa");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "model.name = \"gamma\"\nhorizon = 5000\nrecord_every = 50\nseed = 9\nreplicate.n_reps = 24\n\
         diagnostics.enabled = true\ndiagnostics.grid = 16\n",
    )
    .unwrap();
    let go = |cmd: &str, out: &str, threads: &str| {
        let status = Command::new(bin)
            .args([cmd, "--config", cfg.to_str().unwrap(), "--out", tmp.path().join(out).to_str().unwrap()])
            .env("TRUNC_SA_THREADS", threads)
            .output()
            .unwrap()
            .status;
        assert!(status.success(), "{cmd} failed");
        read_dir_sorted(&tmp.path().join(out))
    };
    let run_same = go("run", "run_a", "1") == go("run", "run_b", "1");
    let diag_same = go("diagnose", "diag_a", "1") == go("diagnose", "diag_b", "1");
    let serial = go("replicate", "rep_serial", "1");
    let parallel = go("replicate", "rep_parallel", "4");
    let rep_same = serial == parallel && serial == go("replicate", "rep_serial_2", "1");
    outcome(
        run_same && diag_same && rep_same,
        format!(
            "run twice identical {run_same}; diagnose twice identical {diag_same}; replicate serial = 4 threads = rerun {rep_same} ({} files)",
            serial.len()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters are irrelevant here; run everything
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("projection suite", criterion_1),
        ("special functions", criterion_2),
        ("martingale differences and moments", criterion_3),
        ("polynomial root convergence", criterion_4),
        ("gamma shape convergence", criterion_5),
        ("AR(1) least squares without truncation", criterion_6),
        ("condition monitor coherence", criterion_7),
        ("generic/specialized equivalence", criterion_8),
        ("reproducibility", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {} [{}] {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
