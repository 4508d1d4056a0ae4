//! Acceptance run: one `[PASS]`/`[FAIL]` line per criterion, nonzero exit
//! status if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use ldpwave::harness::{
    audit_sweep, concentration_check, monte_carlo_risk, rate_study, released_sums, NoiseMode, Scenario,
};
use ldpwave::spec::{spike_density, ExperimentSpec};
use ldpwave_core::density::Density;
use ldpwave_core::estimator::{
    adaptive_estimate, choose_adaptive_levels, choose_linear_level, linear_estimate, EstimatorMode,
};
use ldpwave_core::privacy::{laplace_sample, Mechanism, MechanismConfig, MechanismVariant};
use ldpwave_core::risk::{theoretical_exponent, PrivacyRegime, RiskGrid, RiskReport};
use ldpwave_core::seed::derive_path;
use ldpwave_core::wavelet::{Family, WaveletBasis, WaveletKind};
use ldpwave_core::CoefficientSet;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SEED: u64 = 0x1d9_5eed;

// Criterion 1
const AUDIT_SLACK: f64 = 1e-9;
const AUDIT_STEP: f64 = 1.0 / 1024.0;
const AUDIT_SECONDS: f64 = 60.0;
// Criterion 2
const LAPLACE_DRAWS: usize = 1_000_000;
const LAPLACE_ABS_TOL: f64 = 0.01;
const LAPLACE_SQ_TOL: f64 = 0.1;
// Criterion 3
const PHI1_TOL: f64 = 1e-4;
const PARTITION_TOL: f64 = 1e-6;
const ORTHO_TOL: f64 = 1e-5;
const NORM_TOL: f64 = 1e-4;
// Criterion 4
const UNBIASED_REPEATS: usize = 100_000;
const UNBIASED_SE: f64 = 3.0;
const UNBIASED_FAIL_FRACTION: f64 = 0.01;
const UNBIASED_SECONDS: f64 = 120.0;
// Criterion 5
const RATE_REPS: usize = 200;
const RATE_TOL: f64 = 0.15;
const RATE_SECONDS: f64 = 1800.0;
// Criteria 6 and 9
const ORDER_SE: f64 = 2.0;
// Criterion 7
const CONC_SE: f64 = 3.0;
// Criterion 8
const TRUNCATION_FACTOR: f64 = 2.0;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn basis(family: Family) -> Arc<WaveletBasis> {
    Arc::new(WaveletBasis::build(family, 12).expect("basis"))
}

fn dense_scenario() -> Scenario {
    ExperimentSpec::default().scenario().expect("default scenario")
}

fn gap_ok(hi: &RiskReport, lo: &RiskReport) -> (bool, f64, f64) {
    let se = (hi.risk_stderr.powi(2) + lo.risk_stderr.powi(2)).sqrt();
    (hi.risk_mean - lo.risk_mean > -ORDER_SE * se, hi.risk_mean - lo.risk_mean, se)
}

fn criterion1() -> Outcome {
    let mut configs = Vec::new();
    for family in [Family::Haar, Family::Daubechies(4)] {
        let b = basis(family);
        for alpha in [0.5, 1.0, 2.0] {
            for j1 in [3, 5] {
                configs.push((b.clone(), MechanismVariant::Mechanism1, alpha, 0, j1));
            }
            for j0 in [0, 2] {
                for j1 in [4, 6] {
                    configs.push((b.clone(), MechanismVariant::Mechanism2, alpha, j0, j1));
                }
            }
        }
    }
    let mut worst_margin = f64::INFINITY;
    let mut slowest = 0.0f64;
    let mut failures = Vec::new();
    for (b, variant, alpha, j0, j1) in &configs {
        let start = Instant::now();
        let mech = Mechanism::new(MechanismConfig {
            variant: *variant,
            alpha: *alpha,
            j0: *j0,
            j1: *j1,
            nu: 2.0,
            basis: b.clone(),
            support_t: 1.0,
        })
        .expect("mechanism");
        let summary = audit_sweep(&mech, -1.0, 1.0, AUDIT_STEP).expect("audit");
        let analytic = mech.father_budget() + mech.mother_budget();
        let secs = start.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        worst_margin = worst_margin.min(alpha - summary.max);
        if summary.max > alpha + AUDIT_SLACK || analytic > alpha + AUDIT_SLACK || secs > AUDIT_SECONDS {
            failures.push(format!(
                "{} {variant} a={alpha} j0={j0} j1={j1}: max={} bound={analytic}",
                b.family(),
                summary.max
            ));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} configs, min(alpha - max log-ratio) = {worst_margin:.3e}, slowest {slowest:.1}s{}",
            configs.len(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(" | ")) }
        ),
    )
}

fn criterion2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_path(SEED, &[2]));
    let (mut abs, mut sq) = (0.0, 0.0);
    for _ in 0..LAPLACE_DRAWS {
        let w = laplace_sample(2.0, &mut rng);
        abs += w.abs();
        sq += w * w;
    }
    abs /= LAPLACE_DRAWS as f64;
    sq /= LAPLACE_DRAWS as f64;
    let pass = (abs - 2.0).abs() <= LAPLACE_ABS_TOL && (sq - 8.0).abs() <= LAPLACE_SQ_TOL;
    outcome(pass, format!("mean|W| = {abs:.5} (2 +- {LAPLACE_ABS_TOL}), mean W^2 = {sq:.4} (8 +- {LAPLACE_SQ_TOL})"))
}

/// Values of the db2 scaling function at 1 and 2 from the refinement
/// equation `phi(k) = sqrt2 sum_m h_m phi(2k - m)`, normalised to sum 1.
fn db2_integer_values() -> (f64, f64) {
    let s3 = 3f64.sqrt();
    let h = [1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3].map(|v| v / (4.0 * 2f64.sqrt()));
    let r = 2f64.sqrt();
    // Rows: phi(1) = r (h1 phi(1) + h0 phi(2)); phi(2) = r (h3 phi(1) + h2 phi(2)).
    let m = [[r * h[1], r * h[0]], [r * h[3], r * h[2]]];
    // Eigenvector of m for eigenvalue 1: (m - I) v = 0.
    let (a, b) = (m[0][0] - 1.0, m[0][1]);
    let (v1, v2) = (b, -a);
    let sum = v1 + v2;
    (v1 / sum, v2 / sum)
}

fn criterion3() -> Outcome {
    let db2 = basis(Family::Daubechies(2));
    let (o1, o2) = db2_integer_values();
    let phi1 = db2.eval(WaveletKind::Father, 1.0);
    let phi2 = db2.eval(WaveletKind::Father, 2.0);
    let phi_err = (phi1 - o1).abs().max((phi2 - o2).abs());

    let db4 = basis(Family::Daubechies(4));
    let partition = (-10..=10).map(|k| db4.eval(WaveletKind::Father, 0.3 - k as f64)).sum::<f64>();
    let partition_err = (partition - 1.0).abs();

    // Trapezoid rule on the dyadic table grid; the tables are piecewise
    // linear between grid points.
    let mut ortho: f64 = 0.0;
    let mut norm: f64 = 0.0;
    for b in [&db2, &db4] {
        let h = 2f64.powi(-12);
        let (lo, hi) = b.support(WaveletKind::Father);
        let pts = ((hi - lo) / h).round() as i64;
        let inner = |f: &dyn Fn(f64) -> f64| {
            (0..=pts).map(|i| f(lo + i as f64 * h) * if i == 0 || i == pts { 0.5 } else { 1.0 }).sum::<f64>() * h
        };
        for kind in [WaveletKind::Father, WaveletKind::Mother] {
            let e = |x: f64| b.eval(kind, x);
            norm = norm.max((inner(&|x| e(x) * e(x)) - 1.0).abs());
            for k in 1..(hi - lo) as i64 {
                ortho = ortho.max(inner(&|x| e(x) * b.eval(kind, x - k as f64)).abs());
            }
        }
        for k in -((hi - lo) as i64)..(hi - lo) as i64 {
            ortho =
                ortho.max(inner(&|x| b.eval(WaveletKind::Father, x) * b.eval(WaveletKind::Mother, x - k as f64)).abs());
        }
    }
    let pass = phi_err <= PHI1_TOL && partition_err <= PARTITION_TOL && ortho <= ORTHO_TOL && norm <= NORM_TOL;
    outcome(
        pass,
        format!(
            "db2 phi(1) = {phi1:.6} vs oracle {o1:.6} (err {phi_err:.1e}); db4 partition err {partition_err:.1e}; \
             max |<e_0, e_k>| = {ortho:.1e}; max |norm^2 - 1| = {norm:.1e}"
        ),
    )
}

fn criterion4() -> Outcome {
    let start = Instant::now();
    let truth = Density::uniform(0.0, 1.0).expect("uniform");
    let b = basis(Family::Haar);
    let mech = Mechanism::new(MechanismConfig {
        variant: MechanismVariant::Mechanism1,
        alpha: 1.0,
        j0: 0,
        j1: 8,
        nu: 2.0,
        basis: b.clone(),
        support_t: 1.0,
    })
    .expect("mechanism");
    let slots = mech.layout().len();
    let (sum, sq) = (0..UNBIASED_REPEATS)
        .into_par_iter()
        .fold(
            || (vec![0.0; slots], vec![0.0; slots], vec![0.0; slots]),
            |(mut s, mut q, mut buf), i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_path(SEED, &[4, i as u64]));
                let x = truth.draw(&mut rng);
                mech.privatize_into(x, &mut rng, &mut buf);
                for ((s, q), z) in s.iter_mut().zip(q.iter_mut()).zip(&buf) {
                    *s += z;
                    *q += z * z;
                }
                (s, q, buf)
            },
        )
        .map(|(s, q, _)| (s, q))
        .reduce(
            || (vec![0.0; slots], vec![0.0; slots]),
            |(mut s, mut q), (s2, q2)| {
                s.iter_mut().zip(&s2).for_each(|(a, b)| *a += b);
                q.iter_mut().zip(&q2).for_each(|(a, b)| *a += b);
                (s, q)
            },
        );
    let truth_coeffs = truth.project(&b, mech.layout().clone());
    let n = UNBIASED_REPEATS as f64;
    let mut failing = 0;
    let mut worst: f64 = 0.0;
    for i in 0..slots {
        let mean = sum[i] / n;
        let var = (sq[i] / n - mean * mean) * n / (n - 1.0);
        let z = (mean - truth_coeffs.values()[i]).abs() / (var / n).sqrt();
        worst = worst.max(z);
        if z > UNBIASED_SE {
            failing += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let fraction = failing as f64 / slots as f64;
    outcome(
        fraction < UNBIASED_FAIL_FRACTION && secs <= UNBIASED_SECONDS,
        format!(
            "{failing}/{slots} slots beyond {UNBIASED_SE} SE ({:.2}%), largest |z| = {worst:.2}, {secs:.1}s",
            100.0 * fraction
        ),
    )
}

fn criterion5() -> Outcome {
    let start = Instant::now();
    let spec = ExperimentSpec::default();
    let base = dense_scenario();
    let mut pass = true;
    let mut parts = Vec::new();
    for (alpha, privacy) in [(1.0, PrivacyRegime::Private), (1e6, PrivacyRegime::NonPrivate)] {
        let (exponent, regime) = theoretical_exponent(1.0, 2.0, 2.0, 2.0, privacy).expect("exponent");
        let sc = base.with_alpha(alpha);
        let study = rate_study(&sc, &spec.n_grid, RATE_REPS, SEED, NoiseMode::Aggregated, exponent, regime)
            .expect("rate study");
        let slope = study.fitted_exponent();
        pass &= (slope + exponent).abs() <= RATE_TOL;
        parts.push(format!(
            "alpha={alpha:e}: slope {slope:.3} +- {:.3} vs {:.3}{}",
            study.fit.slope_stderr,
            -exponent,
            if study.dropped_smallest { " (smallest n dropped)" } else { "" }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= RATE_SECONDS;
    outcome(pass, format!("{} (tol {RATE_TOL}), {secs:.0}s", parts.join("; ")))
}

fn criterion6() -> Outcome {
    let n = 1 << 16;
    let b = basis(Family::Daubechies(2));
    let f0 = Density::reference(1.0, 0.5, (-0.5, 0.5)).expect("f0");
    let truth = Arc::new(spike_density(&f0, b.clone(), 5, 3, 0.9).expect("spike"));
    let linear =
        Scenario { id: "spike-linear".into(), truth, variant: MechanismVariant::Mechanism1, ..dense_scenario() };
    let mut adaptive =
        Scenario { id: "spike-adaptive".into(), variant: MechanismVariant::Mechanism2, ..linear.clone() };
    adaptive.estimator.mode = EstimatorMode::Adaptive;
    let (j0, j1) = choose_adaptive_levels(n, 1.0, adaptive.estimator.big_n).expect("levels");
    let lin = monte_carlo_risk(&linear, n, RATE_REPS, SEED, NoiseMode::Aggregated).expect("linear");
    let ada = monte_carlo_risk(&adaptive, n, RATE_REPS, SEED, NoiseMode::Aggregated).expect("adaptive");
    let se = (lin.risk_stderr.powi(2) + ada.risk_stderr.powi(2)).sqrt();
    let gap = lin.risk_mean - ada.risk_mean;
    outcome(
        gap > ORDER_SE * se,
        format!(
            "adaptive (j0={j0}, j1={j1}) {:.4} +- {:.4} vs linear (j1={}) {:.4} +- {:.4}; gap {gap:.4} vs {ORDER_SE} x {se:.4}",
            ada.risk_mean,
            ada.risk_stderr,
            choose_linear_level(n, 1.0, 1.0),
            lin.risk_mean,
            lin.risk_stderr
        ),
    )
}

fn criterion7() -> Outcome {
    let sc = dense_scenario();
    let c_bar = sc.truth.sup_estimate();
    let reps = 10_000;
    let c = concentration_check(&sc.truth, sc.basis.clone(), 1.0, 2.0, 3, 0, 10_000, 1.0, reps, SEED, c_bar)
        .expect("check");
    let limit = c.bound + CONC_SE * (c.bound * (1.0 - c.bound) / reps as f64).sqrt();
    outcome(
        c.empirical_prob <= limit,
        format!(
            "exceedance {}/{} = {:.4} <= {limit:.4} (bound {}); radius {:.3}, deviation sd {:.3}",
            c.exceedances, c.reps, c.empirical_prob, c.bound, c.radius, c.deviation_sd
        ),
    )
}

fn criterion8() -> Outcome {
    let n = 1 << 18;
    let sc = dense_scenario();
    let mut cfg = sc.estimator_config(n);
    cfg.mode = EstimatorMode::Adaptive;
    cfg.alpha = 1e6;
    cfg.k_override = Some(0.0);
    let mech = Mechanism::new(MechanismConfig {
        variant: MechanismVariant::Mechanism2,
        alpha: 1e6,
        j0: 0,
        j1: 2,
        nu: cfg.nu,
        basis: sc.basis.clone(),
        support_t: sc.truth.support_t(),
    })
    .expect("mechanism");
    let sums = released_sums(&sc.truth, &mech, n, derive_path(SEED, &[8]), NoiseMode::Aggregated).expect("sums");
    let values = sums.iter().map(|s| s / n as f64).collect();
    let coeffs = CoefficientSet::from_values(mech.layout().clone(), values).expect("coeffs");
    let ada = adaptive_estimate(&coeffs, sc.basis.clone(), &cfg, mech.config().nu).expect("adaptive");
    let lin = linear_estimate(&coeffs, sc.basis.clone(), 2).expect("linear");
    let identical = ada.coeffs.values() == lin.coeffs.values();

    let projection = sc.truth.project(&sc.basis, mech.layout().clone());
    let grid = RiskGrid::covering(&sc.truth, mech.layout().function_support(&sc.basis), 1 << 16);
    let l2 =
        |f: &dyn Fn(f64) -> f64| grid.risk_of_values(&grid.xs.iter().map(|&x| f(x)).collect::<Vec<_>>(), 2.0).sqrt();
    let truncation = l2(&|x| projection.evaluate(&sc.basis, x));
    let err_ada = l2(&|x| ada.eval(x));
    let err_lin = l2(&|x| lin.eval(x));
    outcome(
        identical && err_ada <= TRUNCATION_FACTOR * truncation && err_lin <= TRUNCATION_FACTOR * truncation,
        format!(
            "coefficients identical: {identical}; L2 error {err_ada:.5} (adaptive), {err_lin:.5} (linear) vs truncation {truncation:.5}"
        ),
    )
}

fn criterion9() -> Outcome {
    let n = 1 << 14;
    let base = dense_scenario();
    let reports: Vec<RiskReport> = [0.5, 2.0, 1e6]
        .iter()
        .map(|&a| monte_carlo_risk(&base.with_alpha(a), n, RATE_REPS, SEED, NoiseMode::Aggregated).expect("risk"))
        .collect();
    let (ok1, d1, s1) = gap_ok(&reports[0], &reports[1]);
    let (ok2, d2, s2) = gap_ok(&reports[1], &reports[2]);
    outcome(
        ok1 && ok2,
        format!(
            "risk {:.4} (a=0.5) / {:.4} (a=2) / {:.5} (a=1e6); gaps {d1:.4} (se {s1:.4}), {d2:.4} (se {s2:.4})",
            reports[0].risk_mean, reports[1].risk_mean, reports[2].risk_mean
        ),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("read dir") {
        let path = entry.expect("entry").path();
        if path.is_dir() {
            for (k, v) in read_tree(&path) {
                files.insert(format!("{}/{k}", path.file_name().unwrap().to_string_lossy()), v);
            }
        } else {
            files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).expect("read"));
        }
    }
    files
}

fn criterion10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_ldpwave");
    let tmp = tempfile::tempdir().expect("tempdir");
    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"scenario": {"mechanism": {"variant": "mechanism2", "nu": 2}, "estimator": {"mode": "adaptive", "nu": 2, "normalize": true}},
            "n": 2000, "n_grid": [256, 512, 1024, 2048], "reps": 8, "master_seed": 99}"#,
    )
    .expect("spec");
    let spec = spec.to_str().unwrap().to_string();
    let run = |out: &str, threads: &str, args: &[&str]| -> Option<String> {
        let o = Command::new(bin)
            .current_dir(tmp.path())
            .args(["--spec", &spec, "--out", out, "--threads", threads])
            .args(args)
            .output()
            .ok()?;
        o.status.success().then(|| String::from_utf8_lossy(&o.stdout).trim().to_string())
    };
    let records = match run("seed-records", "1", &["privatize"]) {
        Some(dir) => tmp.path().join(dir).join("records.csv"),
        None => return outcome(false, "privatize failed".into()),
    };
    let records = records.to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("privatize", vec!["privatize"]),
        ("estimate", vec!["estimate", "--records", &records]),
        ("audit", vec!["audit", "--step", "0.00390625"]),
        ("rate-study", vec!["rate-study"]),
        ("dump-basis", vec!["dump-basis"]),
    ];
    let mut failures = Vec::new();
    let mut files = 0;
    for (name, args) in &commands {
        let mut trees = Vec::new();
        for (i, threads) in ["1", "3", "1"].iter().enumerate() {
            let out = format!("out-{name}-{i}");
            if run(&out, threads, args).is_none() {
                failures.push(format!("{name} exited nonzero"));
                break;
            }
            trees.push(read_tree(&tmp.path().join(&out)));
        }
        if trees.len() == 3 {
            files += trees[0].len();
            if trees[0].is_empty() || trees.iter().any(|t| t != &trees[0]) {
                failures.push(format!("{name} outputs differ"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} subcommands x threads {{1, 3, 1}}, {files} files compared{}",
            commands.len(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join(", ")) }
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("privacy audit", criterion1),
        ("Laplace moments", criterion2),
        ("basis correctness", criterion3),
        ("unbiasedness", criterion4),
        ("linear-estimator rate", criterion5),
        ("adaptive sparse advantage", criterion6),
        ("concentration", criterion7),
        ("noise-free degeneration", criterion8),
        ("monotone information", criterion9),
        ("determinism", criterion10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {name}: {} [{:.1}s]", result.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
