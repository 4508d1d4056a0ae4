//! The `ldpwave` command line: `privatize`, `estimate`, `audit`,
//! `rate-study` and `dump-basis`.
//!
//! Every command writes into `<out>/<command>-<digest>`, where the digest
//! covers the spec and every flag that affects the output (but not
//! `--threads`). Rerunning a command reproduces the same bytes; a
//! different result in an existing directory is refused.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ldpwave_core::estimator::{empirical_coefficients, estimate, EstimatorMode};
use ldpwave_core::privacy::{Mechanism, MechanismConfig, MechanismVariant};
use ldpwave_core::risk::{RateStudy, RiskReport};
use ldpwave_core::seed::{derive, derive_path};
use ldpwave_core::wavelet::{Family, WaveletBasis};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::harness::{audit_sweep, rate_study, NoiseMode};
use crate::io::{csv_bytes, read_records_file, sha256_hex, write_records, RunDir};
use crate::spec::{ExperimentSpec, Format};

/// Slack on the audit comparison `max <= alpha`.
pub const AUDIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "ldpwave", version, about = "Locally private wavelet density estimation")]
pub struct Cli {
    /// Experiment spec (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Master seed; overrides the spec.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; overrides the spec.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Does not change any output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write only this format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sample from the scenario's truth and release privatised records.
    Privatize {
        /// Number of records (default: the spec's `n`).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Estimate the density from a records file.
    Estimate {
        #[arg(long)]
        records: PathBuf,
        /// linear or adaptive (default: the spec's estimator mode).
        #[arg(long)]
        mode: Option<EstimatorMode>,
        /// Must equal the records' nu for the adaptive estimator.
        #[arg(long)]
        nu: Option<f64>,
        /// Threshold constant K.
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        l_bar: Option<f64>,
        /// Evaluation points over [-T, T].
        #[arg(long, default_value_t = 1025)]
        grid_points: usize,
        /// Also write the clipped and renormalised estimate.
        #[arg(long)]
        normalize: bool,
    },
    /// Sweep all input pairs on a grid and report the worst log-ratio.
    Audit {
        /// Grid step (default: the spec's, else 2^-(depth - 2)).
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        family: Option<Family>,
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        variant: Option<MechanismVariant>,
        #[arg(long)]
        j0: Option<i32>,
        #[arg(long)]
        j1: Option<i32>,
        #[arg(long)]
        nu: Option<f64>,
    },
    /// Monte Carlo risk over the spec's n grid and the fitted slope.
    RateStudy {
        #[arg(long)]
        reps: Option<usize>,
        /// Replace the pipeline by lognormal risks `n^-e`; checks the fit.
        #[arg(long, value_name = "EXPONENT")]
        synthetic: Option<f64>,
    },
    /// Tabulate the scenario's father and mother wavelets.
    DumpBasis,
}

struct Context {
    spec: ExperimentSpec,
    formats: Vec<Format>,
}

impl Context {
    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn run_dir(&self, command: &str, key: &str) -> Result<RunDir> {
        // The output root is where results go, not what they are.
        let mut content = self.spec.clone();
        content.outputs = PathBuf::new();
        let digest = sha256_hex(format!("{command}\n{}\n{key}", content.canonical_json()).as_bytes());
        RunDir::create(&self.spec.outputs, command, &digest)
    }
}

/// Run a parsed command line; returns the run directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let mut spec = match &cli.spec {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.outputs = out.clone();
    }
    let formats = cli.format.map_or_else(|| spec.formats.clone(), |f| vec![f]);
    let ctx = Context { spec, formats };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Privatize { n } => privatize(&ctx, n),
        Command::Estimate { records, mode, nu, k, gamma, l_bar, grid_points, normalize } => {
            estimate_cmd(&ctx, EstimateArgs { records, mode, nu, k, gamma, l_bar, grid_points, normalize })
        }
        Command::Audit { step, family, depth, alpha, variant, j0, j1, nu } => {
            audit(&ctx, AuditArgs { step, family, depth, alpha, variant, j0, j1, nu })
        }
        Command::RateStudy { reps, synthetic } => rate_study_cmd(&ctx, reps, synthetic),
        Command::DumpBasis => dump_basis(&ctx),
    })
}

fn privatize(ctx: &Context, n: Option<usize>) -> Result<PathBuf> {
    let spec = &ctx.spec;
    let n = n.unwrap_or(spec.n);
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let scenario = spec.scenario()?;
    let mechanism = scenario.mechanism(n)?;
    let master = spec.master_seed;
    let data = scenario.truth.sample(n, derive(master, 0));
    let slots: Vec<Vec<f64>> = data
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_path(master, &[1, i as u64]));
            mechanism.privatize(x, &mut rng).slots
        })
        .collect();
    let mut bytes = Vec::new();
    write_records(&mut bytes, &mechanism, &slots)?;
    let dir = ctx.run_dir("privatize", &format!("n={n}"))?;
    dir.write("records.csv", &bytes)?;
    Ok(dir.path)
}

struct EstimateArgs {
    records: PathBuf,
    mode: Option<EstimatorMode>,
    nu: Option<f64>,
    k: Option<f64>,
    gamma: Option<f64>,
    l_bar: Option<f64>,
    grid_points: usize,
    normalize: bool,
}

fn estimate_cmd(ctx: &Context, args: EstimateArgs) -> Result<PathBuf> {
    if args.grid_points < 2 {
        return Err(Error::Config("grid-points must be at least 2".into()));
    }
    let bytes = std::fs::read(&args.records).map_err(|e| Error::io(&args.records, e))?;
    let records_digest = sha256_hex(&bytes);
    let batch = read_records_file(&args.records)?;
    if batch.records.is_empty() {
        return Err(ldpwave_core::Error::EmptyRecords.into());
    }
    let header = &batch.header;
    let est_spec = &ctx.spec.scenario.estimator;
    let mut config = ctx.spec.scenario()?.estimator;
    config.mode = args.mode.unwrap_or(est_spec.mode()?);
    config.n = batch.records.len();
    config.alpha = header.alpha;
    // Without an explicit nu the estimator follows the records.
    config.nu = args.nu.unwrap_or(header.nu);
    config.gamma_t = args.gamma.or(config.gamma_t);
    config.k_override = args.k.or(config.k_override);
    config.l_bar = args.l_bar.unwrap_or(config.l_bar);
    let normalize = args.normalize || est_spec.normalize;

    let coeffs = empirical_coefficients(&batch.records)?;
    let est = estimate(&coeffs, &config, batch.mechanism.config())?;
    let meta = &est.meta;

    let key = format!(
        "records={records_digest} mode={} nu={} k={:?} gamma={:?} l_bar={} grid={} normalize={normalize}",
        config.mode, config.nu, config.k_override, config.gamma_t, config.l_bar, args.grid_points
    );
    let dir = ctx.run_dir("estimate", &key)?;
    if ctx.wants(Format::Json) {
        let levels: Vec<_> = meta
            .levels
            .iter()
            .map(|l| json!({"j": l.label, "threshold": l.threshold, "kept": l.kept, "total": l.total}))
            .collect();
        let doc = json!({
            "mode": meta.mode.to_string(),
            "variant": header.variant.to_string(),
            "j0": meta.j0,
            "j1": meta.j1,
            "n": config.n,
            "alpha": header.alpha,
            "nu": config.nu,
            "off_theorem": meta.off_theorem,
            "k_constant": meta.k_constant,
            "gamma_t": meta.gamma_t,
            "levels": levels,
            "kept_total": est.kept_total(),
            "coefficients": est.coeffs.triples().collect::<Vec<_>>(),
            "records_digest": records_digest,
        });
        dir.write_json("estimate.json", &doc)?;
    }
    if ctx.wants(Format::Csv) {
        let t = header.support_t;
        let m = args.grid_points - 1;
        let xs: Vec<f64> = (0..=m).map(|i| -t + 2.0 * t * i as f64 / m as f64).collect();
        let values = est.evaluate(&xs);
        let bytes = if normalize {
            let norm = est.normalized(&xs);
            let rows = (0..xs.len()).map(|i| [xs[i].to_string(), values[i].to_string(), norm[i].to_string()]);
            csv_bytes(&["x", "fhat", "fhat_normalized"], rows)?
        } else {
            let rows = (0..xs.len()).map(|i| [xs[i].to_string(), values[i].to_string()]);
            csv_bytes(&["x", "fhat"], rows)?
        };
        dir.write("grid.csv", &bytes)?;
    }
    Ok(dir.path)
}

struct AuditArgs {
    step: Option<f64>,
    family: Option<Family>,
    depth: Option<u32>,
    alpha: Option<f64>,
    variant: Option<MechanismVariant>,
    j0: Option<i32>,
    j1: Option<i32>,
    nu: Option<f64>,
}

fn audit(ctx: &Context, args: AuditArgs) -> Result<PathBuf> {
    let spec = &ctx.spec;
    let scenario = spec.scenario()?;
    let base = scenario.mechanism_config(spec.n)?;
    let family = args.family.unwrap_or(base.basis.family());
    let depth = args.depth.unwrap_or(base.basis.depth());
    let basis = if family == base.basis.family() && depth == base.basis.depth() {
        base.basis.clone()
    } else {
        Arc::new(WaveletBasis::build(family, depth)?)
    };
    let j0 = args.j0.unwrap_or(base.j0);
    let config = MechanismConfig {
        variant: args.variant.unwrap_or(base.variant),
        alpha: args.alpha.unwrap_or(base.alpha),
        j0,
        j1: args.j1.unwrap_or(base.j1).max(j0),
        nu: args.nu.unwrap_or(base.nu),
        basis,
        support_t: base.support_t,
    };
    let step = args.step.or(spec.audit.step).unwrap_or(2f64.powi(2 - depth as i32));
    let [lo, hi] = spec.audit.range.unwrap_or([-config.support_t, config.support_t]);
    let mechanism = Mechanism::new(config)?;
    let c = mechanism.config();
    let summary = audit_sweep(&mechanism, lo, hi, step)?;
    let pass = summary.max <= c.alpha + AUDIT_TOLERANCE;

    let key = format!(
        "family={family} depth={depth} variant={} alpha={} j0={} j1={} nu={} step={step} range={lo},{hi}",
        c.variant, c.alpha, c.j0, c.j1, c.nu
    );
    let dir = ctx.run_dir("audit", &key)?;
    if ctx.wants(Format::Json) {
        let doc = json!({
            "family": family.to_string(),
            "depth": depth,
            "variant": c.variant.to_string(),
            "alpha": c.alpha,
            "j0": c.j0,
            "j1": c.j1,
            "nu": c.nu,
            "step": step,
            "range": [lo, hi],
            "pairs": summary.pairs,
            "max_log_ratio": summary.max,
            "argmax": [summary.argmax.0, summary.argmax.1],
            "father_max": summary.father_max,
            "mother_max": summary.mother_max,
            "pass": pass,
        });
        dir.write_json("audit.json", &doc)?;
    }
    if ctx.wants(Format::Csv) {
        let header = [
            "family",
            "depth",
            "variant",
            "alpha",
            "j0",
            "j1",
            "nu",
            "step",
            "lo",
            "hi",
            "pairs",
            "max",
            "argmax_x",
            "argmax_x2",
            "father_max",
            "mother_max",
            "pass",
        ];
        let row = [
            family.to_string(),
            depth.to_string(),
            c.variant.to_string(),
            c.alpha.to_string(),
            c.j0.to_string(),
            c.j1.to_string(),
            c.nu.to_string(),
            step.to_string(),
            lo.to_string(),
            hi.to_string(),
            summary.pairs.to_string(),
            summary.max.to_string(),
            summary.argmax.0.to_string(),
            summary.argmax.1.to_string(),
            summary.father_max.to_string(),
            summary.mother_max.to_string(),
            pass.to_string(),
        ];
        dir.write("audit.csv", &csv_bytes(&header, [row])?)?;
    }
    if !pass {
        return Err(Error::AuditFailed { max: summary.max, alpha: c.alpha });
    }
    Ok(dir.path)
}

fn rate_study_cmd(ctx: &Context, reps: Option<usize>, synthetic: Option<f64>) -> Result<PathBuf> {
    let spec = &ctx.spec;
    let reps = reps.unwrap_or(spec.reps);
    let (exponent, regime) = spec.theory_exponent()?;
    let study = match synthetic {
        Some(e) => synthetic_study(spec, reps, e, regime)?,
        None => {
            let scenario = spec.scenario()?;
            rate_study(&scenario, &spec.n_grid, reps, spec.master_seed, NoiseMode::Aggregated, exponent, regime)?
        }
    };
    let key = format!("reps={reps} synthetic={synthetic:?}");
    let dir = ctx.run_dir("rate-study", &key)?;
    if ctx.wants(Format::Json) {
        let reports: Vec<_> = study
            .reports
            .iter()
            .map(|r| json!({"n": r.n, "alpha": r.alpha, "risk_mean": r.risk_mean, "risk_stderr": r.risk_stderr, "replications": r.replications}))
            .collect();
        let doc = json!({
            "scenario_id": study.scenario_id,
            "regime": study.regime.to_string(),
            "theoretical_slope": study.theoretical_slope,
            "fitted_slope": study.fit.slope,
            "fitted_slope_stderr": study.fit.slope_stderr,
            "intercept": study.fit.intercept,
            "log_adjusted_slope": study.fit_log_adjusted.slope,
            "dropped_smallest": study.dropped_smallest,
            "synthetic": synthetic,
            "reports": reports,
        });
        dir.write_json("rate_study.json", &doc)?;
    }
    if ctx.wants(Format::Csv) {
        let id = &study.scenario_id;
        let risks = study.reports.iter().flat_map(|r| {
            r.per_replication
                .iter()
                .enumerate()
                .map(move |(i, v)| [id.clone(), r.n.to_string(), i.to_string(), v.to_string()])
        });
        dir.write("risks.csv", &csv_bytes(&["scenario", "n", "replication", "risk"], risks)?)?;
        let fit = study
            .fit
            .points
            .iter()
            .zip(&study.fit.residuals)
            .map(|((x, y), e)| [x.to_string(), y.to_string(), e.to_string()]);
        dir.write("fit.csv", &csv_bytes(&["ln_n", "ln_risk", "residual"], fit)?)?;
    }
    Ok(dir.path)
}

/// Risks `n^-e * exp(0.1 Z)` in place of the pipeline.
fn synthetic_study(
    spec: &ExperimentSpec,
    reps: usize,
    e: f64,
    regime: ldpwave_core::risk::Regime,
) -> Result<RateStudy> {
    if !e.is_finite() || reps < 2 {
        return Err(Error::Config("synthetic study needs a finite exponent and reps >= 2".into()));
    }
    let reports = spec
        .n_grid
        .iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_path(spec.master_seed, &[n as u64]));
            let per_rep = (0..reps)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (n as f64).powf(-e) * (0.1 * z).exp()
                })
                .collect();
            RiskReport::new("synthetic".into(), n, spec.scenario.mechanism.alpha, 2.0, per_rep)
        })
        .collect();
    Ok(RateStudy::from_reports("synthetic".into(), reports, e, regime)?)
}

fn dump_basis(ctx: &Context) -> Result<PathBuf> {
    let basis = ctx.spec.scenario.basis.build()?;
    let key = format!("family={} depth={}", basis.family(), basis.depth());
    let dir = ctx.run_dir("dump-basis", &key)?;
    let rows = basis.table_rows().map(|(x, phi, psi)| [x.to_string(), phi.to_string(), psi.to_string()]);
    dir.write("basis.csv", &csv_bytes(&["x", "phi", "psi"], rows)?)?;
    Ok(dir.path)
}
