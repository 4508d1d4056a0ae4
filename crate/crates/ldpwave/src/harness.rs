//! Parallel Monte Carlo: risk replications, rate studies, the
//! concentration check and the exhaustive privacy audit.
//!
//! Replication `rep` at sample size `n` uses the seed
//! `derive_path(master, [n, rep])`; its data stream is child 0 and its
//! noise stream child 1. Results are collected in replication order, so
//! they do not depend on the number of worker threads.

use std::sync::Arc;

use ldpwave_core::coeffs::{CoefficientSet, SlotLayout};
use ldpwave_core::density::Density;
use ldpwave_core::estimator::{choose_adaptive_levels, choose_linear_level};
use ldpwave_core::estimator::{estimate, EstimatorConfig, EstimatorMode};
use ldpwave_core::privacy::{AuditGrid, AuditSummary, Mechanism, MechanismConfig, MechanismVariant};
use ldpwave_core::risk::{
    concentration_bound, concentration_radius, noise_constant, risk_grid_size, RateStudy, Regime, RiskGrid, RiskReport,
};
use ldpwave_core::seed::{derive, derive_path};
use ldpwave_core::wavelet::{WaveletBasis, WaveletKind};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// How the Laplace noise of `n` released records enters the slot sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// One draw per slot of `sigma (G - G')`, `G, G' ~ Gamma(n, 1)`: the
    /// exact law of a sum of `n` independent Laplace(`sigma`) variables.
    Aggregated,
    /// Every record is privatised individually, as in the released files.
    PerRecord,
    /// No noise; the non-private oracle.
    Disabled,
}

/// A truth, a basis, a mechanism template and an estimator.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub truth: Arc<Density>,
    pub basis: Arc<WaveletBasis>,
    pub variant: MechanismVariant,
    pub alpha: f64,
    pub nu: f64,
    /// Fixed levels; otherwise chosen by the estimator's rule at each `n`.
    pub j0: Option<i32>,
    pub j1: Option<i32>,
    pub estimator: EstimatorConfig,
    pub r: f64,
    pub normalize: bool,
}

impl Scenario {
    /// `(j0, j1)` used at sample size `n`.
    pub fn levels(&self, n: usize) -> Result<(i32, i32)> {
        let (rule_j0, rule_j1) = match self.estimator.mode {
            EstimatorMode::Linear => (0, choose_linear_level(n, self.alpha, self.estimator.s)),
            EstimatorMode::Adaptive => match (self.j0, self.j1) {
                (Some(j0), Some(j1)) => (j0, j1),
                _ => choose_adaptive_levels(n, self.alpha, self.estimator.big_n)?,
            },
        };
        let j0 = self.j0.unwrap_or(rule_j0);
        Ok((j0, self.j1.unwrap_or(rule_j1).max(j0)))
    }

    pub fn mechanism_config(&self, n: usize) -> Result<MechanismConfig> {
        let (j0, j1) = self.levels(n)?;
        Ok(MechanismConfig {
            variant: self.variant,
            alpha: self.alpha,
            j0,
            j1,
            nu: self.nu,
            basis: self.basis.clone(),
            support_t: self.truth.support_t(),
        })
    }

    pub fn mechanism(&self, n: usize) -> Result<Mechanism> {
        Ok(Mechanism::new(self.mechanism_config(n)?)?)
    }

    pub fn estimator_config(&self, n: usize) -> EstimatorConfig {
        EstimatorConfig { n, alpha: self.alpha, ..self.estimator.clone() }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.alpha = alpha;
        out.estimator.alpha = alpha;
        out
    }
}

/// Slot sums `sum_i Z_i` for `n` draws from the truth.
pub fn released_sums(
    truth: &Density,
    mechanism: &Mechanism,
    n: usize,
    seed: u64,
    noise: NoiseMode,
) -> Result<Vec<f64>> {
    let layout = mechanism.layout();
    let basis = mechanism.basis();
    let mut data = ChaCha8Rng::seed_from_u64(derive(seed, 0));
    let mut sums = vec![0.0; layout.len()];
    let noise_seed = derive(seed, 1);
    match noise {
        NoiseMode::PerRecord => {
            let mut slots = vec![0.0; layout.len()];
            for i in 0..n {
                let x = truth.draw(&mut data);
                let mut rng = ChaCha8Rng::seed_from_u64(derive(noise_seed, i as u64));
                mechanism.privatize_into(x, &mut rng, &mut slots);
                sums.iter_mut().zip(&slots).for_each(|(s, z)| *s += z);
            }
        }
        NoiseMode::Aggregated | NoiseMode::Disabled => {
            for _ in 0..n {
                layout.add_point(basis, truth.draw(&mut data), &mut sums);
            }
            if noise == NoiseMode::Aggregated && n > 0 {
                let gamma = Gamma::new(n as f64, 1.0).map_err(|e| Error::Config(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
                for (level, &(_, sigma)) in layout.levels().iter().zip(mechanism.scales()) {
                    for s in &mut sums[level.offset..level.offset + level.len] {
                        *s += sigma * (gamma.sample(&mut rng) - gamma.sample(&mut rng));
                    }
                }
            }
        }
    }
    Ok(sums)
}

/// Empirical coefficients `sum_i Z_i / n`.
pub fn empirical_from_sums(layout: &Arc<SlotLayout>, sums: Vec<f64>, n: usize) -> Result<CoefficientSet> {
    if n == 0 {
        return Err(ldpwave_core::Error::EmptyRecords.into());
    }
    let values = sums.into_iter().map(|s| s / n as f64).collect();
    Ok(CoefficientSet::from_values(layout.clone(), values)?)
}

/// Everything needed to run replications at one sample size.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub n: usize,
    pub mechanism: Mechanism,
    pub grid: RiskGrid,
}

impl Prepared {
    pub fn new(scenario: &Scenario, n: usize) -> Result<Self> {
        let mechanism = scenario.mechanism(n)?;
        let support = mechanism.layout().function_support(&scenario.basis);
        let grid = RiskGrid::covering(&scenario.truth, support, risk_grid_size(mechanism.config().j1));
        Ok(Self { scenario: scenario.clone(), n, mechanism, grid })
    }

    /// Risk of one pipeline run (raw estimate, then the normalised one if
    /// enabled).
    pub fn replicate(&self, seed: u64, noise: NoiseMode) -> Result<(f64, Option<f64>)> {
        let sc = &self.scenario;
        let sums = released_sums(&sc.truth, &self.mechanism, self.n, seed, noise)?;
        let coeffs = empirical_from_sums(self.mechanism.layout(), sums, self.n)?;
        let est = estimate(&coeffs, &sc.estimator_config(self.n), self.mechanism.config())?;
        let values: Vec<f64> = self.grid.xs.iter().map(|&x| est.eval(x)).collect();
        let raw = self.grid.risk_of_values(&values, sc.r);
        let normalized = sc.normalize.then(|| self.grid.risk_of_values(&est.normalized(&self.grid.xs), sc.r));
        Ok((raw, normalized))
    }
}

/// `reps` independent replications at sample size `n`.
pub fn monte_carlo_risk(
    scenario: &Scenario,
    n: usize,
    reps: usize,
    master_seed: u64,
    noise: NoiseMode,
) -> Result<RiskReport> {
    if reps < 2 {
        return Err(Error::Config(format!("need at least 2 replications, got {reps}")));
    }
    let prepared = Prepared::new(scenario, n)?;
    let results: Vec<(f64, Option<f64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| prepared.replicate(derive_path(master_seed, &[n as u64, rep as u64]), noise))
        .collect::<Result<_>>()?;
    let mut report =
        RiskReport::new(scenario.id.clone(), n, scenario.alpha, scenario.r, results.iter().map(|r| r.0).collect());
    if scenario.normalize {
        report.normalized = Some(results.iter().map(|r| r.1.unwrap_or(f64::NAN)).collect());
    }
    Ok(report)
}

pub fn rate_study(
    scenario: &Scenario,
    n_grid: &[usize],
    reps: usize,
    master_seed: u64,
    noise: NoiseMode,
    exponent: f64,
    regime: Regime,
) -> Result<RateStudy> {
    RateStudy::check_grid(n_grid)?;
    let reports =
        n_grid.iter().map(|&n| monte_carlo_risk(scenario, n, reps, master_seed, noise)).collect::<Result<Vec<_>>>()?;
    Ok(RateStudy::from_reports(scenario.id.clone(), reports, exponent, regime)?)
}

/// Outcome of [`concentration_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concentration {
    pub empirical_prob: f64,
    pub bound: f64,
    pub radius: f64,
    pub exceedances: usize,
    pub reps: usize,
    /// Monte Carlo standard deviation of `beta_hat - beta`.
    pub deviation_sd: f64,
}

/// Frequency of `|beta_hat_jk - beta_jk| >= radius` under the
/// level-dependent mechanism, against the bound `2^{-gamma j}`.
#[allow(clippy::too_many_arguments)]
pub fn concentration_check(
    truth: &Density,
    basis: Arc<WaveletBasis>,
    alpha: f64,
    nu: f64,
    j: i32,
    k: i64,
    n: usize,
    gamma: f64,
    reps: usize,
    seed: u64,
    c_bar: f64,
) -> Result<Concentration> {
    if !(gamma >= 1.0) || j < 1 || n == 0 || reps == 0 {
        return Err(Error::Config("concentration check needs gamma >= 1, j >= 1, n, reps > 0".into()));
    }
    let mechanism = Mechanism::new(MechanismConfig {
        variant: MechanismVariant::Mechanism2,
        alpha,
        j0: 0,
        j1: j,
        nu,
        basis: basis.clone(),
        support_t: truth.support_t(),
    })?;
    let sigma_j = mechanism.scale(j).expect("level in layout");
    let beta = truth
        .project(&basis, mechanism.layout().clone())
        .beta(j, k)
        .ok_or_else(|| Error::Config(format!("shift {k} is not active at level {j}")))?;
    let radius = concentration_radius(c_bar, noise_constant(&basis, nu), gamma, j, n, nu, alpha);
    let gamma_noise = Gamma::new(n as f64, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let level = ldpwave_core::wavelet::Dyadic::new(j);
    let deviations: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = derive_path(seed, &[n as u64, rep as u64]);
            let mut data = ChaCha8Rng::seed_from_u64(derive(s, 0));
            let mut noise = ChaCha8Rng::seed_from_u64(derive(s, 1));
            let mut sum = 0.0;
            for _ in 0..n {
                let x = truth.draw(&mut data);
                sum += level.amplitude * basis.eval(WaveletKind::Mother, level.dilation * x - k as f64);
            }
            sum += sigma_j * (gamma_noise.sample(&mut noise) - gamma_noise.sample(&mut noise));
            sum / n as f64 - beta
        })
        .collect();
    let exceedances = deviations.iter().filter(|d| d.abs() >= radius).count();
    let (_, se) = ldpwave_core::risk::mean_stderr(&deviations);
    Ok(Concentration {
        empirical_prob: exceedances as f64 / reps as f64,
        bound: concentration_bound(gamma, j),
        radius,
        exceedances,
        reps,
        deviation_sd: se * (reps as f64).sqrt(),
    })
}

/// Exhaustive audit over the grid `lo + i * step` in `[lo, hi]`, rows
/// split across threads.
pub fn audit_sweep(mechanism: &Mechanism, lo: f64, hi: f64, step: f64) -> Result<AuditSummary> {
    let grid = AuditGrid::new(mechanism, lo, hi, step)?;
    let rows = grid.len();
    Ok((0..rows)
        .into_par_iter()
        .with_min_len(16)
        .map(|i| grid.sweep_rows(i..i + 1))
        .reduce(AuditSummary::empty, AuditSummary::merge))
}
