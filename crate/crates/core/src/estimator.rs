//! Linear and hard-thresholded wavelet estimators on released records.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::coeffs::{CoefficientSet, SlotLayout};
use crate::error::{Error, Result};
use crate::privacy::{MechanismConfig, MechanismVariant, PrivatizedRecord};
use crate::wavelet::WaveletBasis;

/// Slack added before flooring level rules, so that exact powers of two
/// are not lost to rounding in `log2`.
const LEVEL_FUZZ: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorMode {
    Linear,
    Adaptive,
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorMode::Linear => "linear",
            EstimatorMode::Adaptive => "adaptive",
        })
    }
}

impl FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(EstimatorMode::Linear),
            "adaptive" | "threshold" | "thresholded" => Ok(EstimatorMode::Adaptive),
            other => Err(Error::InvalidEstimator(format!("unknown estimator mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    /// Sample size; filled from the record count when estimating.
    pub n: usize,
    pub alpha: f64,
    /// Smoothness used by the linear level rule.
    pub s: f64,
    /// Regularity bound entering the adaptive base level and default `gamma_t`.
    pub big_n: u32,
    pub r: f64,
    pub nu: f64,
    /// Threshold constant; `r (N + 1)` when unset.
    pub gamma_t: Option<f64>,
    /// Sup-norm bound of the truth entering `K`.
    pub l_bar: f64,
    /// Replaces `K = 4 (L_bar + sigma)` when set.
    pub k_override: Option<f64>,
}

impl EstimatorConfig {
    pub fn new(mode: EstimatorMode, n: usize, alpha: f64) -> Self {
        Self { mode, n, alpha, s: 1.0, big_n: 1, r: 2.0, nu: 2.0, gamma_t: None, l_bar: 1.0, k_override: None }
    }

    pub fn gamma_t(&self) -> f64 {
        self.gamma_t.unwrap_or(self.r * (self.big_n as f64 + 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidEstimator(what.into()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.s > 0.0) {
            return bad("s must be positive");
        }
        if !(self.r >= 1.0) {
            return bad("r must be at least 1");
        }
        if !(self.nu > 1.0 && self.nu.is_finite()) {
            return bad("nu must exceed 1");
        }
        if !(self.l_bar > 0.0) {
            return bad("L_bar must be positive");
        }
        if self.big_n == 0 {
            return bad("N must be positive");
        }
        if let Some(g) = self.gamma_t {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma_t must be positive");
            }
        }
        if let Some(k) = self.k_override {
            if !(k >= 0.0 && k.is_finite()) {
                return bad("K override must be non-negative");
            }
        }
        Ok(())
    }
}

/// Slot-wise running sums of released records. Partial accumulators over
/// disjoint batches merge exactly into the same mean.
#[derive(Debug, Clone)]
pub struct CoefficientAccumulator {
    layout: Arc<SlotLayout>,
    sums: Vec<f64>,
    count: u64,
}

impl CoefficientAccumulator {
    pub fn new(layout: Arc<SlotLayout>) -> Self {
        let sums = alloc::vec![0.0; layout.len()];
        Self { layout, sums, count: 0 }
    }

    pub fn layout(&self) -> &Arc<SlotLayout> {
        &self.layout
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sums_mut(&mut self) -> &mut [f64] {
        &mut self.sums
    }

    pub fn add_slots(&mut self, slots: &[f64]) -> Result<()> {
        if slots.len() != self.sums.len() {
            return Err(Error::InconsistentLayout);
        }
        self.sums.iter_mut().zip(slots).for_each(|(s, z)| *s += z);
        self.count += 1;
        Ok(())
    }

    pub fn add(&mut self, record: &PrivatizedRecord) -> Result<()> {
        if !Arc::ptr_eq(&record.layout, &self.layout) && *record.layout != *self.layout {
            return Err(Error::InconsistentLayout);
        }
        self.add_slots(&record.slots)
    }

    /// Account for `count` records whose slots were added to the sums
    /// directly through [`CoefficientAccumulator::sums_mut`].
    pub fn add_count(&mut self, count: u64) {
        self.count += count;
    }

    pub fn merge(mut self, other: &CoefficientAccumulator) -> Result<Self> {
        if *other.layout != *self.layout {
            return Err(Error::InconsistentLayout);
        }
        self.sums.iter_mut().zip(&other.sums).for_each(|(s, o)| *s += o);
        self.count += other.count;
        Ok(self)
    }

    pub fn finish(self) -> Result<CoefficientSet> {
        if self.count == 0 {
            return Err(Error::EmptyRecords);
        }
        let n = self.count as f64;
        let values = self.sums.into_iter().map(|s| s / n).collect();
        CoefficientSet::from_values(self.layout, values)
    }
}

/// Slot-wise mean of the records.
pub fn empirical_coefficients(records: &[PrivatizedRecord]) -> Result<CoefficientSet> {
    let first = records.first().ok_or(Error::EmptyRecords)?;
    let mut acc = CoefficientAccumulator::new(first.layout.clone());
    for record in records {
        acc.add(record)?;
    }
    acc.finish()
}

fn floor_level(log2_value: f64) -> i32 {
    libm::floor(log2_value + LEVEL_FUZZ).max(0.0) as i32
}

/// Top level of the linear estimator:
/// `floor(log2(min((n alpha^2)^{1/(2s+2)}, n^{1/(2s+1)})))`, at least 0.
pub fn choose_linear_level(n: usize, alpha: f64, s: f64) -> i32 {
    let log_n = libm::log2(n as f64);
    let private = (log_n + 2.0 * libm::log2(alpha)) / (2.0 * s + 2.0);
    let plain = log_n / (2.0 * s + 1.0);
    floor_level(private.min(plain))
}

/// Base and top levels of the adaptive estimator.
pub fn choose_adaptive_levels(n: usize, alpha: f64, big_n: u32) -> Result<(i32, i32)> {
    if n < 8 {
        return Err(Error::InvalidEstimator(format!("adaptive level rule needs n >= 8, got {n}")));
    }
    let budget = n as f64 * alpha * alpha;
    if !(budget > core::f64::consts::E) {
        return Err(Error::BudgetTooSmall(budget));
    }
    let big_n = big_n as f64;
    let log_n = libm::log2(n as f64);
    let j0 = floor_level((libm::log2(budget) / (2.0 * big_n + 4.0)).min(log_n / (2.0 * big_n + 3.0)));
    let j1_sample = floor_level(libm::log2(n as f64 / libm::log(n as f64)));
    let j1_privacy = floor_level(0.5 * libm::log2(budget / libm::log(budget)));
    Ok((j0, j0.max(j1_sample.min(j1_privacy))))
}

/// `t = gamma (j v 1)^{nu + 1/2} / sqrt(n) * max(1, 2^{j/2} / alpha)`.
pub fn threshold(j: i32, n: usize, alpha: f64, gamma_t: f64, nu: f64) -> f64 {
    let level = j.max(1) as f64;
    gamma_t * libm::pow(level, nu + 0.5) / libm::sqrt(n as f64) * (libm::exp2(0.5 * j as f64) / alpha).max(1.0)
}

/// `K = 4 (L_bar + sigma)`, `sigma = 4 c_A sup|psi| (2 nu - 1) / (nu - 1)`.
pub fn threshold_constant(basis: &WaveletBasis, nu: f64, l_bar: f64) -> f64 {
    4.0 * (l_bar + crate::risk::noise_constant(basis, nu))
}

/// Per-level bookkeeping of an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelMeta {
    pub label: i32,
    /// Effective threshold `K t`; zero when nothing is thresholded.
    pub threshold: f64,
    pub kept: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateMeta {
    pub mode: EstimatorMode,
    pub j0: i32,
    pub j1: i32,
    pub levels: Vec<LevelMeta>,
    pub k_constant: Option<f64>,
    pub gamma_t: Option<f64>,
    /// The records were not produced by the mechanism the estimator's
    /// analysis assumes.
    pub off_theorem: bool,
}

#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub coeffs: CoefficientSet,
    pub basis: Arc<WaveletBasis>,
    pub meta: EstimateMeta,
}

impl DensityEstimate {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.evaluate(&self.basis, x)
    }

    pub fn evaluate(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }

    /// Positive part rescaled to unit trapezoid mass on the uniform grid
    /// `xs`. For display only; risks are computed on the raw estimate.
    pub fn normalized(&self, xs: &[f64]) -> Vec<f64> {
        let mut values: Vec<f64> = xs.iter().map(|&x| self.eval(x).max(0.0)).collect();
        let mass: f64 = xs.windows(2).zip(values.windows(2)).map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1])).sum();
        if mass > 0.0 {
            values.iter_mut().for_each(|v| *v /= mass);
        }
        values
    }

    pub fn kept_total(&self) -> usize {
        self.meta.levels.iter().map(|l| l.kept).sum()
    }
}

fn plain_meta(coeffs: &CoefficientSet, mode: EstimatorMode) -> Vec<LevelMeta> {
    coeffs
        .layout()
        .levels()
        .iter()
        .map(|l| {
            let kept = coeffs.values()[l.offset..l.offset + l.len].iter().filter(|v| **v != 0.0).count();
            LevelMeta {
                label: l.label,
                threshold: 0.0,
                kept: if mode == EstimatorMode::Linear { l.len } else { kept },
                total: l.len,
            }
        })
        .collect()
}

/// All empirical coefficients up to level `j1`, unthresholded.
pub fn linear_estimate(coeffs: &CoefficientSet, basis: Arc<WaveletBasis>, j1: i32) -> Result<DensityEstimate> {
    let coeffs = coeffs.truncated(&basis, j1)?;
    let meta = EstimateMeta {
        mode: EstimatorMode::Linear,
        j0: coeffs.j0(),
        j1: coeffs.j1(),
        levels: plain_meta(&coeffs, EstimatorMode::Linear),
        k_constant: None,
        gamma_t: None,
        off_theorem: false,
    };
    Ok(DensityEstimate { coeffs, basis, meta })
}

/// Keep the base-level scaling coefficients and every detail coefficient
/// with `|beta| >= K t_j`. `mechanism_nu` is the `nu` the records were
/// released with.
pub fn adaptive_estimate(
    coeffs: &CoefficientSet,
    basis: Arc<WaveletBasis>,
    config: &EstimatorConfig,
    mechanism_nu: f64,
) -> Result<DensityEstimate> {
    config.validate()?;
    if config.nu != mechanism_nu {
        return Err(Error::NuMismatch { mechanism: mechanism_nu, estimator: config.nu });
    }
    let k = config.k_override.unwrap_or_else(|| threshold_constant(&basis, config.nu, config.l_bar));
    let gamma_t = config.gamma_t();
    let mut out = coeffs.clone();
    let mut levels = Vec::with_capacity(coeffs.layout().levels().len());
    for l in coeffs.layout().levels() {
        let block = &mut out.values_mut()[l.offset..l.offset + l.len];
        let cut = if l.label < coeffs.j0() {
            0.0
        } else {
            k * threshold(l.label, config.n, config.alpha, gamma_t, config.nu)
        };
        let mut kept = 0;
        for v in block.iter_mut() {
            if v.abs() >= cut {
                kept += 1;
            } else {
                *v = 0.0;
            }
        }
        levels.push(LevelMeta { label: l.label, threshold: cut, kept, total: l.len });
    }
    let meta = EstimateMeta {
        mode: EstimatorMode::Adaptive,
        j0: coeffs.j0(),
        j1: coeffs.j1(),
        levels,
        k_constant: Some(k),
        gamma_t: Some(gamma_t),
        off_theorem: false,
    };
    Ok(DensityEstimate { coeffs: out, basis, meta })
}

/// Run the configured estimator on coefficients released under
/// `mechanism`. The linear estimator uses the mechanism's `j1`. Pairings
/// outside the analysed ones (linear on level-dependent noise, adaptive on
/// the constant-scale mechanism) are allowed and flagged.
pub fn estimate(
    coeffs: &CoefficientSet,
    config: &EstimatorConfig,
    mechanism: &MechanismConfig,
) -> Result<DensityEstimate> {
    config.validate()?;
    let basis = mechanism.basis.clone();
    let mut est = match config.mode {
        EstimatorMode::Linear => linear_estimate(coeffs, basis, mechanism.j1)?,
        EstimatorMode::Adaptive => {
            let nu = match mechanism.variant {
                MechanismVariant::Mechanism2 => mechanism.nu,
                MechanismVariant::Mechanism1 => config.nu,
            };
            adaptive_estimate(coeffs, basis, config, nu)?
        }
    };
    est.meta.off_theorem = match config.mode {
        EstimatorMode::Linear => mechanism.variant != MechanismVariant::Mechanism1,
        EstimatorMode::Adaptive => mechanism.variant != MechanismVariant::Mechanism2,
    };
    Ok(est)
}
