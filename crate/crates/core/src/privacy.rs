//! Laplace release mechanisms and the exact privacy audit.
//!
//! A data holder with datum `x` releases, for every slot of the layout,
//! `Z_jk = w_jk(x) + sigma_j W_jk` with i.i.d. standard Laplace `W`. The
//! father slots (label `j0 - 1`) use `phi_{j0 k}`, the mother slots
//! `psi_{jk}`. The two variants differ only in the per-level scales.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_core::RngCore;

use crate::coeffs::SlotLayout;
use crate::error::{Error, Result};
use crate::seed::unit_f64;
use crate::wavelet::{WaveletBasis, WaveletKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MechanismVariant {
    /// One mother scale for all levels, tied to the top level `j1`.
    Mechanism1,
    /// Level-dependent mother scales growing like `j^nu 2^{j/2}`.
    Mechanism2,
}

impl fmt::Display for MechanismVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismVariant::Mechanism1 => "mechanism1",
            MechanismVariant::Mechanism2 => "mechanism2",
        })
    }
}

impl FromStr for MechanismVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mechanism1" | "m1" | "1" | "linear" => Ok(MechanismVariant::Mechanism1),
            "mechanism2" | "m2" | "2" | "adaptive" => Ok(MechanismVariant::Mechanism2),
            other => Err(Error::InvalidMechanism(format!("unknown mechanism variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MechanismConfig {
    pub variant: MechanismVariant,
    pub alpha: f64,
    pub j0: i32,
    pub j1: i32,
    /// Only read by [`MechanismVariant::Mechanism2`].
    pub nu: f64,
    pub basis: Arc<WaveletBasis>,
    pub support_t: f64,
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidMechanism(format!("alpha = {} must be positive and finite", self.alpha)));
        }
        if self.j0 < 0 || self.j1 < self.j0 {
            return Err(Error::InvalidMechanism(format!(
                "levels j0 = {}, j1 = {} need 0 <= j0 <= j1",
                self.j0, self.j1
            )));
        }
        if self.variant == MechanismVariant::Mechanism2 && !(self.nu > 1.0 && self.nu.is_finite()) {
            return Err(Error::InvalidMechanism(format!("nu = {} must exceed 1", self.nu)));
        }
        if !(self.support_t > 0.0 && self.support_t.is_finite()) {
            return Err(Error::InvalidMechanism(format!("support half-width {} must be positive", self.support_t)));
        }
        Ok(())
    }
}

/// Noise scale per block label `j0 - 1, j0, ..., j1`.
pub fn noise_scales(config: &MechanismConfig) -> Result<Vec<(i32, f64)>> {
    config.validate()?;
    let (sup_phi, sup_psi) = config.basis.privacy_sup_norms();
    let c_a = config.basis.overlap_count() as f64;
    let base = 4.0 * c_a / config.alpha;
    let sqrt2 = core::f64::consts::SQRT_2;
    let half_pow = |j: i32| libm::exp2(0.5 * j as f64);
    let mut out = Vec::with_capacity((config.j1 - config.j0 + 2) as usize);
    out.push((config.j0 - 1, base * sup_phi * half_pow(config.j0)));
    for j in config.j0..=config.j1 {
        let sigma = match config.variant {
            MechanismVariant::Mechanism1 => base * sup_psi * sqrt2 / (sqrt2 - 1.0) * half_pow(config.j1),
            MechanismVariant::Mechanism2 => {
                let nu = config.nu;
                base * sup_psi * (2.0 * nu - 1.0) / (nu - 1.0) * libm::pow(j.max(1) as f64, nu) * half_pow(j)
            }
        };
        out.push((j, sigma));
    }
    Ok(out)
}

/// Centred Laplace variate from `u` in `(-1/2, 1/2)`.
#[inline]
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    let magnitude = -scale * libm::log1p(-2.0 * u.abs());
    if u < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// One centred Laplace(`scale`) draw by inversion.
#[inline]
pub fn laplace_sample<R: RngCore + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    loop {
        let u = unit_f64(rng) - 0.5;
        if u > -0.5 {
            return laplace_from_uniform(u, scale);
        }
    }
}

/// One released record: a value for every slot of the mechanism's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivatizedRecord {
    pub layout: Arc<SlotLayout>,
    pub slots: Vec<f64>,
}

impl PrivatizedRecord {
    pub fn slot(&self, label: i32, k: i64) -> Option<f64> {
        self.layout.index(label, k).map(|i| self.slots[i])
    }
}

/// A validated configuration with its layout and per-slot scales.
#[derive(Debug, Clone)]
pub struct Mechanism {
    config: MechanismConfig,
    layout: Arc<SlotLayout>,
    scales: Vec<(i32, f64)>,
}

impl Mechanism {
    pub fn new(config: MechanismConfig) -> Result<Self> {
        let scales = noise_scales(&config)?;
        let layout = Arc::new(SlotLayout::new(&config.basis, config.j0, config.j1, config.support_t)?);
        Ok(Self { config, layout, scales })
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn basis(&self) -> &WaveletBasis {
        &self.config.basis
    }

    pub fn layout(&self) -> &Arc<SlotLayout> {
        &self.layout
    }

    /// `(label, sigma)` per block, in layout order.
    pub fn scales(&self) -> &[(i32, f64)] {
        &self.scales
    }

    pub fn scale(&self, label: i32) -> Option<f64> {
        self.scales.iter().find(|(l, _)| *l == label).map(|(_, s)| *s)
    }

    /// Release for datum `x`. Noise is drawn slot by slot in layout order.
    pub fn privatize<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R) -> PrivatizedRecord {
        let mut slots = alloc::vec![0.0; self.layout.len()];
        self.privatize_into(x, rng, &mut slots);
        PrivatizedRecord { layout: self.layout.clone(), slots }
    }

    /// Overwrite `out` with the release for `x`.
    pub fn privatize_into<R: RngCore + ?Sized>(&self, x: f64, rng: &mut R, out: &mut [f64]) {
        out.fill(0.0);
        self.layout.add_point(self.basis(), x, out);
        for (level, &(_, sigma)) in self.layout.levels().iter().zip(&self.scales) {
            for z in &mut out[level.offset..level.offset + level.len] {
                *z += laplace_sample(sigma, rng);
            }
        }
    }

    /// Sparse scaled evaluations `(slot, w_jk(x) / sigma_j)` at `x`, sorted
    /// by slot, split into father and mother parts.
    pub fn scaled_profile(&self, x: f64) -> AuditProfile {
        let mut profile = AuditProfile::default();
        for (level, &(_, sigma)) in self.layout.levels().iter().zip(&self.scales) {
            let target = match level.kind {
                WaveletKind::Father => &mut profile.father,
                WaveletKind::Mother => &mut profile.mother,
            };
            self.basis().for_each_at(level.kind, level.dyadic, x, |k, v| {
                if let Some(i) = level.index(k) {
                    target.push((i as u32, v / sigma));
                }
            });
        }
        profile.father.sort_unstable_by_key(|e| e.0);
        profile.mother.sort_unstable_by_key(|e| e.0);
        profile
    }

    /// Exact sup over releases of the log density ratio between inputs
    /// `x` and `x2`: `sum |w(x) - w(x2)| / sigma` over all slots.
    pub fn audit(&self, x: f64, x2: f64) -> f64 {
        let (father, mother) = self.audit_split(x, x2);
        father + mother
    }

    /// Father and mother parts of [`Mechanism::audit`].
    pub fn audit_split(&self, x: f64, x2: f64) -> (f64, f64) {
        self.scaled_profile(x).distance(&self.scaled_profile(x2))
    }

    /// `sum_j 2 sup|psi| c_A 2^{j/2} / sigma_j`: the worst-case mother
    /// contribution implied by overlap counting.
    pub fn mother_budget(&self) -> f64 {
        let c_a = self.basis().overlap_count() as f64;
        let sup_psi = self.basis().sup_norms().1;
        self.scales[1..].iter().map(|&(j, sigma)| 2.0 * sup_psi * c_a * libm::exp2(0.5 * j as f64) / sigma).sum()
    }

    /// Worst-case father contribution, `2 sup|phi| c_A 2^{j0/2} / sigma`.
    pub fn father_budget(&self) -> f64 {
        let c_a = self.basis().overlap_count() as f64;
        let sup_phi = self.basis().sup_norms().0;
        2.0 * sup_phi * c_a * libm::exp2(0.5 * self.config.j0 as f64) / self.scales[0].1
    }
}

/// Sparse slot profile used by the audit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditProfile {
    pub father: Vec<(u32, f64)>,
    pub mother: Vec<(u32, f64)>,
}

impl AuditProfile {
    /// `(sum |a - b|` over father slots`, same over mother slots)`.
    pub fn distance(&self, other: &AuditProfile) -> (f64, f64) {
        (sparse_l1(&self.father, &other.father), sparse_l1(&self.mother, &other.mother))
    }
}

fn sparse_l1(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            core::cmp::Ordering::Less => {
                acc += a[i].1.abs();
                i += 1;
            }
            core::cmp::Ordering::Greater => {
                acc += b[j].1.abs();
                j += 1;
            }
            core::cmp::Ordering::Equal => {
                acc += (a[i].1 - b[j].1).abs();
                i += 1;
                j += 1;
            }
        }
    }
    acc + a[i..].iter().chain(&b[j..]).map(|e| e.1.abs()).sum::<f64>()
}

/// Result of an exhaustive audit over a grid of input pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSummary {
    pub max: f64,
    pub argmax: (f64, f64),
    pub father_max: f64,
    pub mother_max: f64,
    pub pairs: u64,
}

impl AuditSummary {
    pub fn empty() -> Self {
        Self { max: 0.0, argmax: (0.0, 0.0), father_max: 0.0, mother_max: 0.0, pairs: 0 }
    }

    /// Combine two partial sweeps. Ties on the maximum keep the
    /// lexicographically smallest pair, so the result does not depend on
    /// how the grid was split.
    pub fn merge(self, other: Self) -> Self {
        let other_wins = self.pairs == 0
            || (other.pairs > 0 && (other.max > self.max || (other.max == self.max && other.argmax < self.argmax)));
        let (max, argmax) = if other_wins { (other.max, other.argmax) } else { (self.max, self.argmax) };
        Self {
            max,
            argmax,
            father_max: self.father_max.max(other.father_max),
            mother_max: self.mother_max.max(other.mother_max),
            pairs: self.pairs + other.pairs,
        }
    }
}

/// Precomputed profiles on the grid `lo + i * step`, `i = 0..=count`.
#[derive(Debug, Clone)]
pub struct AuditGrid {
    pub xs: Vec<f64>,
    profiles: Vec<AuditProfile>,
}

impl AuditGrid {
    pub fn new(mechanism: &Mechanism, lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(hi >= lo) {
            return Err(Error::InvalidMechanism(format!("audit grid [{lo}, {hi}] with step {step}")));
        }
        let count = libm::round((hi - lo) / step) as usize;
        let xs: Vec<f64> = (0..=count).map(|i| lo + i as f64 * step).collect();
        let profiles = xs.iter().map(|&x| mechanism.scaled_profile(x)).collect();
        Ok(Self { xs, profiles })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Audit all pairs `(i, i2)` with `i2 >= i` for the given rows `i`.
    /// Symmetry of the audit covers the other half.
    pub fn sweep_rows(&self, rows: core::ops::Range<usize>) -> AuditSummary {
        let mut summary = AuditSummary::empty();
        for i in rows {
            let p = &self.profiles[i];
            for i2 in i..self.profiles.len() {
                let (father, mother) = p.distance(&self.profiles[i2]);
                let total = father + mother;
                if total > summary.max {
                    summary.max = total;
                    summary.argmax = (self.xs[i], self.xs[i2]);
                }
                summary.father_max = summary.father_max.max(father);
                summary.mother_max = summary.mother_max.max(mother);
                summary.pairs += 1;
            }
        }
        summary
    }

    pub fn sweep(&self) -> AuditSummary {
        self.sweep_rows(0..self.len())
    }
}
