//! Experiment configuration: one JSON document describing the scenario,
//! the sample-size grid, replication count, seed and outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ldpwave_core::density::{packing_set, Density};
use ldpwave_core::estimator::{EstimatorConfig, EstimatorMode};
use ldpwave_core::privacy::MechanismVariant;
use ldpwave_core::risk::{theoretical_exponent, PrivacyRegime, Regime};
use ldpwave_core::wavelet::{Family, WaveletBasis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Scenario;
use crate::io::{read_density_doc, sha256_hex};

/// Budgets at or above this are treated as non-private when the theory
/// section does not say otherwise.
pub const NONPRIVATE_ALPHA: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensitySpec {
    Reference {
        #[serde(default = "one")]
        t: f64,
        #[serde(default = "half")]
        c0: f64,
        #[serde(default = "default_flat")]
        flat: [f64; 2],
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Reference density with mother wavelets planted at `level`.
    Spike {
        #[serde(default = "one")]
        t: f64,
        #[serde(default = "half")]
        c0: f64,
        #[serde(default = "default_flat")]
        flat: [f64; 2],
        level: i32,
        /// Number of planted shifts, spread evenly over the packing set.
        count: usize,
        /// Fraction of the largest amplitude that keeps the density
        /// non-negative.
        #[serde(default = "default_spike_fraction")]
        fraction: f64,
    },
    /// Density document written by [`crate::io::density_doc`].
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_depth")]
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "two")]
    pub nu: f64,
    /// Fixed levels; chosen by the estimator's rule when absent.
    #[serde(default)]
    pub j0: Option<i32>,
    #[serde(default)]
    pub j1: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default = "one_u32")]
    pub big_n: u32,
    #[serde(default = "two")]
    pub r: f64,
    #[serde(default = "two")]
    pub nu: f64,
    #[serde(default)]
    pub gamma_t: Option<f64>,
    /// Defaults to the Besov radius.
    #[serde(default)]
    pub l_bar: Option<f64>,
    #[serde(default)]
    pub k_override: Option<f64>,
    /// Also report risks of positive-part, renormalised estimates.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default = "default_density")]
    pub density: DensitySpec,
    #[serde(default = "default_basis")]
    pub basis: BasisSpec,
    #[serde(default = "default_mechanism")]
    pub mechanism: MechanismSpec,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySpec {
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default = "two")]
    pub q: f64,
    #[serde(default = "two")]
    pub r: f64,
    /// Must agree with the zone of `(s, p, r)` when given.
    #[serde(default)]
    pub regime: Option<String>,
    /// `private` or `nonprivate`; decided from the budget when absent.
    #[serde(default)]
    pub privacy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    /// Grid step; `2^-(depth - 2)` when absent.
    #[serde(default)]
    pub step: Option<f64>,
    /// Sweep interval; `[-T, T]` when absent.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_scenario")]
    pub scenario: ScenarioSpec,
    /// Sample size for `privatize`.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default = "one")]
    pub besov_radius: f64,
    #[serde(default = "default_theory")]
    pub theory: TheorySpec,
    #[serde(default = "default_audit")]
    pub audit: AuditSpec,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> f64 {
    2.0
}
fn one_u32() -> u32 {
    1
}
fn default_flat() -> [f64; 2] {
    [-0.5, 0.5]
}
fn default_spike_fraction() -> f64 {
    0.9
}
fn default_family() -> String {
    "db2".into()
}
fn default_depth() -> u32 {
    12
}
fn default_variant() -> String {
    "mechanism1".into()
}
fn default_mode() -> String {
    "linear".into()
}
fn default_id() -> String {
    "dense".into()
}
fn default_density() -> DensitySpec {
    DensitySpec::Reference { t: 1.0, c0: 0.5, flat: default_flat() }
}
fn default_basis() -> BasisSpec {
    BasisSpec { family: default_family(), depth: default_depth() }
}
fn default_mechanism() -> MechanismSpec {
    MechanismSpec { variant: default_variant(), alpha: 1.0, nu: 2.0, j0: None, j1: None }
}
fn default_estimator() -> EstimatorSpec {
    EstimatorSpec {
        mode: default_mode(),
        s: 1.0,
        big_n: 1,
        r: 2.0,
        nu: 2.0,
        gamma_t: None,
        l_bar: None,
        k_override: None,
        normalize: false,
    }
}
fn default_scenario() -> ScenarioSpec {
    ScenarioSpec {
        id: default_id(),
        density: default_density(),
        basis: default_basis(),
        mechanism: default_mechanism(),
        estimator: default_estimator(),
    }
}
fn default_n() -> usize {
    1000
}
fn default_n_grid() -> Vec<usize> {
    vec![1 << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 18]
}
fn default_reps() -> usize {
    200
}
fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}
fn default_theory() -> TheorySpec {
    TheorySpec { s: 1.0, p: 2.0, q: 2.0, r: 2.0, regime: None, privacy: None }
}
fn default_audit() -> AuditSpec {
    AuditSpec { step: None, range: None }
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: default_scenario(),
            n: default_n(),
            n_grid: default_n_grid(),
            reps: default_reps(),
            master_seed: 0,
            outputs: default_outputs(),
            formats: default_formats(),
            besov_radius: 1.0,
            theory: default_theory(),
            audit: default_audit(),
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(config_err)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_json(&text)?;
        // Density files are resolved relative to the spec file.
        if let DensitySpec::File { path: p } = &mut spec.scenario.density {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(spec)
    }

    /// Canonical JSON text; the basis of run-directory digests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("spec serialises")
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let sc = &self.scenario;
        if sc.mechanism.variant()? == MechanismVariant::Mechanism2 && sc.mechanism.nu != sc.estimator.nu {
            return Err(Error::Config(format!(
                "mechanism nu = {} and estimator nu = {} must agree",
                sc.mechanism.nu, sc.estimator.nu
            )));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.reps < 2 {
            return Err(Error::Config("reps must be at least 2".into()));
        }
        if self.formats.is_empty() {
            return Err(Error::Config("formats must not be empty".into()));
        }
        sc.basis.family()?;
        sc.estimator.mode()?;
        if let Some(label) = &self.theory.regime {
            let claimed: Regime = label.parse()?;
            let (_, zone) = self.theory_exponent()?;
            if claimed != zone {
                return Err(Error::Config(format!("theory.regime = {claimed} but (s, p, r) lie in the {zone} zone")));
            }
        }
        Ok(())
    }

    pub fn privacy_regime(&self) -> Result<PrivacyRegime> {
        match self.theory.privacy.as_deref() {
            Some("private") => Ok(PrivacyRegime::Private),
            Some("nonprivate") | Some("non-private") => Ok(PrivacyRegime::NonPrivate),
            Some(other) => Err(Error::Config(format!("theory.privacy must be private or nonprivate, got {other:?}"))),
            None if self.scenario.mechanism.alpha >= NONPRIVATE_ALPHA => Ok(PrivacyRegime::NonPrivate),
            None => Ok(PrivacyRegime::Private),
        }
    }

    pub fn theory_exponent(&self) -> Result<(f64, Regime)> {
        let t = &self.theory;
        Ok(theoretical_exponent(t.s, t.p, t.q, t.r, self.privacy_regime()?)?)
    }

    /// Resolve the scenario into ready-to-run objects.
    pub fn scenario(&self) -> Result<Scenario> {
        let sc = &self.scenario;
        let basis = Arc::new(sc.basis.build()?);
        let truth = Arc::new(sc.density.build(&basis)?);
        truth.validate()?;
        let est = &sc.estimator;
        let mut estimator = EstimatorConfig::new(est.mode()?, 1, sc.mechanism.alpha);
        estimator.s = est.s;
        estimator.big_n = est.big_n;
        estimator.r = est.r;
        estimator.nu = est.nu;
        estimator.gamma_t = est.gamma_t;
        estimator.l_bar = est.l_bar.unwrap_or(self.besov_radius);
        estimator.k_override = est.k_override;
        Ok(Scenario {
            id: sc.id.clone(),
            truth,
            basis,
            variant: sc.mechanism.variant()?,
            alpha: sc.mechanism.alpha,
            nu: sc.mechanism.nu,
            j0: sc.mechanism.j0,
            j1: sc.mechanism.j1,
            estimator,
            r: est.r,
            normalize: est.normalize,
        })
    }
}

impl BasisSpec {
    pub fn family(&self) -> Result<Family> {
        Ok(self.family.parse()?)
    }

    pub fn build(&self) -> Result<WaveletBasis> {
        Ok(WaveletBasis::build(self.family()?, self.depth)?)
    }
}

impl MechanismSpec {
    pub fn variant(&self) -> Result<MechanismVariant> {
        Ok(self.variant.parse()?)
    }
}

impl EstimatorSpec {
    pub fn mode(&self) -> Result<EstimatorMode> {
        Ok(self.mode.parse()?)
    }
}

impl DensitySpec {
    pub fn build(&self, basis: &Arc<WaveletBasis>) -> Result<Density> {
        match self {
            DensitySpec::Reference { t, c0, flat } => Ok(Density::reference(*t, *c0, (flat[0], flat[1]))?),
            DensitySpec::Uniform { lo, hi } => Ok(Density::uniform(*lo, *hi)?),
            DensitySpec::Spike { t, c0, flat, level, count, fraction } => {
                let f0 = Density::reference(*t, *c0, (flat[0], flat[1]))?;
                spike_density(&f0, basis.clone(), *level, *count, *fraction)
            }
            DensitySpec::File { path } => read_density_doc(path),
        }
    }
}

/// `f0` plus `count` mother wavelets at `level`, evenly spread over the
/// packing set, with amplitude `fraction` of the non-negativity limit.
pub fn spike_density(
    f0: &Density,
    basis: Arc<WaveletBasis>,
    level: i32,
    count: usize,
    fraction: f64,
) -> Result<Density> {
    let (c0, (a, b)) = f0.flat_part().ok_or_else(|| Error::Config("spike densities need a reference base".into()))?;
    let slots = packing_set(&basis, level, a, b).len();
    if count == 0 || count > slots {
        return Err(Error::Config(format!("cannot plant {count} spikes in {slots} slots at level {level}")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("spike fraction {fraction} must lie in (0, 1]")));
    }
    let mut theta = vec![false; slots];
    for i in 0..count {
        theta[(2 * i + 1) * slots / (2 * count)] = true;
    }
    let gamma = fraction * c0 / (2f64.powf(0.5 * level as f64) * basis.sup_norms().1);
    Ok(Density::hypothesis(f0, basis, level, &theta, gamma)?)
}
