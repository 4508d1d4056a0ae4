//! Integrated `L^r` risk, rate exponents and log-log slope fits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::density::Density;
use crate::error::{Error, Result};
use crate::estimator::DensityEstimate;
use crate::quadrature::simpson_weights;
use crate::wavelet::WaveletBasis;

/// Minimum number of risk grid intervals.
pub const MIN_RISK_INTERVALS: usize = 1 << 14;

/// Grid size for an estimate with top level `j1`: `max(2^{j1+6}, 2^14)`.
pub fn risk_grid_size(j1: i32) -> usize {
    (1usize << (j1.max(0) + 6).min(40)).max(MIN_RISK_INTERVALS)
}

/// Uniform Simpson grid with the truth tabulated once, reused across
/// replications.
#[derive(Debug, Clone)]
pub struct RiskGrid {
    pub xs: Vec<f64>,
    pub weights: Vec<f64>,
    pub truth: Vec<f64>,
}

impl RiskGrid {
    pub fn new(truth: &Density, lo: f64, hi: f64, intervals: usize) -> Self {
        let m = (intervals.max(2) + 1) & !1;
        let h = (hi - lo) / m as f64;
        let xs: Vec<f64> = (0..=m).map(|i| lo + i as f64 * h).collect();
        let truth = xs.iter().map(|&x| truth.eval(x)).collect();
        Self { xs, weights: simpson_weights(m, h), truth }
    }

    /// Grid over the union of the truth's support and `extra`.
    pub fn covering(truth: &Density, extra: (f64, f64), intervals: usize) -> Self {
        let t = truth.support_t();
        Self::new(truth, extra.0.min(-t), extra.1.max(t), intervals)
    }

    /// `integral |g - f|^r` for `g` given on the grid.
    pub fn risk_of_values(&self, values: &[f64], r: f64) -> f64 {
        let power = |d: f64| {
            if r == 2.0 {
                d * d
            } else if r == 1.0 {
                d.abs()
            } else {
                libm::pow(d.abs(), r)
            }
        };
        values.iter().zip(&self.truth).zip(&self.weights).map(|((g, f), w)| w * power(g - f)).sum()
    }

    pub fn risk(&self, estimate: &DensityEstimate, r: f64) -> f64 {
        let values: Vec<f64> = self.xs.iter().map(|&x| estimate.eval(x)).collect();
        self.risk_of_values(&values, r)
    }
}

/// `integral |f_hat - f|^r` over the union of supports by composite
/// Simpson on `grid_size` intervals.
pub fn lr_risk(estimate: &DensityEstimate, truth: &Density, r: f64, grid_size: usize) -> Result<f64> {
    let required = 1usize << (estimate.coeffs.j1().max(0) + 6).min(40);
    if grid_size < required {
        return Err(Error::GridTooCoarse { got: grid_size, required });
    }
    if !(r >= 1.0) {
        return Err(Error::InvalidRateParameters(format!("loss index r = {r} must be at least 1")));
    }
    let support = estimate.coeffs.layout().function_support(&estimate.basis);
    Ok(RiskGrid::covering(truth, support, grid_size).risk(estimate, r))
}

/// Risk between two arbitrary functions on `[lo, hi]`.
pub fn lr_distance<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(
    f: F,
    g: G,
    lo: f64,
    hi: f64,
    r: f64,
    intervals: usize,
) -> f64 {
    let m = (intervals.max(2) + 1) & !1;
    let h = (hi - lo) / m as f64;
    simpson_weights(m, h)
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = lo + i as f64 * h;
            w * libm::pow((f(x) - g(x)).abs(), r)
        })
        .sum()
}

/// Zone of the `(s, p, r)` parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// `p > r / (s + 1)`.
    Dense,
    /// `r / (2s + 1) < p <= r / (s + 1)`.
    DenseNonhomogeneous,
    /// `p <= r / (2s + 1)`.
    Sparse,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Dense => "dense",
            Regime::DenseNonhomogeneous => "dense_nonhomogeneous",
            Regime::Sparse => "sparse",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Regime::Dense),
            "dense_nonhomogeneous" => Ok(Regime::DenseNonhomogeneous),
            "sparse" => Ok(Regime::Sparse),
            other => Err(Error::InvalidRateParameters(format!("unknown regime {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrivacyRegime {
    Private,
    NonPrivate,
}

/// Zone label from the boundary comparisons.
pub fn regime(s: f64, p: f64, r: f64) -> Regime {
    if p > r / (s + 1.0) {
        Regime::Dense
    } else if p > r / (2.0 * s + 1.0) {
        Regime::DenseNonhomogeneous
    } else {
        Regime::Sparse
    }
}

/// Positive exponent `e` of the rate `n^{-e}` (log factors ignored) and the
/// zone of `(s, p, r)`. `q` does not enter the exponent but is validated.
pub fn theoretical_exponent(s: f64, p: f64, q: f64, r: f64, privacy: PrivacyRegime) -> Result<(f64, Regime)> {
    if !(s > 0.0 && p >= 1.0 && q >= 1.0 && r >= 1.0) || s.is_infinite() || r.is_infinite() {
        return Err(Error::InvalidRateParameters(format!("need s > 0, p, q, r >= 1; got s={s}, p={p}, q={q}, r={r}")));
    }
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    if s < inv_p {
        return Err(Error::InvalidRateParameters(format!("s = {s} is below 1/p = {inv_p}")));
    }
    let zone = regime(s, p, r);
    let eff = s - inv_p;
    let exponent = match privacy {
        PrivacyRegime::Private if zone == Regime::Dense => r * s / (2.0 * s + 2.0),
        PrivacyRegime::Private => r * (eff + 1.0 / r) / (2.0 * eff + 2.0),
        PrivacyRegime::NonPrivate if zone != Regime::Sparse => r * s / (2.0 * s + 1.0),
        PrivacyRegime::NonPrivate => r * (eff + 1.0 / r) / (2.0 * eff + 1.0),
    };
    Ok((exponent, zone))
}

/// Monte Carlo risk at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub scenario_id: String,
    pub n: usize,
    pub alpha: f64,
    pub r: f64,
    pub replications: usize,
    pub risk_mean: f64,
    pub risk_stderr: f64,
    pub per_replication: Vec<f64>,
    /// Risks of the positive-part, renormalised estimates, if computed.
    pub normalized: Option<Vec<f64>>,
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var / n))
}

impl RiskReport {
    pub fn new(scenario_id: String, n: usize, alpha: f64, r: f64, per_replication: Vec<f64>) -> Self {
        let (risk_mean, risk_stderr) = mean_stderr(&per_replication);
        Self {
            scenario_id,
            n,
            alpha,
            r,
            replications: per_replication.len(),
            risk_mean,
            risk_stderr,
            per_replication,
            normalized: None,
        }
    }
}

/// Ordinary least squares fit of `y = a + b x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// NaN with fewer than three points.
    pub slope_stderr: f64,
    pub points: Vec<(f64, f64)>,
    pub residuals: Vec<f64>,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    let points: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if points.len() < 2 {
        return Err(Error::TooFewPoints { got: points.len(), required: 2 });
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidRateParameters(String::from("fit needs at least two distinct x values")));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = points.iter().map(|(x, y)| y - intercept - slope * x).collect();
    let slope_stderr = if points.len() > 2 {
        libm::sqrt(residuals.iter().map(|r| r * r).sum::<f64>() / (m - 2.0) / sxx)
    } else {
        f64::NAN
    };
    Ok(LineFit { slope, intercept, slope_stderr, points, residuals })
}

/// Slope fit of `ln risk` on `ln n`.
pub fn fit_log_log(ns: &[usize], risks: &[f64]) -> Result<LineFit> {
    let points: Vec<(f64, f64)> = ns.iter().zip(risks).map(|(&n, &r)| (libm::log(n as f64), libm::log(r))).collect();
    fit_line(&points)
}

/// Risks over a sample-size grid with the fitted and theoretical slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStudy {
    pub scenario_id: String,
    pub reports: Vec<RiskReport>,
    /// `ln risk_mean` against `ln n`.
    pub fit: LineFit,
    /// `ln risk_mean` against `ln(n / ln n)`.
    pub fit_log_adjusted: LineFit,
    /// Whether the smallest `n` was left out of the fits.
    pub dropped_smallest: bool,
    /// Negative theoretical exponent, comparable to `fit.slope`.
    pub theoretical_slope: f64,
    pub regime: Regime,
}

impl RateStudy {
    pub fn fitted_exponent(&self) -> f64 {
        self.fit.slope
    }

    /// Check the grid: at least four sizes, each at least twice the last.
    pub fn check_grid(n_grid: &[usize]) -> Result<()> {
        if n_grid.len() < 4 {
            return Err(Error::TooFewPoints { got: n_grid.len(), required: 4 });
        }
        if n_grid.windows(2).any(|w| w[1] < 2 * w[0]) {
            return Err(Error::InvalidRateParameters(String::from("n grid must grow by a factor of at least 2")));
        }
        Ok(())
    }

    /// Fit the reports. The smallest `n` is dropped when its standard
    /// error exceeds 10% of its mean.
    pub fn from_reports(scenario_id: String, reports: Vec<RiskReport>, exponent: f64, regime: Regime) -> Result<Self> {
        let n_grid: Vec<usize> = reports.iter().map(|r| r.n).collect();
        Self::check_grid(&n_grid)?;
        let dropped_smallest = reports[0].risk_stderr > 0.1 * reports[0].risk_mean;
        let used = &reports[usize::from(dropped_smallest)..];
        let ns: Vec<usize> = used.iter().map(|r| r.n).collect();
        let means: Vec<f64> = used.iter().map(|r| r.risk_mean).collect();
        let fit = fit_log_log(&ns, &means)?;
        let adjusted: Vec<(f64, f64)> =
            ns.iter().zip(&means).map(|(&n, &m)| (libm::log(n as f64 / libm::log(n as f64)), libm::log(m))).collect();
        let fit_log_adjusted = fit_line(&adjusted)?;
        Ok(Self { scenario_id, reports, fit, fit_log_adjusted, dropped_smallest, theoretical_slope: -exponent, regime })
    }
}

/// `sigma = 4 c_A sup|psi| (2 nu - 1) / (nu - 1)`, the level-free part of
/// the level-dependent noise scale at unit budget.
pub fn noise_constant(basis: &WaveletBasis, nu: f64) -> f64 {
    4.0 * basis.overlap_count() as f64 * basis.privacy_sup_norms().1 * (2.0 * nu - 1.0) / (nu - 1.0)
}

/// Deviation radius `4 (c_bar + sigma) gamma j^{nu + 1/2} / sqrt(n) * max(1, 2^{j/2} / alpha)`.
pub fn concentration_radius(c_bar: f64, sigma: f64, gamma: f64, j: i32, n: usize, nu: f64, alpha: f64) -> f64 {
    let level = j.max(1) as f64;
    4.0 * (c_bar + sigma) * gamma * libm::pow(level, nu + 0.5) / libm::sqrt(n as f64)
        * (libm::exp2(0.5 * j as f64) / alpha).max(1.0)
}

/// Tail bound `2^{-gamma j}` on exceeding the radius.
pub fn concentration_bound(gamma: f64, j: i32) -> f64 {
    libm::exp2(-gamma * j as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientSet, SlotLayout};
    use crate::estimator::linear_estimate;
    use crate::wavelet::Family;
    use alloc::string::ToString;
    use alloc::sync::Arc;
    use alloc::vec;

    fn haar_estimate(values: &[(i32, i64, f64)], j1: i32) -> DensityEstimate {
        let b = Arc::new(WaveletBasis::build(Family::Haar, 10).unwrap());
        let layout = Arc::new(SlotLayout::new(&b, 0, j1, 1.0).unwrap());
        let mut c = CoefficientSet::zeros(layout.clone());
        for &(j, k, v) in values {
            c.values_mut()[layout.index(j, k).unwrap()] = v;
        }
        linear_estimate(&c, b, j1).unwrap()
    }

    #[test]
    fn lr_risk_examples() {
        let uniform = Density::uniform(0.0, 1.0).unwrap();
        let zero = haar_estimate(&[], 2);
        assert!((lr_risk(&zero, &uniform, 2.0, 1 << 14).unwrap() - 1.0).abs() < 1e-3);
        let exact = haar_estimate(&[(-1, 0, 1.0)], 2);
        assert!(lr_risk(&exact, &uniform, 2.0, 1 << 14).unwrap() < 1e-3);
        assert_eq!(lr_risk(&exact, &uniform, 2.0, 128).unwrap_err(), Error::GridTooCoarse { got: 128, required: 256 });
        assert_eq!(risk_grid_size(3), 1 << 14);
        assert_eq!(risk_grid_size(10), 1 << 16);
    }

    #[test]
    fn lr_risk_converges_under_refinement_for_smooth_inputs() {
        let f0 = Density::reference(1.0, 0.5, (-0.5, 0.5)).unwrap();
        let b = Arc::new(WaveletBasis::build(Family::Daubechies(4), 12).unwrap());
        let c = f0.wavelet_coefficients(&b, 0, 2).unwrap();
        let est = linear_estimate(&c, b, 2).unwrap();
        let coarse = lr_risk(&est, &f0, 2.0, 1 << 14).unwrap();
        let fine = lr_risk(&est, &f0, 2.0, 1 << 15).unwrap();
        assert!((coarse - fine).abs() <= 1e-4 * fine, "{coarse} {fine}");
    }

    #[test]
    fn lr_distance_is_symmetric_and_zero_on_equality() {
        let f = |x: f64| libm::sin(3.0 * x);
        let g = |x: f64| x * x;
        let a = lr_distance(f, g, -1.0, 1.0, 3.0, 1000);
        let b = lr_distance(g, f, -1.0, 1.0, 3.0, 1000);
        assert_eq!(a, b);
        assert_eq!(lr_distance(f, f, -1.0, 1.0, 2.0, 1000), 0.0);
    }

    #[test]
    fn theoretical_exponent_examples() {
        let (e, z) = theoretical_exponent(1.0, 2.0, 2.0, 2.0, PrivacyRegime::Private).unwrap();
        assert_eq!((e, z), (0.5, Regime::Dense));
        let (e, _) = theoretical_exponent(1.0, 2.0, 2.0, 2.0, PrivacyRegime::NonPrivate).unwrap();
        assert!((e - 2.0 / 3.0).abs() < 1e-15);
        let (e, z) = theoretical_exponent(1.0, 1.0, 2.0, 4.0, PrivacyRegime::Private).unwrap();
        assert_eq!(e, 0.5);
        assert_ne!(z, Regime::Dense);
        assert!(theoretical_exponent(0.4, 2.0, 2.0, 2.0, PrivacyRegime::Private).is_err());
        assert!(theoretical_exponent(1.0, 0.5, 2.0, 2.0, PrivacyRegime::Private).is_err());
    }

    #[test]
    fn regime_boundaries() {
        // r/(s+1) = 1, r/(2s+1) = 2/3.
        assert_eq!(regime(1.0, 1.01, 2.0), Regime::Dense);
        assert_eq!(regime(1.0, 1.0, 2.0), Regime::DenseNonhomogeneous);
        assert_eq!(regime(1.0, 0.7, 2.0), Regime::DenseNonhomogeneous);
        assert_eq!(regime(1.0, 2.0 / 3.0, 2.0), Regime::Sparse);
        for z in [Regime::Dense, Regime::DenseNonhomogeneous, Regime::Sparse] {
            assert_eq!(z.to_string().parse::<Regime>().unwrap(), z);
        }
    }

    #[test]
    fn rates_are_continuous_at_zone_boundaries() {
        // Private boundary p = r/(s+1): s = 2, r = 3, p = 1.
        let dense = 3.0 * 2.0 / 6.0;
        let eff: f64 = 1.0;
        let sparse = 3.0 * (eff + 1.0 / 3.0) / (2.0 * eff + 2.0);
        assert!((dense - sparse).abs() < 1e-12);
        let (e, z) = theoretical_exponent(2.0, 1.0, 1.0, 3.0, PrivacyRegime::Private).unwrap();
        assert_eq!(z, Regime::DenseNonhomogeneous);
        assert!((e - dense).abs() < 1e-12);
    }

    #[test]
    fn exact_power_law_fits_exactly() {
        let ns = [1024usize, 4096, 16384, 65536];
        let risks: Vec<f64> = ns.iter().map(|&n| 3.0 * libm::pow(n as f64, -0.5)).collect();
        let fit = fit_log_log(&ns, &risks).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - libm::log(3.0)).abs() < 1e-10);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn perturbed_power_law_fits_within_tolerance() {
        let ns = [1usize << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 18];
        let noise = [0.8, -1.0, 0.3, -0.6, 1.0];
        let risks: Vec<f64> =
            ns.iter().zip(noise).map(|(&n, e)| 2.0 * libm::pow(n as f64, -0.5) * (1.0 + 0.05 * e)).collect();
        let fit = fit_log_log(&ns, &risks).unwrap();
        assert!((fit.slope + 0.5).abs() <= 0.05);
        assert!(fit.slope_stderr.is_finite());
        assert_eq!(fit_log_log(&ns[..1], &risks[..1]).unwrap_err(), Error::TooFewPoints { got: 1, required: 2 });
    }

    fn report(n: usize, mean: f64, spread: f64) -> RiskReport {
        RiskReport::new("t".into(), n, 1.0, 2.0, vec![mean - spread, mean + spread])
    }

    #[test]
    fn rate_study_drop_rule() {
        let ns = [1usize << 10, 1 << 12, 1 << 14, 1 << 16];
        let quiet: Vec<RiskReport> = ns.iter().map(|&n| report(n, libm::pow(n as f64, -0.5), 0.0)).collect();
        let study = RateStudy::from_reports("t".into(), quiet.clone(), 0.5, Regime::Dense).unwrap();
        assert!(!study.dropped_smallest);
        assert!((study.fitted_exponent() + 0.5).abs() < 1e-12);
        assert_eq!(study.theoretical_slope, -0.5);
        let mut noisy = quiet;
        noisy[0] = report(ns[0], 10.0, 5.0);
        let study = RateStudy::from_reports("t".into(), noisy, 0.5, Regime::Dense).unwrap();
        assert!(study.dropped_smallest);
        assert!((study.fitted_exponent() + 0.5).abs() < 1e-12);
        assert!(RateStudy::check_grid(&[10, 20, 30, 80]).is_err());
        assert!(RateStudy::check_grid(&[10, 20, 40]).is_err());
    }

    #[test]
    fn report_statistics() {
        let r = RiskReport::new("s".into(), 10, 1.0, 2.0, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.risk_mean, 2.5);
        assert!((r.risk_stderr - libm::sqrt(5.0 / 3.0 / 4.0)).abs() < 1e-15);
        assert_eq!(r.replications, 4);
    }

    #[test]
    fn concentration_bound_examples() {
        assert_eq!(concentration_bound(1.0, 1), 0.5);
        assert_eq!(concentration_bound(1.0, 3), 0.125);
        assert!(concentration_bound(2.0, 3) < concentration_bound(1.0, 3));
        assert!(concentration_bound(1.0, 4) < concentration_bound(1.0, 3));
        let r = concentration_radius(1.0, 2.0, 1.0, 4, 100, 2.0, 8.0);
        assert!((r - 4.0 * 3.0 * 32.0 / 10.0).abs() < 1e-12);
    }
}
