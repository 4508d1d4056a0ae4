//! Ground-truth densities with compact support `[-T, T]`.
//!
//! Three constructions are provided: the uniform density, a smooth
//! reference density that is exactly constant on a flat interval, and
//! perturbations of the reference by disjoint mother wavelets placed inside
//! that interval (the hypothesis densities used for lower-bound arguments).
//! Every density carries a cumulative distribution table for inverse-CDF
//! sampling.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;

use crate::coeffs::{CoefficientSet, SlotLayout};
use crate::error::{Error, Result};
use crate::quadrature::simpson_piecewise;
use crate::seed::unit_f64;
use crate::wavelet::{Dyadic, WaveletBasis, WaveletKind};

/// Number of cells in the cumulative distribution table.
pub const CDF_CELLS: usize = 1 << 17;

/// Tolerance on the total mass of a valid density.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Smooth reference density: a quintic smoothstep ramp plus a polynomial
/// bump on each side of the flat interval `[a, b]`, where the density is
/// exactly `c0`. Twice continuously differentiable on the whole line.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceShape {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub c0: f64,
    bump: f64,
}

impl ReferenceShape {
    fn new(t: f64, c0: f64, a: f64, b: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidDensity(format!("support half-width {t} must be positive")));
        }
        if !(-t < a && a < b && b < t) {
            return Err(Error::InvalidDensity(format!(
                "flat interval [{a}, {b}] must lie strictly inside (-{t}, {t})"
            )));
        }
        if !(c0 > 0.0) {
            return Err(Error::InvalidDensity(format!("flat level c0 = {c0} must be positive")));
        }
        let flat_mass = c0 * (b - a);
        if flat_mass >= 1.0 {
            return Err(Error::InfeasibleMass(flat_mass));
        }
        // Each ramp carries mass proportional to its width, so both share the
        // same bump height. The smoothstep integrates to 1/2 and the bump
        // u^3 (1-u)^3 to 1/140.
        let rest = 1.0 - flat_mass;
        let bump = 140.0 * (rest / (2.0 * t - (b - a)) - c0 / 2.0);
        let shape = Self { t, a, b, c0, bump };
        let negative = (0..=1000).map(|i| i as f64 / 1000.0).any(|u| shape.ramp(u) < 0.0);
        if negative {
            return Err(Error::InvalidDensity(format!(
                "ramps would go negative: flat mass {flat_mass} is too large for the ramp widths"
            )));
        }
        Ok(shape)
    }

    #[inline]
    fn ramp(&self, u: f64) -> f64 {
        let smooth = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
        let v = u * (1.0 - u);
        self.c0 * smooth + self.bump * v * v * v
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        if !(x > -self.t && x < self.t) {
            0.0
        } else if x < self.a {
            self.ramp((x + self.t) / (self.a + self.t))
        } else if x <= self.b {
            self.c0
        } else {
            self.ramp((self.t - x) / (self.t - self.b))
        }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Uniform { lo: f64, hi: f64 },
    Reference(ReferenceShape),
    Perturbed { base: Box<Shape>, basis: Arc<WaveletBasis>, level: Dyadic, terms: Vec<(i64, f64)> },
    Tabulated { lo: f64, dx: f64, values: Vec<f64> },
}

impl Shape {
    fn eval(&self, x: f64) -> f64 {
        match self {
            Shape::Uniform { lo, hi } => {
                if x >= *lo && x < *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Shape::Reference(r) => r.eval(x),
            Shape::Perturbed { base, basis, level, terms } => {
                let t = level.dilation * x;
                base.eval(x)
                    + terms
                        .iter()
                        .map(|&(k, c)| c * level.amplitude * basis.eval(WaveletKind::Mother, t - k as f64))
                        .sum::<f64>()
            }
            Shape::Tabulated { lo, dx, values } => {
                let pos = (x - lo) / dx;
                if !(pos >= 0.0 && pos <= (values.len() - 1) as f64) {
                    return 0.0;
                }
                let i = (pos as usize).min(values.len() - 2);
                let frac = pos - i as f64;
                values[i] + frac * (values[i + 1] - values[i])
            }
        }
    }

    fn breakpoints(&self, out: &mut Vec<f64>) {
        match self {
            Shape::Uniform { lo, hi } => out.extend([*lo, *hi]),
            Shape::Reference(r) => out.extend([-r.t, r.a, r.b, r.t]),
            Shape::Perturbed { base, basis, level, terms } => {
                base.breakpoints(out);
                let (a, b) = basis.support(WaveletKind::Mother);
                for &(k, _) in terms {
                    out.extend([(a + k as f64) / level.dilation, (b + k as f64) / level.dilation]);
                }
            }
            Shape::Tabulated { lo, dx, values } => out.extend([*lo, lo + dx * (values.len() - 1) as f64]),
        }
    }

    fn reference(&self) -> Option<&ReferenceShape> {
        match self {
            Shape::Reference(r) => Some(r),
            Shape::Perturbed { base, .. } => base.reference(),
            _ => None,
        }
    }
}

/// A probability density supported in `[-T, T]`.
#[derive(Debug, Clone)]
pub struct Density {
    shape: Shape,
    support_t: f64,
    label: String,
    breaks: Vec<f64>,
    cdf: Arc<[f64]>,
}

impl Density {
    fn from_shape(shape: Shape, support_t: f64, label: String) -> Self {
        let mut breaks = Vec::new();
        shape.breakpoints(&mut breaks);
        breaks.retain(|x| x.abs() <= support_t);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut density = Self { shape, support_t, label, breaks, cdf: Arc::from(Vec::new()) };
        density.cdf = density.build_cdf();
        density
    }

    /// Uniform density on `[lo, hi)`, with `T = max(|lo|, |hi|)`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidDensity(format!("uniform interval [{lo}, {hi}] is empty")));
        }
        let t = lo.abs().max(hi.abs());
        Ok(Self::from_shape(Shape::Uniform { lo, hi }, t, format!("uniform[{lo},{hi}]")))
    }

    /// Reference density on `[-t, t]`, exactly `c0` on `flat = [a, b]`.
    pub fn reference(t: f64, c0: f64, flat: (f64, f64)) -> Result<Self> {
        let shape = ReferenceShape::new(t, c0, flat.0, flat.1)?;
        let label = format!("reference(T={t},c0={c0},flat=[{},{}])", flat.0, flat.1);
        Ok(Self::from_shape(Shape::Reference(shape), t, label))
    }

    /// `f0 + gamma * sum_k theta_k psi_jk` over the packing set `I_j` of
    /// disjoint mother-wavelet supports inside the flat interval of `f0`.
    pub fn hypothesis(f0: &Density, basis: Arc<WaveletBasis>, j: i32, theta: &[bool], gamma: f64) -> Result<Self> {
        let reference = f0
            .shape
            .reference()
            .ok_or_else(|| Error::InvalidDensity(String::from("hypothesis densities perturb a reference density")))?
            .clone();
        let shifts = packing_set(&basis, j, reference.a, reference.b);
        if shifts.is_empty() {
            return Err(Error::EmptyPackingSet(j));
        }
        if theta.len() != shifts.len() {
            return Err(Error::ThetaLength { got: theta.len(), expected: shifts.len() });
        }
        let level = Dyadic::new(j);
        let lhs = gamma.abs() * level.amplitude * basis.sup_norms().1;
        if lhs > reference.c0 * (1.0 + 1e-12) {
            return Err(Error::NegativePerturbation { lhs, c0: reference.c0 });
        }
        let terms: Vec<(i64, f64)> = shifts.iter().zip(theta).filter(|(_, &on)| on).map(|(&k, _)| (k, gamma)).collect();
        let active = terms.len();
        let label = format!("hypothesis({}, {}, j={j}, active={active}, gamma={gamma})", f0.label, basis.family());
        let shape = Shape::Perturbed { base: Box::new(f0.shape.clone()), basis, level, terms };
        Ok(Self::from_shape(shape, f0.support_t, label))
    }

    /// Piecewise-linear density through `values` on a uniform grid starting
    /// at `lo` with spacing `dx`. Used to load serialised densities.
    pub fn tabulated(lo: f64, dx: f64, values: Vec<f64>, label: String) -> Result<Self> {
        if values.len() < 2 || !(dx > 0.0) || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidDensity(String::from(
                "tabulated density needs >= 2 non-negative values and dx > 0",
            )));
        }
        let hi = lo + dx * (values.len() - 1) as f64;
        let t = lo.abs().max(hi.abs());
        Ok(Self::from_shape(Shape::Tabulated { lo, dx, values }, t, label))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Half-width `T` of the support `[-T, T]`.
    pub fn support_t(&self) -> f64 {
        self.support_t
    }

    /// Sorted points where the density or its low derivatives may jump.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    /// Flat level `c0` and interval `[a, b]` of the underlying reference.
    pub fn flat_part(&self) -> Option<(f64, (f64, f64))> {
        self.shape.reference().map(|r| (r.c0, (r.a, r.b)))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x.abs() > self.support_t {
            0.0
        } else {
            self.shape.eval(x)
        }
    }

    fn cdf_dx(&self) -> f64 {
        2.0 * self.support_t / CDF_CELLS as f64
    }

    fn build_cdf(&self) -> Arc<[f64]> {
        let dx = self.cdf_dx();
        let lo = -self.support_t;
        let mut acc = 0.0;
        let mut values = Vec::with_capacity(CDF_CELLS + 1);
        values.push(0.0);
        for i in 0..CDF_CELLS {
            let (a, b) = (lo + i as f64 * dx, lo + (i + 1) as f64 * dx);
            acc += simpson_piecewise(|x| self.eval(x), a, b, self.breaks_in(a, b), dx / 2.0).max(0.0);
            values.push(acc);
        }
        if acc > 0.0 {
            values.iter_mut().for_each(|v| *v /= acc);
        }
        Arc::from(values)
    }

    fn breaks_in(&self, a: f64, b: f64) -> &[f64] {
        let start = self.breaks.partition_point(|&x| x <= a);
        let end = self.breaks.partition_point(|&x| x < b);
        &self.breaks[start..end.max(start)]
    }

    /// `(x_i, F(x_i))` on the uniform table over `[-T, T]`.
    pub fn cdf_table(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let dx = self.cdf_dx();
        self.cdf.iter().enumerate().map(move |(i, &f)| (-self.support_t + i as f64 * dx, f))
    }

    /// Distribution function interpolated from the table.
    pub fn cdf(&self, x: f64) -> f64 {
        let pos = (x + self.support_t) / self.cdf_dx();
        if pos <= 0.0 {
            return 0.0;
        }
        if pos >= CDF_CELLS as f64 {
            return 1.0;
        }
        let i = pos as usize;
        self.cdf[i] + (pos - i as f64) * (self.cdf[i + 1] - self.cdf[i])
    }

    /// `integral of f * weight` over `[lo, hi]`, split at the density's
    /// breakpoints and at `extra`, panel width at most `h`.
    pub fn integrate_weighted<W: Fn(f64) -> f64>(&self, weight: W, lo: f64, hi: f64, extra: &[f64], h: f64) -> f64 {
        let lo = lo.max(-self.support_t);
        let hi = hi.min(self.support_t);
        if hi <= lo {
            return 0.0;
        }
        let mut cuts: Vec<f64> = self.breaks_in(lo, hi).to_vec();
        cuts.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
        simpson_piecewise(|x| self.eval(x) * weight(x), lo, hi, &cuts, h)
    }

    /// Total mass by piecewise Simpson quadrature.
    pub fn mass(&self) -> f64 {
        let h = self.cdf_dx();
        self.integrate_weighted(|_| 1.0, -self.support_t, self.support_t, &[], h)
    }

    /// Largest value on the CDF grid and at the breakpoints.
    pub fn sup_estimate(&self) -> f64 {
        self.cdf_table().map(|(x, _)| x).chain(self.breaks.iter().copied()).map(|x| self.eval(x)).fold(0.0, f64::max)
    }

    /// Check mass, support and CDF invariants.
    pub fn validate(&self) -> Result<()> {
        let mass = self.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDensity(format!("{}: mass {mass} differs from one", self.label)));
        }
        let t = self.support_t;
        for x in [-t - 1e-9, t + 1e-9, -2.0 * t, 2.0 * t, f64::NAN] {
            if self.eval(x) != 0.0 {
                return Err(Error::InvalidDensity(format!("{}: non-zero outside the support at {x}", self.label)));
            }
        }
        if self.cdf.windows(2).any(|w| w[1] < w[0])
            || self.cdf[0] != 0.0
            || (self.cdf[CDF_CELLS] - 1.0).abs() > MASS_TOLERANCE
        {
            return Err(Error::InvalidDensity(format!("{}: malformed distribution table", self.label)));
        }
        if self.cdf_table().any(|(x, _)| self.eval(x) < 0.0) {
            return Err(Error::InvalidDensity(format!("{}: negative values", self.label)));
        }
        Ok(())
    }

    /// One inverse-CDF draw.
    #[inline]
    pub fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = unit_f64(rng);
        let cdf = &self.cdf;
        let i = cdf.partition_point(|&f| f <= u).clamp(1, CDF_CELLS) - 1;
        let (lo, hi) = (cdf[i], cdf[i + 1]);
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        (-self.support_t + (i as f64 + frac) * self.cdf_dx()).clamp(-self.support_t, self.support_t)
    }

    /// `n` i.i.d. draws from a ChaCha8 stream seeded with `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// True coefficients `alpha_{j0 k}`, `beta_{jk}` over the slot layout of
    /// `basis` on `[-T, T]`, by composite Simpson quadrature.
    pub fn wavelet_coefficients(&self, basis: &WaveletBasis, j0: i32, j1: i32) -> Result<CoefficientSet> {
        let layout = Arc::new(SlotLayout::new(basis, j0, j1, self.support_t)?);
        Ok(self.project(basis, layout))
    }

    /// Quadrature projection onto an existing layout.
    pub fn project(&self, basis: &WaveletBasis, layout: Arc<SlotLayout>) -> CoefficientSet {
        project(|x| self.eval(x), &self.breaks, basis, layout)
    }
}

/// Inner products of `f` with every slot's basis function. Each integral
/// runs over the basis function's support clipped to `[-T, T]`, with panels
/// half the wavelet table spacing at that level (table depth capped at 12).
pub fn project<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    basis: &WaveletBasis,
    layout: Arc<SlotLayout>,
) -> CoefficientSet {
    let t = layout.support_t();
    let refine = basis.depth().min(12) as i32 + 1;
    let mut set = CoefficientSet::zeros(layout.clone());
    let values = set.values_mut();
    for level in layout.levels() {
        let (a, b) = basis.support(level.kind);
        let d = level.dyadic;
        let h = libm::scalbn(1.0, -(d.level + refine));
        for k in level.shifts() {
            let lo = ((a + k as f64) / d.dilation).max(-t);
            let hi = ((b + k as f64) / d.dilation).min(t);
            let w = |x: f64| d.amplitude * basis.eval(level.kind, d.dilation * x - k as f64);
            // Haar jumps at half-integers in its own coordinate.
            let halves = (1..(2.0 * (b - a)) as i32).map(|m| (a + k as f64 + 0.5 * m as f64) / d.dilation);
            let cuts: Vec<f64> = breaks.iter().copied().chain(halves).filter(|&x| x > lo && x < hi).collect();
            values[level.index(k).unwrap()] = simpson_piecewise(|x| f(x) * w(x), lo, hi, &cuts, h);
        }
    }
    set
}

/// Greedy left-to-right packing of mother-wavelet supports at level `j`
/// inside `[a, b]`; consecutive supports share at most an endpoint.
pub fn packing_set(basis: &WaveletBasis, j: i32, a: f64, b: f64) -> Vec<i64> {
    let (sa, sb) = basis.support(WaveletKind::Mother);
    let d = Dyadic::new(j).dilation;
    let width = libm::ceil(sb - sa).max(1.0) as i64;
    let mut k = libm::ceil(a * d - sa) as i64;
    let mut out = Vec::new();
    while (sb + k as f64) / d <= b {
        out.push(k);
        k += width;
    }
    out
}

/// Besov sequence norm, truncated at the top level of the coefficient set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesovNorm {
    pub value: f64,
    /// Highest level included; the true norm is at least `value`.
    pub top_level: i32,
}

/// `||alpha_{j0 .}||_p + ( sum_j (2^{j(s + 1/2 - 1/p)} ||beta_{j .}||_p)^q )^{1/q}`,
/// with the maximum over levels when `q` is infinite.
pub fn besov_norm(coeffs: &CoefficientSet, s: f64, p: f64, q: f64) -> Result<BesovNorm> {
    if !(s > 0.0) || !(p >= 1.0) || !(q >= 1.0) {
        return Err(Error::InvalidRateParameters(format!("Besov parameters s={s}, p={p}, q={q}")));
    }
    let lp = |v: &[f64]| -> f64 {
        if p.is_infinite() {
            v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
        } else {
            libm::pow(v.iter().map(|x| libm::pow(x.abs(), p)).sum::<f64>(), 1.0 / p)
        }
    };
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let coarse = lp(coeffs.level(coeffs.j0() - 1).unwrap_or(&[]));
    let weighted = (coeffs.j0()..=coeffs.j1())
        .map(|j| libm::exp2(j as f64 * (s + 0.5 - inv_p)) * lp(coeffs.level(j).unwrap_or(&[])));
    let detail = if q.is_infinite() {
        weighted.fold(0.0, f64::max)
    } else {
        libm::pow(weighted.map(|w| libm::pow(w, q)).sum::<f64>(), 1.0 / q)
    };
    Ok(BesovNorm { value: coarse + detail, top_level: coeffs.j1() })
}
