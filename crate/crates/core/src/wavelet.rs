//! Compactly supported orthonormal wavelet bases on the real line.
//!
//! A basis is tabulated once on the dyadic grid `2^-depth * Z` over its
//! support and evaluated anywhere by table lookup. For Daubechies families
//! the values at the integers come from the eigenvector (eigenvalue 1) of
//! the refinement matrix and the cascade recursion fills in every finer
//! dyadic point exactly; off-grid arguments use linear interpolation. Haar
//! is piecewise constant and is tabulated directly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::RangeInclusive;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::filters;

/// Multiplier applied to tabulated sup-norms before they enter a privacy
/// noise scale. The table maximum can only underestimate the true sup.
pub const SUP_NORM_SAFETY: f64 = 1.001;

/// Supported wavelet families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Piecewise-constant Haar basis. Not smooth enough for the rate
    /// results; intended for hand-checkable mechanics tests.
    Haar,
    /// Daubechies extremal-phase wavelets with `N` vanishing moments,
    /// `N` in `2..=10`; filter length `2N`, support `[0, 2N-1]`.
    Daubechies(u8),
}

impl Family {
    pub fn is_mechanics_only(self) -> bool {
        matches!(self, Family::Haar)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Haar => f.write_str("haar"),
            Family::Daubechies(n) => write!(f, "db{n}"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "haar" || lower == "db1" {
            return Ok(Family::Haar);
        }
        let digits = lower
            .strip_prefix("daubechies")
            .or_else(|| lower.strip_prefix("db"))
            .ok_or_else(|| Error::UnsupportedFamily(String::from(s)))?;
        match digits.parse::<u8>() {
            Ok(n) if (2..=10).contains(&n) => Ok(Family::Daubechies(n)),
            _ => Err(Error::UnsupportedFamily(String::from(s))),
        }
    }
}

/// Father (scaling) or mother (detail) wavelet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveletKind {
    Father,
    Mother,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Interpolation {
    Step,
    Linear,
}

/// Tabulated father and mother wavelets of one family.
///
/// Immutable after construction and cheap to share behind an `Arc`.
#[derive(Debug, Clone)]
pub struct WaveletBasis {
    family: Family,
    filter: Vec<f64>,
    depth: u32,
    resolution: f64,
    father: Vec<f64>,
    mother: Vec<f64>,
    support_father: (f64, f64),
    support_mother: (f64, f64),
    interpolation: Interpolation,
    sup_father: f64,
    sup_mother: f64,
    half_width: f64,
    overlap_count: u32,
}

impl WaveletBasis {
    /// Tabulate `family` at spacing `2^-depth`, `depth` in `4..=24`.
    pub fn build(family: Family, depth: u32) -> Result<Self> {
        if !(4..=24).contains(&depth) {
            return Err(Error::InvalidDepth(depth));
        }
        match family {
            Family::Haar => Ok(Self::haar(depth)),
            Family::Daubechies(n) => {
                let filter = filters::daubechies(n).ok_or_else(|| Error::UnsupportedFamily(format!("{family}")))?;
                Self::from_filter(family, filter.to_vec(), depth)
            }
        }
    }

    fn haar(depth: u32) -> Self {
        let m = 1usize << depth;
        let mut father = vec![1.0; m + 1];
        father[m] = 0.0;
        let mother = (0..=m)
            .map(|i| match i {
                i if i < m / 2 => 1.0,
                i if i < m => -1.0,
                _ => 0.0,
            })
            .collect();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        Self::assemble(Family::Haar, vec![h, h], depth, father, mother, Interpolation::Step)
    }

    fn from_filter(family: Family, filter: Vec<f64>, depth: u32) -> Result<Self> {
        let len = filter.len() - 1;
        let m = 1usize << depth;
        let sqrt2 = core::f64::consts::SQRT_2;
        let mut father = vec![0.0; len * m + 1];

        for (n, v) in integer_values(&filter)?.into_iter().enumerate() {
            father[n * m] = v;
        }
        // Cascade: values at odd multiples of 2^-d from those at 2^-(d-1).
        for d in 1..=depth {
            let stride = m >> d;
            let mut idx = stride;
            while idx < len * m {
                father[idx] = sqrt2 * refine(&filter, &father, 2 * idx, m, |_, h| h);
                idx += 2 * stride;
            }
        }
        let mother = (0..=len * m)
            .map(|idx| {
                sqrt2
                    * refine(&filter, &father, 2 * idx, m, |k, _| {
                        let g = filter[len - k];
                        if k % 2 == 0 {
                            g
                        } else {
                            -g
                        }
                    })
            })
            .collect();
        Ok(Self::assemble(family, filter, depth, father, mother, Interpolation::Linear))
    }

    fn assemble(
        family: Family,
        filter: Vec<f64>,
        depth: u32,
        father: Vec<f64>,
        mother: Vec<f64>,
        interpolation: Interpolation,
    ) -> Self {
        let extent = (filter.len() - 1) as f64;
        let sup = |t: &[f64]| t.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let half_width = extent.max(0.0);
        Self {
            family,
            depth,
            resolution: (1u64 << depth) as f64,
            sup_father: sup(&father),
            sup_mother: sup(&mother),
            father,
            mother,
            support_father: (0.0, extent),
            support_mother: (0.0, extent),
            interpolation,
            half_width,
            overlap_count: 2 * libm::ceil(half_width) as u32 + 1,
            filter,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn filter(&self) -> &[f64] {
        &self.filter
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Closed support `[a, b]` of the father or mother wavelet.
    pub fn support(&self, kind: WaveletKind) -> (f64, f64) {
        match kind {
            WaveletKind::Father => self.support_father,
            WaveletKind::Mother => self.support_mother,
        }
    }

    /// `A = max(|a_phi|, |b_phi|, |a_psi|, |b_psi|)`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// `c_A = 2 ceil(A) + 1`, the bound on how many shifts of one level can
    /// be non-zero at a single point.
    pub fn overlap_count(&self) -> u32 {
        self.overlap_count
    }

    /// `(sup|phi|, sup|psi|)` over the dyadic table.
    ///
    /// These are lower bounds on the true sup-norms that converge as the
    /// depth grows; for Haar they are exact.
    pub fn sup_norms(&self) -> (f64, f64) {
        (self.sup_father, self.sup_mother)
    }

    /// Sup-norms as they enter privacy noise scales: the table values times
    /// [`SUP_NORM_SAFETY`], except for Haar where the table is exact.
    pub fn privacy_sup_norms(&self) -> (f64, f64) {
        let factor = if self.family == Family::Haar { 1.0 } else { SUP_NORM_SAFETY };
        (self.sup_father * factor, self.sup_mother * factor)
    }

    fn table(&self, kind: WaveletKind) -> &[f64] {
        match kind {
            WaveletKind::Father => &self.father,
            WaveletKind::Mother => &self.mother,
        }
    }

    /// Unscaled `phi(t)` or `psi(t)`; zero outside the half-open support.
    #[inline]
    pub fn eval(&self, kind: WaveletKind, t: f64) -> f64 {
        let (a, b) = self.support(kind);
        if !(t >= a && t < b) {
            return 0.0;
        }
        let table = self.table(kind);
        let pos = (t - a) * self.resolution;
        let i = (pos as usize).min(table.len() - 2);
        match self.interpolation {
            Interpolation::Step => table[i],
            Interpolation::Linear => {
                let frac = pos - i as f64;
                table[i] + frac * (table[i + 1] - table[i])
            }
        }
    }

    /// `2^{j/2} w(2^j x - k)` for `w` the father or mother wavelet.
    #[inline]
    pub fn eval_scaled(&self, kind: WaveletKind, j: i32, k: i64, x: f64) -> f64 {
        let dyadic = Dyadic::new(j);
        dyadic.amplitude * self.eval(kind, dyadic.dilation * x - k as f64)
    }

    /// Shifts `k` with `w_jk(x)` possibly non-zero, i.e. `2^j x - k` in the
    /// half-open support. At most `b - a + 1 <= c_A` of them.
    #[inline]
    pub fn shifts_at(&self, kind: WaveletKind, dilation: f64, x: f64) -> RangeInclusive<i64> {
        let (a, b) = self.support(kind);
        let t = dilation * x;
        let lo = libm::floor(t - b) as i64 + 1;
        let hi = libm::floor(t - a) as i64;
        lo..=hi
    }

    /// Call `f(k, w_jk(x))` for every shift whose support contains `x`.
    #[inline]
    pub fn for_each_at<F: FnMut(i64, f64)>(&self, kind: WaveletKind, level: Dyadic, x: f64, mut f: F) {
        let t = level.dilation * x;
        if !t.is_finite() {
            return;
        }
        for k in self.shifts_at(kind, level.dilation, x) {
            let v = self.eval(kind, t - k as f64);
            if v != 0.0 {
                f(k, level.amplitude * v);
            }
        }
    }

    /// The set `N_j` of shifts whose scaled support meets `[-t, t]` in an
    /// interval of positive length.
    pub fn active_shifts(&self, kind: WaveletKind, j: i32, t: f64) -> RangeInclusive<i64> {
        let (a, b) = self.support(kind);
        let scaled = Dyadic::new(j).dilation * t;
        let lo = libm::floor(-scaled - b) as i64 + 1;
        let hi = libm::ceil(scaled - a) as i64 - 1;
        lo..=hi
    }

    /// Tabulated `(x, phi(x), psi(x))` over the common support at the table
    /// spacing.
    pub fn table_rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let a = self.support_father.0.min(self.support_mother.0);
        let b = self.support_father.1.max(self.support_mother.1);
        let count = libm::round((b - a) * self.resolution) as usize;
        (0..=count).map(move |i| {
            let x = a + i as f64 / self.resolution;
            (x, self.eval(WaveletKind::Father, x), self.eval(WaveletKind::Mother, x))
        })
    }
}

/// Precomputed `2^j` and `2^{j/2}` for one resolution level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dyadic {
    pub level: i32,
    pub dilation: f64,
    pub amplitude: f64,
}

impl Dyadic {
    pub fn new(level: i32) -> Self {
        let dilation = libm::scalbn(1.0, level);
        Self { level, dilation, amplitude: libm::sqrt(dilation) }
    }
}

/// `sum_k coef(k, h_k) * phi[(target - k*m)]` over taps whose argument lies
/// on the tabulated support.
#[inline]
fn refine<C: Fn(usize, f64) -> f64>(filter: &[f64], father: &[f64], target: usize, m: usize, coef: C) -> f64 {
    let last = father.len() - 1;
    filter
        .iter()
        .enumerate()
        .filter_map(|(k, &h)| {
            let shift = k * m;
            (target >= shift && target - shift <= last).then(|| coef(k, h) * father[target - shift])
        })
        .sum()
}

/// Values of the scaling function at `0, 1, ..., L` for a filter of length
/// `L + 1`: the eigenvector of `M[n][m] = sqrt(2) h_{2n-m}` for eigenvalue
/// one, normalised to sum to one.
fn integer_values(filter: &[f64]) -> Result<Vec<f64>> {
    let size = filter.len();
    let sqrt2 = core::f64::consts::SQRT_2;
    let tap = |i: i64| -> f64 {
        if i >= 0 && (i as usize) < filter.len() {
            filter[i as usize]
        } else {
            0.0
        }
    };
    // Columns of M sum to one, so the rows of M - I are dependent and the
    // last one can be traded for the normalisation.
    let mut a: Vec<Vec<f64>> = (0..size)
        .map(|n| (0..size).map(|m| sqrt2 * tap(2 * n as i64 - m as i64) - if n == m { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut rhs = vec![0.0; size];
    a[size - 1].iter_mut().for_each(|v| *v = 1.0);
    rhs[size - 1] = 1.0;
    solve(a, rhs).ok_or(Error::SingularRefinement)
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                let (top, rest) = a.split_at_mut(row);
                for (t, p) in rest[0][col..].iter_mut().zip(&top[col][col..]) {
                    *t -= factor * p;
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}
