//! Slot layouts and wavelet coefficient sets.
//!
//! Both the released records and the coefficient sets are flat vectors
//! over one [`SlotLayout`]: first the father shifts at level `j0` (labelled
//! `j0 - 1`, as in the released records), then the mother shifts of levels
//! `j0..=j1`, each a contiguous range of `k`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::wavelet::{Dyadic, WaveletBasis, WaveletKind};

/// One contiguous block of shifts in a [`SlotLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRange {
    /// Level label: `j0 - 1` for the father block, `j` for mother blocks.
    pub label: i32,
    pub kind: WaveletKind,
    pub dyadic: Dyadic,
    pub first: i64,
    pub len: usize,
    pub offset: usize,
}

impl LevelRange {
    pub fn last(&self) -> i64 {
        self.first + self.len as i64 - 1
    }

    pub fn shifts(&self) -> core::ops::RangeInclusive<i64> {
        self.first..=self.last()
    }

    #[inline]
    pub fn index(&self, k: i64) -> Option<usize> {
        let i = k - self.first;
        (i >= 0 && (i as usize) < self.len).then(|| self.offset + i as usize)
    }
}

/// Slot layout `N_{j0-1}, N_{j0}, ..., N_{j1}` for one basis and support.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLayout {
    j0: i32,
    j1: i32,
    support_t: f64,
    levels: Vec<LevelRange>,
    total: usize,
}

impl SlotLayout {
    pub fn new(basis: &WaveletBasis, j0: i32, j1: i32, support_t: f64) -> Result<Self> {
        if j1 < j0 {
            return Err(Error::InvalidMechanism(alloc::format!("j1 = {j1} is below j0 = {j0}")));
        }
        if !(support_t > 0.0 && support_t.is_finite()) {
            return Err(Error::InvalidMechanism(alloc::format!("support half-width {support_t} must be positive")));
        }
        let mut levels = Vec::with_capacity((j1 - j0 + 2) as usize);
        let mut offset = 0;
        let blocks =
            core::iter::once((j0 - 1, j0, WaveletKind::Father)).chain((j0..=j1).map(|j| (j, j, WaveletKind::Mother)));
        for (label, scale, kind) in blocks {
            let shifts = basis.active_shifts(kind, scale, support_t);
            let len = (shifts.end() - shifts.start() + 1).max(0) as usize;
            levels.push(LevelRange { label, kind, dyadic: Dyadic::new(scale), first: *shifts.start(), len, offset });
            offset += len;
        }
        Ok(Self { j0, j1, support_t, levels, total: offset })
    }

    pub fn j0(&self) -> i32 {
        self.j0
    }

    pub fn j1(&self) -> i32 {
        self.j1
    }

    pub fn support_t(&self) -> f64 {
        self.support_t
    }

    pub fn levels(&self) -> &[LevelRange] {
        &self.levels
    }

    pub fn father(&self) -> &LevelRange {
        &self.levels[0]
    }

    /// Mother block of level `j`, if `j0 <= j <= j1`.
    pub fn detail(&self, j: i32) -> Option<&LevelRange> {
        (self.j0..=self.j1).contains(&j).then(|| &self.levels[(j - self.j0 + 1) as usize])
    }

    /// Block by level label (`j0 - 1` is the father block).
    pub fn by_label(&self, label: i32) -> Option<&LevelRange> {
        let i = label - self.j0 + 1;
        (i >= 0).then(|| self.levels.get(i as usize)).flatten()
    }

    /// Total number of slots.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Flat index of `(label, k)`.
    pub fn index(&self, label: i32, k: i64) -> Option<usize> {
        self.by_label(label)?.index(k)
    }

    /// Add every slot's basis value at `x` into `out`.
    #[inline]
    pub fn add_point(&self, basis: &WaveletBasis, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.total);
        for level in &self.levels {
            basis.for_each_at(level.kind, level.dyadic, x, |k, v| {
                if let Some(i) = level.index(k) {
                    out[i] += v;
                }
            });
        }
    }

    /// `(label, k)` of every slot in layout order.
    pub fn keys(&self) -> impl Iterator<Item = (i32, i64)> + '_ {
        self.levels.iter().flat_map(|l| l.shifts().map(move |k| (l.label, k)))
    }

    /// Smallest interval containing the support of every basis function in
    /// the layout.
    pub fn function_support(&self, basis: &WaveletBasis) -> (f64, f64) {
        self.levels.iter().filter(|l| l.len > 0).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), l| {
            let (a, b) = basis.support(l.kind);
            let d = l.dyadic.dilation;
            (lo.min((a + l.first as f64) / d), hi.max((b + l.last() as f64) / d))
        })
    }
}

/// Wavelet coefficients `alpha_{j0 k}` and `beta_{jk}`, `j0 <= j <= j1`,
/// stored over a [`SlotLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    layout: Arc<SlotLayout>,
    values: Vec<f64>,
}

impl CoefficientSet {
    pub fn zeros(layout: Arc<SlotLayout>) -> Self {
        let values = alloc::vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<SlotLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::InconsistentLayout);
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<SlotLayout> {
        &self.layout
    }

    pub fn j0(&self) -> i32 {
        self.layout.j0()
    }

    pub fn j1(&self) -> i32 {
        self.layout.j1()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn alpha(&self, k: i64) -> Option<f64> {
        self.layout.father().index(k).map(|i| self.values[i])
    }

    pub fn beta(&self, j: i32, k: i64) -> Option<f64> {
        self.layout.detail(j)?.index(k).map(|i| self.values[i])
    }

    /// Values of the block with the given label.
    pub fn level(&self, label: i32) -> Option<&[f64]> {
        self.layout.by_label(label).map(|l| &self.values[l.offset..l.offset + l.len])
    }

    /// `(label, k, value)` triples in layout order.
    pub fn triples(&self) -> impl Iterator<Item = (i32, i64, f64)> + '_ {
        self.layout.keys().zip(self.values.iter()).map(|((j, k), &v)| (j, k, v))
    }

    /// Keep only the levels up to `j1`.
    pub fn truncated(&self, basis: &WaveletBasis, j1: i32) -> Result<Self> {
        if j1 > self.j1() {
            return Err(Error::LevelOutOfRange { requested: j1, available: self.j1() });
        }
        if j1 == self.j1() {
            return Ok(self.clone());
        }
        let layout = SlotLayout::new(basis, self.j0(), j1.max(self.j0()), self.layout.support_t())?;
        let values = self.values[..layout.len()].to_vec();
        Ok(Self { layout: Arc::new(layout), values })
    }

    /// `sum alpha phi_{j0 k}(x) + sum beta psi_{jk}(x)`, touching only the
    /// shifts whose support contains `x`.
    #[inline]
    pub fn evaluate(&self, basis: &WaveletBasis, x: f64) -> f64 {
        let mut acc = 0.0;
        for level in self.layout.levels() {
            basis.for_each_at(level.kind, level.dyadic, x, |k, v| {
                if let Some(i) = level.index(k) {
                    acc += self.values[i] * v;
                }
            });
        }
        acc
    }
}
