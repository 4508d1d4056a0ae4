//! Composite Simpson quadrature.

/// Composite Simpson rule for `f` on `[a, b]` with `panels` subintervals
/// (rounded up to an even count).
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = (panels.max(2) + 1) & !1;
    let h = (b - a) / m as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..m {
        let y = f(a + i as f64 * h);
        if i % 2 == 1 {
            odd += y;
        } else {
            even += y;
        }
    }
    h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even)
}

/// Simpson on `[a, b]` split at the given interior breakpoints, using a
/// panel width of at most `h` on every piece. Piece endpoints are evaluated
/// one ulp inside the piece, so jumps at breakpoints are integrated from the
/// correct side.
pub fn simpson_piecewise<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, breaks: &[f64], h: f64) -> f64 {
    let mut total = 0.0;
    let mut left = a;
    let mut cuts: alloc::vec::Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.push(b);
    for right in cuts {
        if right > left {
            let panels = libm::ceil((right - left) / h) as usize;
            let (lo, hi) = (left.next_up(), right.next_down());
            let inside = |x: f64| f(x.clamp(lo, hi));
            total += simpson(inside, left, right, panels.max(2));
            left = right;
        }
    }
    total
}

/// Simpson weights for `m` (even) uniform intervals of width `h`:
/// `[1, 4, 2, 4, ..., 4, 1] * h / 3`.
pub fn simpson_weights(m: usize, h: f64) -> alloc::vec::Vec<f64> {
    let m = (m.max(2) + 1) & !1;
    (0..=m)
        .map(|i| {
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}
