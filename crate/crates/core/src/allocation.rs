//! Random-allocation accounting on geometric grids of exponentiated losses.
//!
//! The allocation PLD is the log of an average of `t` exponentiated losses, so
//! the work happens on `e^L` represented over grids with a constant ratio.
//! Adding two such variables whose grids share a ratio lands on another grid
//! with the same ratio and the same number of points, which keeps the
//! rounding error of every convolution at one grid step in log space.

use crate::composition::self_compose;
use crate::error::{PldError, Result};
use crate::mechanisms::PldSource;
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::pld::{discretize, AdjacencyDirection, BoundDirection, DiscretePld, TightnessParams, MASS_TOL};
use serde::{Deserialize, Serialize};

/// Fraction of a grid step under which a sum counts as lying on a grid point.
const GRID_TIE: f64 = 1e-9;

/// Distribution over `{0} ∪ {base·e^{log_ratio·i} : i < n} ∪ {+inf}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricGridDist {
    base: f64,
    log_ratio: f64,
    probs: Vec<f64>,
    p_top: f64,
    p_zero: f64,
}

/// Shape of a geometric grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDescriptor {
    pub base: f64,
    pub log_ratio: f64,
    pub n: usize,
}

impl GridDescriptor {
    pub fn value(&self, i: usize) -> f64 {
        self.base * (self.log_ratio * i as f64).exp()
    }
}

impl GeometricGridDist {
    pub fn new(base: f64, log_ratio: f64, probs: Vec<f64>, p_top: f64, p_zero: f64) -> Result<Self> {
        if !(base.is_finite() && base > 0.0) {
            return Err(PldError::InvalidDistribution(format!("grid base {base} must be positive")));
        }
        if !(log_ratio.is_finite() && log_ratio > 0.0) {
            return Err(PldError::InvalidDistribution(format!("log ratio {log_ratio} must be positive")));
        }
        if probs.is_empty() {
            return Err(PldError::InvalidDistribution("grid has no points".into()));
        }
        let bad = |m: f64| !(m.is_finite() && m >= 0.0);
        if bad(p_top) || bad(p_zero) || probs.iter().any(|&p| bad(p)) {
            return Err(PldError::InvalidDistribution("masses must be nonnegative".into()));
        }
        let g = Self { base, log_ratio, probs, p_top, p_zero };
        let total = g.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(PldError::InvalidDistribution(format!("total mass {total} differs from 1")));
        }
        Ok(g)
    }

    /// All mass on the single value `v > 0`.
    pub fn point_mass(v: f64, log_ratio: f64) -> Result<Self> {
        Self::new(v, log_ratio, vec![1.0], 0.0, 0.0)
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn log_ratio(&self) -> f64 {
        self.log_ratio
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn p_top(&self) -> f64 {
        self.p_top
    }

    pub fn p_zero(&self) -> f64 {
        self.p_zero
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn descriptor(&self) -> GridDescriptor {
        GridDescriptor { base: self.base, log_ratio: self.log_ratio, n: self.probs.len() }
    }

    /// Value of grid point `i`.
    pub fn value(&self, i: usize) -> f64 {
        self.descriptor().value(i)
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.probs.iter().copied()) + self.p_top + self.p_zero
    }

    /// Copy extended with empty points at the top so it has `n` points.
    pub fn padded(&self, n: usize) -> Self {
        let mut g = self.clone();
        if n > g.probs.len() {
            g.probs.resize(n, 0.0);
        }
        g
    }

    /// Half-open range of indices that carry mass.
    fn support(&self) -> Option<(usize, usize)> {
        let lo = self.probs.iter().position(|&p| p > 0.0)?;
        let hi = self.probs.iter().rposition(|&p| p > 0.0)? + 1;
        Some((lo, hi))
    }

    /// Back to a loss distribution: values `ln(x) + shift`, or
    /// `shift - ln(x)` when `negate` is set. Empty edge points are dropped.
    pub fn to_pld(&self, shift: f64, negate: bool) -> DiscretePld {
        let ln_base = self.base.ln();
        let (lo, hi) = self.support().unwrap_or((0, 0));
        let idx: Vec<usize> = (lo..hi).collect();
        let (values, probs, p_bottom, p_top) = if negate {
            let values = idx.iter().rev().map(|&i| shift - (ln_base + self.log_ratio * i as f64)).collect();
            let probs = idx.iter().rev().map(|&i| self.probs[i]).collect();
            (values, probs, self.p_top, self.p_zero)
        } else {
            let values = idx.iter().map(|&i| ln_base + self.log_ratio * i as f64 + shift).collect();
            let probs = idx.iter().map(|&i| self.probs[i]).collect();
            (values, probs, self.p_zero, self.p_top)
        };
        DiscretePld::from_parts(values, probs, p_bottom, p_top)
    }
}

/// Exponentiates a PLD whose values form an arithmetic progression with step
/// `log_ratio`: the result is the law of `e^L`, or of `e^{-L}` when `negate`.
pub fn to_exp_grid(l: &DiscretePld, negate: bool, log_ratio: f64) -> Result<GeometricGridDist> {
    let vals = l.values();
    let n = vals.len();
    if n == 0 {
        let (p_top, p_zero) = if negate { (l.p_bottom(), l.p_top()) } else { (l.p_top(), l.p_bottom()) };
        return GeometricGridDist::new(1.0, log_ratio, vec![0.0], p_top, p_zero);
    }
    let scale = vals[0].abs().max(vals[n - 1].abs());
    let tol = 1e-9 * log_ratio + 8.0 * f64::EPSILON * scale;
    for (k, w) in vals.windows(2).enumerate() {
        if ((w[1] - w[0]) - log_ratio).abs() > tol {
            return Err(PldError::NotArithmetic(format!(
                "gap {} at index {k} differs from step {log_ratio}",
                w[1] - w[0]
            )));
        }
    }
    if negate {
        let probs: Vec<f64> = l.probs().iter().rev().copied().collect();
        GeometricGridDist::new((-vals[n - 1]).exp(), log_ratio, probs, l.p_bottom(), l.p_top())
    } else {
        GeometricGridDist::new(vals[0].exp(), log_ratio, l.probs().to_vec(), l.p_top(), l.p_bottom())
    }
}

/// Grid of all finite sums of values from `x` and `y`: base `a + b`, same
/// ratio and point count.
pub fn range_renorm(x: &GeometricGridDist, y: &GeometricGridDist) -> Result<GridDescriptor> {
    if x.len() != y.len() {
        return Err(PldError::MismatchedGrids(format!("{} vs {} points", x.len(), y.len())));
    }
    let rel = (x.log_ratio - y.log_ratio).abs() / x.log_ratio;
    if rel > 1e-12 {
        return Err(PldError::MismatchedGrids(format!("log ratios {} and {} differ", x.log_ratio, y.log_ratio)));
    }
    Ok(GridDescriptor { base: x.base + y.base, log_ratio: x.log_ratio, n: x.len() })
}

/// Counters collected while running the allocation transforms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocStats {
    /// Number of grid convolutions performed.
    pub conv_calls: usize,
    /// Points in the working grid.
    pub grid_points: usize,
}

/// Distribution of `X + Y` rounded onto the [`range_renorm`] grid: up for
/// `Upper`, down for `Lower`.
pub fn conv(x: &GeometricGridDist, y: &GeometricGridDist, dir: BoundDirection) -> Result<GeometricGridDist> {
    let grid = range_renorm(x, y)?;
    let n = grid.n;
    let lr = grid.log_ratio;
    let (a, b) = (x.base, y.base);
    let mut out = vec![0.0; n];
    let mut p_zero = x.p_zero * y.p_zero;
    let p_top = x.p_top + y.p_top - x.p_top * y.p_top;

    // A zero from one side leaves the other side's value, which sits at a
    // fractional offset below the matching point of the output grid.
    if x.p_zero > 0.0 {
        shift_into(&y.probs, x.p_zero, (a / b).ln_1p() / lr, dir, &mut out, &mut p_zero);
    }
    if y.p_zero > 0.0 {
        shift_into(&x.probs, y.p_zero, (b / a).ln_1p() / lr, dir, &mut out, &mut p_zero);
    }
    if let (Some(sx), Some(sy)) = (x.support(), y.support()) {
        let kernel = Kernel::new(a, b, lr, dir);
        let nnz_x = x.probs[sx.0..sx.1].iter().filter(|&&p| p > 0.0).count();
        let nnz_y = y.probs[sy.0..sy.1].iter().filter(|&&p| p > 0.0).count();
        let span = (sx.1 - sx.0) + (sy.1 - sy.0);
        if (nnz_x as u128) * (nnz_y as u128) <= (2 * span + 100_000) as u128 {
            kernel.sparse(&x.probs, &y.probs, sx, sy, &mut out);
        } else {
            if a == b && x.probs == y.probs {
                kernel.dense_square(&x.probs, sx, &mut out);
            } else {
                kernel.dense(&x.probs, &y.probs, sx, sy, &mut out);
            }
        }
    }
    for p in out.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    Ok(GeometricGridDist { base: grid.base, log_ratio: lr, probs: out, p_top, p_zero })
}

/// Adds `w * src[j]` at output index `j - theta` rounded per `dir`.
fn shift_into(src: &[f64], w: f64, theta: f64, dir: BoundDirection, out: &mut [f64], p_zero: &mut f64) {
    let s = match dir {
        BoundDirection::Upper => (theta + GRID_TIE).floor(),
        BoundDirection::Lower => (theta - GRID_TIE).ceil(),
    } as i64;
    for (j, &p) in src.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let k = j as i64 - s;
        if k >= 0 {
            out[k as usize] += w * p;
        } else {
            match dir {
                BoundDirection::Upper => out[0] += w * p,
                BoundDirection::Lower => *p_zero += w * p,
            }
        }
    }
}

/// Bin offsets for sums `a r^i + b r^j` on the grid `(a + b) r^k`.
///
/// With `d = j - i`, the target bin is `i + off(d)`. For `d <= 0` the offset
/// is computed from the `x` term, for `d > 0` from the `y` term, so the
/// logarithms never see cancellation.
struct Kernel {
    dir: BoundDirection,
    lr: f64,
    ln_a_frac: f64,
    ln_b_frac: f64,
    b_over_a: f64,
    a_over_b: f64,
}

impl Kernel {
    fn new(a: f64, b: f64, lr: f64, dir: BoundDirection) -> Self {
        Self { dir, lr, ln_a_frac: -(b / a).ln_1p(), ln_b_frac: -(a / b).ln_1p(), b_over_a: b / a, a_over_b: a / b }
    }

    #[inline]
    fn round(&self, h: f64) -> i64 {
        match self.dir {
            BoundDirection::Upper => (h - GRID_TIE).ceil() as i64,
            BoundDirection::Lower => (h + GRID_TIE).floor() as i64,
        }
    }

    /// `bin - i` for the pair at diagonal `d`.
    #[inline]
    fn off(&self, d: i64) -> i64 {
        if d == 0 {
            0
        } else if d < 0 {
            let h = (self.ln_a_frac + (self.b_over_a * (self.lr * d as f64).exp()).ln_1p()) / self.lr;
            self.round(h)
        } else {
            let h = (self.ln_b_frac + (self.a_over_b * (-self.lr * d as f64).exp()).ln_1p()) / self.lr;
            d + self.round(h)
        }
    }

    fn sparse(&self, x: &[f64], y: &[f64], sx: (usize, usize), sy: (usize, usize), out: &mut [f64]) {
        let ys: Vec<(usize, f64)> = (sy.0..sy.1).filter(|&j| y[j] > 0.0).map(|j| (j, y[j])).collect();
        for i in sx.0..sx.1 {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for &(j, yj) in &ys {
                let k = i as i64 + self.off(j as i64 - i as i64);
                out[k as usize] += xi * yj;
            }
        }
    }

    /// Groups diagonals with a common bin offset and adds each group as a
    /// window sum of prefix sums, costing O(n) per distinct offset.
    fn dense(&self, x: &[f64], y: &[f64], sx: (usize, usize), sy: (usize, usize), out: &mut [f64]) {
        let (xl, xh) = (sx.0 as i64, sx.1 as i64);
        let (yl, yh) = (sy.0 as i64, sy.1 as i64);
        let dmin = yl - (xh - 1);
        let dmax = (yh - 1) - xl;
        let offs: Vec<i64> = (dmin..=dmax).map(|d| self.off(d)).collect();
        let px = PrefixSums::new(x);
        let py = PrefixSums::new(y);
        let regions = [(dmin, dmax.min(0)), (dmin.max(1), dmax)];
        for &(d0, d1) in &regions {
            if d0 > d1 {
                continue;
            }
            let slice = &offs[(d0 - dmin) as usize..=(d1 - dmin) as usize];
            // Anchoring on i groups diagonals with equal `off(d)`; anchoring on
            // j groups those with equal `off(d) - d`. Pick the cheaper.
            let gi = groups(d0, slice, |_, o| o);
            let gj = groups(d0, slice, |d, o| o - d);
            let cost_i: i64 = gi.iter().map(|g| range_len(xl.max(yl - g.dh), xh.min(yh - g.dl))).sum();
            let cost_j: i64 = gj.iter().map(|g| range_len(yl.max(xl + g.dl), yh.min(xh + g.dh))).sum();
            if cost_i <= cost_j {
                let specs: Vec<WindowGroup> = gi
                    .iter()
                    .map(|g| WindowGroup {
                        shift: g.c,
                        lo: g.dl,
                        hi: g.dh,
                        a0: xl.max(yl - g.dh),
                        a1: xh.min(yh - g.dl),
                    })
                    .collect();
                window_pass(x, &py, &specs, out);
            } else {
                // For fixed j the partner index is i = j - d, so the window
                // over x runs from j - dh to j - dl.
                let specs: Vec<WindowGroup> = gj
                    .iter()
                    .map(|g| WindowGroup {
                        shift: g.c,
                        lo: -g.dh,
                        hi: -g.dl,
                        a0: yl.max(xl + g.dl),
                        a1: yh.min(xh + g.dh),
                    })
                    .collect();
                window_pass(y, &px, &specs, out);
            }
        }
    }
}

impl Kernel {
    /// Square of a distribution: pairs `(i, j)` and `(j, i)` share a bin, so
    /// only diagonals `d < 0` are visited, with double weight, plus the main
    /// diagonal.
    fn dense_square(&self, x: &[f64], sx: (usize, usize), out: &mut [f64]) {
        let (xl, xh) = (sx.0 as i64, sx.1 as i64);
        let dmin = xl - (xh - 1);
        for i in sx.0..sx.1 {
            out[i] += x[i] * x[i];
        }
        if dmin > -1 {
            return;
        }
        let offs: Vec<i64> = (dmin..=-1).map(|d| self.off(d)).collect();
        let doubled: Vec<f64> = x.iter().map(|&p| 2.0 * p).collect();
        let px = PrefixSums::new(x);
        let gi = groups(dmin, &offs, |_, o| o);
        let specs: Vec<WindowGroup> = gi
            .iter()
            .map(|g| WindowGroup { shift: g.c, lo: g.dl, hi: g.dh, a0: xl.max(xl - g.dh), a1: xh.min(xh - g.dl) })
            .collect();
        window_pass(&doubled, &px, &specs, out);
    }
}

fn range_len(a: i64, b: i64) -> i64 {
    (b - a).max(0)
}

struct DiagGroup {
    c: i64,
    dl: i64,
    dh: i64,
}

/// Maximal runs of consecutive diagonals sharing the same key.
fn groups(d0: i64, offs: &[i64], key: impl Fn(i64, i64) -> i64) -> Vec<DiagGroup> {
    let mut out: Vec<DiagGroup> = Vec::new();
    for (t, &o) in offs.iter().enumerate() {
        let d = d0 + t as i64;
        let c = key(d, o);
        match out.last_mut() {
            Some(g) if g.c == c => g.dh = d,
            _ => out.push(DiagGroup { c, dl: d, dh: d }),
        }
    }
    out
}

/// `out[a + shift] += anchor[a] * sum(other[a + lo ..= a + hi])` for `a` in
/// `[a0, a1)`.
struct WindowGroup {
    shift: i64,
    lo: i64,
    hi: i64,
    a0: i64,
    a1: i64,
}

/// Prefix and suffix sums over a zero-padded copy of a mass vector, so that
/// window sums never need clamping. Windows wholly left of the median are
/// taken from the prefix array and the rest from the suffix array, which
/// keeps small tail windows accurate.
struct PrefixSums {
    pad: i64,
    prefix: Vec<f64>,
    suffix: Vec<f64>,
    mid: i64,
}

impl PrefixSums {
    fn new(v: &[f64]) -> Self {
        let n = v.len();
        let pad = n as i64 + 1;
        let len = 3 * n + 3;
        let mut prefix = vec![0.0; len];
        let mut acc = CompensatedSum::new();
        for k in 0..len {
            prefix[k] = acc.value();
            let idx = k as i64 - pad;
            if (0..n as i64).contains(&idx) {
                acc.add(v[idx as usize]);
            }
        }
        let mut suffix = vec![0.0; len];
        let mut acc = CompensatedSum::new();
        for k in (0..len).rev() {
            let idx = k as i64 - pad;
            if (0..n as i64).contains(&idx) {
                acc.add(v[idx as usize]);
            }
            suffix[k] = acc.value();
        }
        let total = prefix[len - 1];
        let mid = (pad..pad + n as i64).find(|&k| prefix[k as usize] >= 0.5 * total).unwrap_or(pad) - pad;
        Self { pad, prefix, suffix, mid }
    }
}

const TILE: i64 = 512;

fn window_pass(anchor: &[f64], other: &PrefixSums, specs: &[WindowGroup], out: &mut [f64]) {
    let Some(start) = specs.iter().filter(|g| g.a1 > g.a0).map(|g| g.a0).min() else {
        return;
    };
    let end = specs.iter().map(|g| g.a1).max().unwrap_or(start);
    let pad = other.pad;
    let mut t0 = start;
    while t0 < end {
        let t1 = (t0 + TILE).min(end);
        for g in specs {
            let a0 = g.a0.max(t0);
            let a1 = g.a1.min(t1);
            if a0 >= a1 {
                continue;
            }
            // Window [a + lo, a + hi] lies left of the median while
            // a + hi + 1 <= mid.
            let split = (other.mid - g.hi - 1).clamp(a0, a1);
            if split > a0 {
                let hi0 = (a0 + g.hi + 1 + pad) as usize;
                let lo0 = (a0 + g.lo + pad) as usize;
                let len = (split - a0) as usize;
                accumulate(
                    &anchor[a0 as usize..split as usize],
                    &other.prefix[hi0..hi0 + len],
                    &other.prefix[lo0..lo0 + len],
                    &mut out[(a0 + g.shift) as usize..(split + g.shift) as usize],
                );
            }
            if a1 > split {
                let lo0 = (split + g.lo + pad) as usize;
                let hi0 = (split + g.hi + 1 + pad) as usize;
                let len = (a1 - split) as usize;
                accumulate(
                    &anchor[split as usize..a1 as usize],
                    &other.suffix[lo0..lo0 + len],
                    &other.suffix[hi0..hi0 + len],
                    &mut out[(split + g.shift) as usize..(a1 + g.shift) as usize],
                );
            }
        }
        t0 = t1;
    }
}

/// `out[t] += w[t] * (plus[t] - minus[t])`.
#[inline]
fn accumulate(w: &[f64], plus: &[f64], minus: &[f64], out: &mut [f64]) {
    let n = w.len();
    let (plus, minus, out) = (&plus[..n], &minus[..n], &mut out[..n]);
    for t in 0..n {
        out[t] += w[t] * (plus[t] - minus[t]);
    }
}

/// Moves the extreme `beta` tails after a squaring. The tail on the costly
/// side goes to the infinite atom of the bound (+inf for upper, 0 for
/// lower); the other tail is clamped to its quantile, which only makes the
/// bound more conservative.
fn truncate(g: &mut GeometricGridDist, dir: BoundDirection, beta: f64) {
    if !(beta > 0.0) {
        return;
    }
    let n = g.probs.len();
    // Quantiles are taken over the finite part only, so each call moves at
    // most `beta` of new mass on either side.
    let mut acc = CompensatedSum::new();
    let mut k_lo = n - 1;
    for (k, &p) in g.probs.iter().enumerate() {
        acc.add(p);
        if acc.value() >= beta {
            k_lo = k;
            break;
        }
    }
    let mut acc = CompensatedSum::new();
    let mut k_hi = 0;
    for k in (0..n).rev() {
        if acc.value() + g.probs[k] > beta {
            k_hi = k;
            break;
        }
        acc.add(g.probs[k]);
    }
    if k_lo > k_hi {
        return;
    }
    let below = compensated_sum(g.probs[..k_lo].iter().copied());
    let above = compensated_sum(g.probs[k_hi + 1..].iter().copied());
    g.probs[..k_lo].iter_mut().for_each(|p| *p = 0.0);
    g.probs[k_hi + 1..].iter_mut().for_each(|p| *p = 0.0);
    match dir {
        BoundDirection::Upper => {
            g.probs[k_lo] += below;
            g.p_top += above;
        }
        BoundDirection::Lower => {
            g.p_zero += below;
            g.probs[k_hi] += above;
        }
    }
}

/// Bound on the `m`-fold sum of independent copies of `x` by exponentiation
/// by squaring, truncating `trunc_beta` tails after every squaring.
pub fn self_conv(x: &GeometricGridDist, m: usize, dir: BoundDirection, trunc_beta: f64) -> Result<GeometricGridDist> {
    self_conv_with_stats(x, m, dir, trunc_beta, &mut AllocStats::default())
}

/// [`self_conv`] that also counts convolutions into `stats`.
pub fn self_conv_with_stats(
    x: &GeometricGridDist,
    m: usize,
    dir: BoundDirection,
    trunc_beta: f64,
    stats: &mut AllocStats,
) -> Result<GeometricGridDist> {
    if m == 0 {
        return Err(PldError::InvalidParams("self-convolution count must be at least 1".into()));
    }
    let mut acc: Option<GeometricGridDist> = None;
    let mut power = x.clone();
    let mut m = m;
    loop {
        if m & 1 == 1 {
            acc = Some(match acc {
                None => power.clone(),
                Some(r) => {
                    stats.conv_calls += 1;
                    conv(&r, &power, dir)?
                }
            });
        }
        m >>= 1;
        if m == 0 {
            break;
        }
        stats.conv_calls += 1;
        power = conv(&power, &power, dir)?;
        truncate(&mut power, dir, trunc_beta);
    }
    Ok(acc.expect("m >= 1 sets at least one bit"))
}

/// `ceil(log2 t)` for `t >= 1`.
pub fn ceil_log2(t: usize) -> u32 {
    if t <= 1 {
        0
    } else {
        usize::BITS - (t - 1).leading_zeros()
    }
}

/// Per-operation budget used inside a `t`-step allocation: the grid step
/// `alpha / (2 ceil(log2 t) + 1)` and the tail mass `beta / t`.
pub fn inner_params(params: TightnessParams, t: usize) -> Result<TightnessParams> {
    let steps = 2 * ceil_log2(t) as usize + 1;
    TightnessParams::new(params.alpha / steps as f64, params.beta / t as f64)
}

fn check_t(t: usize) -> Result<()> {
    if t == 0 {
        return Err(PldError::InvalidParams("t must be at least 1".into()));
    }
    Ok(())
}

/// Remove-direction PLD of random allocation over `t` steps, given the
/// remove-direction PLD of a single step.
///
/// The allocation loss is `ln((e^L + sum_{i<t} e^{-D_i}) / t)` with `D` the
/// dual of `L`. Upper bounds round `L` up and `D` down; lower bounds do the
/// opposite.
pub fn rand_alloc_remove(
    source: &dyn PldSource,
    t: usize,
    params: TightnessParams,
    dir: BoundDirection,
) -> Result<DiscretePld> {
    rand_alloc_remove_with_stats(source, t, params, dir).map(|r| r.0)
}

/// [`rand_alloc_remove`] together with its instrumentation.
pub fn rand_alloc_remove_with_stats(
    source: &dyn PldSource,
    t: usize,
    params: TightnessParams,
    dir: BoundDirection,
) -> Result<(DiscretePld, AllocStats)> {
    check_t(t)?;
    if t == 1 {
        let l = discretize(source, params, dir)?;
        let stats = AllocStats { conv_calls: 0, grid_points: l.len() };
        return Ok((l, stats));
    }
    let inner = inner_params(params, t)?;
    let lr = inner.alpha;
    let l = discretize(source, inner, dir)?;
    let dual = source.dual()?;
    let d = discretize(dual.as_ref(), inner, dir.flip())?;
    let u = to_exp_grid(&l, false, lr)?;
    let v = to_exp_grid(&d, true, lr)?;
    let n = u.len().max(v.len());
    let (u, v) = (u.padded(n), v.padded(n));
    let mut stats = AllocStats { conv_calls: 0, grid_points: n };
    let rest = self_conv_with_stats(&v, t - 1, dir, inner.beta, &mut stats)?;
    stats.conv_calls += 1;
    let sum = conv(&rest, &u, dir)?;
    Ok((sum.to_pld(-(t as f64).ln(), false), stats))
}

/// Add-direction PLD of random allocation over `t` steps, given the
/// add-direction PLD of a single step.
///
/// The allocation loss is `-ln(sum_{i<=t} e^{-L_i} / t)`; since `-ln` is
/// decreasing, the inner sum is bounded in the opposite direction.
pub fn rand_alloc_add(
    source: &dyn PldSource,
    t: usize,
    params: TightnessParams,
    dir: BoundDirection,
) -> Result<DiscretePld> {
    rand_alloc_add_with_stats(source, t, params, dir).map(|r| r.0)
}

/// [`rand_alloc_add`] together with its instrumentation.
pub fn rand_alloc_add_with_stats(
    source: &dyn PldSource,
    t: usize,
    params: TightnessParams,
    dir: BoundDirection,
) -> Result<(DiscretePld, AllocStats)> {
    check_t(t)?;
    if t == 1 {
        let l = discretize(source, params, dir)?;
        let stats = AllocStats { conv_calls: 0, grid_points: l.len() };
        return Ok((l, stats));
    }
    let inner = inner_params(params, t)?;
    let l = discretize(source, inner, dir)?;
    let x = to_exp_grid(&l, true, inner.alpha)?;
    let mut stats = AllocStats { conv_calls: 0, grid_points: x.len() };
    let sum = self_conv_with_stats(&x, t, dir.flip(), inner.beta, &mut stats)?;
    Ok((sum.to_pld((t as f64).ln(), true), stats))
}

/// Sizes of a k-out-of-t allocation together with its budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationParams {
    pub t: usize,
    pub k: usize,
    pub tightness: TightnessParams,
}

impl AllocationParams {
    pub fn new(t: usize, k: usize, tightness: TightnessParams) -> Result<Self> {
        if t == 0 || k == 0 || k > t {
            return Err(PldError::InvalidParams(format!("need 1 <= k <= t, got k = {k}, t = {t}")));
        }
        Ok(Self { t, k, tightness })
    }
}

/// Bounds for `k` selected steps out of `t`, through `k`-fold composition of
/// the single-selection allocation over `floor(t / k)` steps. Returns the
/// (remove, add) pair.
pub fn rand_alloc_k(
    source_rem: &dyn PldSource,
    source_add: &dyn PldSource,
    alloc: AllocationParams,
    dir: BoundDirection,
) -> Result<(DiscretePld, DiscretePld)> {
    Ok((
        rand_alloc_k_one(source_rem, AdjacencyDirection::Remove, alloc, dir)?,
        rand_alloc_k_one(source_add, AdjacencyDirection::Add, alloc, dir)?,
    ))
}

/// One adjacency direction of [`rand_alloc_k`]. For `k > 1` half the budget
/// goes to the allocation and half to the `k`-fold composition.
pub fn rand_alloc_k_one(
    source: &dyn PldSource,
    adj: AdjacencyDirection,
    alloc: AllocationParams,
    dir: BoundDirection,
) -> Result<DiscretePld> {
    let budget = if alloc.k == 1 { alloc.tightness } else { alloc.tightness.scaled(0.5)? };
    let t1 = alloc.t / alloc.k;
    let l = match adj {
        AdjacencyDirection::Remove => rand_alloc_remove(source, t1, budget, dir)?,
        AdjacencyDirection::Add => rand_alloc_add(source, t1, budget, dir)?,
    };
    if alloc.k == 1 {
        return Ok(l);
    }
    self_compose(&l, alloc.k, budget.alpha, dir)
}
