//! The discrete privacy loss distribution and its primitive operations.

use crate::error::{PldError, Result};
use crate::mechanisms::PldSource;
use crate::numeric::{compensated_sum, scaled_exp, CompensatedSum};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Absolute tolerance on total probability mass.
pub const MASS_TOL: f64 = 1e-9;
/// Slack used when comparing CCDFs.
pub const CCDF_SLACK: f64 = 1e-12;
/// Default absolute tolerance of [`DiscretePld::epsilon_for_delta`].
pub const DEFAULT_EPS_TOL: f64 = 1e-12;
/// Largest grid that discretization will allocate.
pub const MAX_GRID_POINTS: usize = 50_000_000;

/// Relative tolerance under which a value is considered to sit on a grid point.
pub(crate) const VALUE_TIE_REL: f64 = 1e-13;

#[inline]
pub(crate) fn value_tie_tol(v: f64) -> f64 {
    VALUE_TIE_REL * v.abs().max(1.0)
}

/// Pessimistic (dominating) or optimistic (dominated) rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundDirection {
    Upper,
    Lower,
}

impl BoundDirection {
    pub fn flip(self) -> Self {
        match self {
            BoundDirection::Upper => BoundDirection::Lower,
            BoundDirection::Lower => BoundDirection::Upper,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoundDirection::Upper => "upper",
            BoundDirection::Lower => "lower",
        }
    }
}

impl fmt::Display for BoundDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundDirection {
    type Err = PldError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(BoundDirection::Upper),
            "lower" => Ok(BoundDirection::Lower),
            _ => Err(PldError::InvalidParams(format!("unknown bound direction '{s}'"))),
        }
    }
}

/// Which neighbouring relation a PLD describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyDirection {
    Remove,
    Add,
}

impl AdjacencyDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            AdjacencyDirection::Remove => "remove",
            AdjacencyDirection::Add => "add",
        }
    }
}

impl fmt::Display for AdjacencyDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdjacencyDirection {
    type Err = PldError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remove" => Ok(AdjacencyDirection::Remove),
            "add" => Ok(AdjacencyDirection::Add),
            _ => Err(PldError::InvalidParams(format!("unknown adjacency direction '{s}'"))),
        }
    }
}

/// Approximation budget: grid width `alpha` (nats) and tail mass `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightnessParams {
    pub alpha: f64,
    pub beta: f64,
}

impl TightnessParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(PldError::InvalidParams(format!("alpha must be positive, got {alpha}")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(PldError::InvalidParams(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    /// Both budgets scaled by `factor`.
    pub fn scaled(self, factor: f64) -> Result<Self> {
        Self::new(self.alpha * factor, self.beta * factor)
    }
}

#[derive(Serialize, Deserialize)]
struct PldRepr {
    values: Vec<f64>,
    probs: Vec<f64>,
    p_bottom: f64,
    p_top: f64,
}

/// A discrete distribution over `[-inf, +inf]` describing (a bound on) a
/// privacy loss distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PldRepr", into = "PldRepr")]
pub struct DiscretePld {
    values: Vec<f64>,
    probs: Vec<f64>,
    p_bottom: f64,
    p_top: f64,
}

impl TryFrom<PldRepr> for DiscretePld {
    type Error = PldError;
    fn try_from(r: PldRepr) -> Result<Self> {
        DiscretePld::new(r.values, r.probs, r.p_bottom, r.p_top)
    }
}

impl From<DiscretePld> for PldRepr {
    fn from(p: DiscretePld) -> Self {
        PldRepr { values: p.values, probs: p.probs, p_bottom: p.p_bottom, p_top: p.p_top }
    }
}

fn check_mass(m: f64, what: &str) -> Result<()> {
    if !(m.is_finite() && m >= 0.0) {
        return Err(PldError::InvalidPld(format!("{what} must be finite and nonnegative, got {m}")));
    }
    Ok(())
}

impl DiscretePld {
    /// Validating constructor.
    pub fn new(values: Vec<f64>, probs: Vec<f64>, p_bottom: f64, p_top: f64) -> Result<Self> {
        if values.len() != probs.len() {
            return Err(PldError::InvalidPld(format!("{} values but {} probabilities", values.len(), probs.len())));
        }
        for w in values.windows(2) {
            if !(w[0] < w[1]) {
                return Err(PldError::InvalidPld(format!(
                    "values must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(PldError::InvalidPld(format!("non-finite value {v}")));
        }
        for &p in &probs {
            check_mass(p, "probability")?;
        }
        check_mass(p_bottom, "p_bottom")?;
        check_mass(p_top, "p_top")?;
        let pld = Self { values, probs, p_bottom, p_top };
        let total = pld.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(PldError::InvalidPld(format!("total mass {total} differs from 1")));
        }
        Ok(pld)
    }

    /// Builds a PLD from unsorted atoms, merging equal values.
    pub fn from_atoms(mut atoms: Vec<(f64, f64)>, p_bottom: f64, p_top: f64) -> Result<Self> {
        if let Some(&(v, _)) = atoms.iter().find(|(v, _)| v.is_nan()) {
            return Err(PldError::InvalidPld(format!("value {v}")));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut probs: Vec<f64> = Vec::with_capacity(atoms.len());
        let (mut bottom, mut top) = (p_bottom, p_top);
        for (v, p) in atoms {
            if v == f64::INFINITY {
                top += p;
            } else if v == f64::NEG_INFINITY {
                bottom += p;
            } else if values.last() == Some(&v) {
                *probs.last_mut().unwrap() += p;
            } else {
                values.push(v);
                probs.push(p);
            }
        }
        Self::new(values, probs, bottom, top)
    }

    /// All mass on a single value, which may be infinite.
    pub fn point_mass(v: f64) -> Result<Self> {
        Self::from_atoms(vec![(v, 1.0)], 0.0, 0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn p_bottom(&self) -> f64 {
        self.p_bottom
    }

    pub fn p_top(&self) -> f64 {
        self.p_top
    }

    /// Number of finite support points.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn finite_mass(&self) -> f64 {
        compensated_sum(self.probs.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.finite_mass() + self.p_bottom + self.p_top
    }

    pub fn min_value(&self) -> Option<f64> {
        self.values.first().copied()
    }

    pub fn max_value(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Iterator over finite `(value, mass)` atoms.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.probs.iter().copied())
    }

    /// P(L <= x).
    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        let k = self.values.partition_point(|&v| v <= x);
        self.p_bottom + compensated_sum(self.probs[..k].iter().copied())
    }

    /// P(L > x).
    pub fn ccdf(&self, x: f64) -> f64 {
        if x == f64::NEG_INFINITY {
            return 1.0 - self.p_bottom;
        }
        let k = self.values.partition_point(|&v| v <= x);
        self.p_top + compensated_sum(self.probs[k..].iter().copied())
    }

    /// Smallest finite support value v with P(L <= v) >= a; the extreme
    /// finite values are returned when the quantile lies in an infinite atom.
    pub fn quantile(&self, a: f64) -> Option<f64> {
        let mut acc = CompensatedSum::new();
        acc.add(self.p_bottom);
        for (v, p) in self.atoms() {
            acc.add(p);
            if acc.value() >= a {
                return Some(v);
            }
        }
        self.max_value()
    }

    /// Smallest finite support value v with P(L > v) <= b.
    pub fn quantile_upper(&self, b: f64) -> Option<f64> {
        let n = self.values.len();
        if n == 0 {
            return None;
        }
        // Walk from the top: tail[k] = P(L > values[k]).
        let mut acc = CompensatedSum::new();
        acc.add(self.p_top);
        let mut answer = None;
        for k in (0..n).rev() {
            if acc.value() <= b {
                answer = Some(self.values[k]);
            } else {
                break;
            }
            acc.add(self.probs[k]);
        }
        answer.or(self.max_value())
    }

    /// The divergence `E[(1 - e^{eps - L})_+]` at privacy level `epsilon`.
    pub fn hockey_stick_delta(&self, epsilon: f64) -> f64 {
        let start = self.values.partition_point(|&v| v <= epsilon);
        let mut acc = CompensatedSum::new();
        for k in start..self.values.len() {
            let w = -(epsilon - self.values[k]).exp_m1();
            acc.add(self.probs[k] * w);
        }
        acc.add(self.p_top);
        acc.value().clamp(0.0, 1.0)
    }

    /// Smallest epsilon with `hockey_stick_delta(epsilon) <= delta`, within
    /// [`DEFAULT_EPS_TOL`].
    pub fn epsilon_for_delta(&self, delta: f64) -> Result<f64> {
        self.epsilon_for_delta_tol(delta, DEFAULT_EPS_TOL)
    }

    /// As [`Self::epsilon_for_delta`] with an explicit absolute tolerance.
    pub fn epsilon_for_delta_tol(&self, delta: f64, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(PldError::InvalidParams(format!("tolerance must be positive, got {tol}")));
        }
        if !(delta >= self.p_top) {
            return Err(PldError::OutOfRange(format!("delta {delta} is below the mass {} at +inf", self.p_top)));
        }
        if delta > 1.0 - self.p_bottom + MASS_TOL {
            return Err(PldError::OutOfRange(format!("delta {delta} exceeds 1 - p_bottom = {}", 1.0 - self.p_bottom)));
        }
        let (lo_v, hi_v) = match (self.min_value(), self.max_value()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Ok(f64::NEG_INFINITY),
        };
        // delta(max value) = p_top <= delta, so hi is feasible.
        let mut hi = hi_v;
        let mut width = (hi_v - lo_v).max(1.0);
        let mut lo = lo_v - width;
        while self.hockey_stick_delta(lo) <= delta {
            hi = lo;
            width *= 2.0;
            lo -= width;
            if !lo.is_finite() || width > 1e300 {
                return Ok(f64::NEG_INFINITY);
            }
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.hockey_stick_delta(mid) <= delta {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// `E[e^{-L}]`, the +inf atom contributing zero.
    pub fn neg_exp_moment(&self) -> Result<f64> {
        if self.p_bottom > 0.0 {
            return Err(PldError::InvalidRealization(format!(
                "mass {} at -inf makes E[exp(-L)] infinite",
                self.p_bottom
            )));
        }
        Ok(compensated_sum(self.atoms().map(|(v, p)| scaled_exp(p, -v))))
    }

    /// `E[e^{L}]` over the finite part only.
    pub fn exp_moment_finite(&self) -> f64 {
        compensated_sum(self.atoms().map(|(v, p)| scaled_exp(p, v)))
    }

    /// Whether this is the loss distribution of some pair of distributions:
    /// no mass at -inf and `E[e^{-L}] <= 1`.
    pub fn is_realization(&self) -> bool {
        match self.neg_exp_moment() {
            Ok(m) => m <= 1.0 + MASS_TOL,
            Err(_) => false,
        }
    }

    pub(crate) fn require_realization(&self) -> Result<f64> {
        let m = self.neg_exp_moment()?;
        if m > 1.0 + MASS_TOL {
            return Err(PldError::InvalidRealization(format!("E[exp(-L)] = {m} exceeds 1")));
        }
        Ok(m)
    }

    /// The loss distribution of the swapped pair.
    pub fn dual(&self) -> Result<DiscretePld> {
        let m = self.require_realization()?;
        let n = self.values.len();
        let mut values = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let v = self.values[k];
            values.push(-v);
            probs.push(scaled_exp(self.probs[k], -v));
        }
        let p_top = (1.0 - m).max(0.0);
        DiscretePld::new(values, probs, 0.0, p_top)
    }

    /// Step of the arithmetic progression formed by the values, if any.
    pub fn arithmetic_step(&self) -> Option<f64> {
        let n = self.values.len();
        if n < 2 {
            return None;
        }
        let step = (self.values[n - 1] - self.values[0]) / (n - 1) as f64;
        if !(step > 0.0) {
            return None;
        }
        let scale = self.values[0].abs().max(self.values[n - 1].abs());
        let tol = 1e-9 * step + 8.0 * f64::EPSILON * scale;
        let ok = self.values.iter().enumerate().all(|(k, &v)| (v - (self.values[0] + k as f64 * step)).abs() <= tol);
        ok.then_some(step)
    }

    /// Copy with leading and trailing zero-mass atoms removed.
    pub fn trimmed(&self) -> DiscretePld {
        let lo = self.probs.iter().position(|&p| p > 0.0);
        let hi = self.probs.iter().rposition(|&p| p > 0.0);
        match (lo, hi) {
            (Some(lo), Some(hi)) => DiscretePld {
                values: self.values[lo..=hi].to_vec(),
                probs: self.probs[lo..=hi].to_vec(),
                p_bottom: self.p_bottom,
                p_top: self.p_top,
            },
            _ => DiscretePld { values: Vec::new(), probs: Vec::new(), p_bottom: self.p_bottom, p_top: self.p_top },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("PLD serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| PldError::InvalidPld(e.to_string()))
    }

    /// Unchecked constructor for internal producers whose output is valid by
    /// construction. Values must be strictly increasing and finite.
    pub(crate) fn from_parts(values: Vec<f64>, probs: Vec<f64>, p_bottom: f64, p_top: f64) -> Self {
        debug_assert_eq!(values.len(), probs.len());
        debug_assert!(values.windows(2).all(|w| w[0] < w[1]));
        Self { values, probs, p_bottom, p_top }
    }
}

/// Suffix sums `s[k] = sum(probs[k..]) + p_top`, so `s[len] = p_top`.
fn suffix_tail(p: &DiscretePld) -> Vec<f64> {
    let n = p.len();
    let mut out = vec![0.0; n + 1];
    let mut acc = CompensatedSum::new();
    acc.add(p.p_top);
    out[n] = acc.value();
    for k in (0..n).rev() {
        acc.add(p.probs[k]);
        out[k] = acc.value();
    }
    out
}

/// Largest value of `P(V > x) - P(U > x - alpha) - beta` over all x.
///
/// U is compared at a point shifted down by a relative 1e-13, which absorbs
/// floating-point ties between support points.
pub fn stoch_dom_gap(v: &DiscretePld, u: &DiscretePld, alpha: f64, beta: f64) -> f64 {
    let sv = suffix_tail(v);
    let su = suffix_tail(u);
    let ccdf_v = |x: f64| sv[v.values.partition_point(|&y| y <= x)];
    let ccdf_u = |x: f64| {
        let x = x - alpha - value_tie_tol(x);
        su[u.values.partition_point(|&y| y <= x)]
    };
    let mut worst = (1.0 - v.p_bottom) - (1.0 - u.p_bottom) - beta;
    worst = worst.max(v.p_top - u.p_top - beta);
    for &x in &v.values {
        worst = worst.max(ccdf_v(x) - ccdf_u(x) - beta);
    }
    for &y in &u.values {
        let x = y + alpha;
        // Evaluate just at and just above the breakpoint of the shifted U.
        worst = worst.max(ccdf_v(x) - ccdf_u(x) - beta);
        let x_up = x + value_tie_tol(x) * 2.0;
        worst = worst.max(ccdf_v(x_up) - ccdf_u(x_up) - beta);
    }
    worst
}

/// True when V is (alpha, beta)-stochastically dominated by U:
/// `P(V > x) <= P(U > x - alpha) + beta` for every x, within [`CCDF_SLACK`].
pub fn check_stoch_dom(v: &DiscretePld, u: &DiscretePld, alpha: f64, beta: f64) -> bool {
    stoch_dom_gap(v, u, alpha, beta) <= CCDF_SLACK
}

/// Fuses two bounds on the same PLD: pointwise minimum of the CCDFs for
/// upper bounds, maximum for lower bounds.
pub fn combine_bounds(a: &DiscretePld, b: &DiscretePld, dir: BoundDirection) -> DiscretePld {
    let pick = |x: f64, y: f64| match dir {
        BoundDirection::Upper => x.min(y),
        BoundDirection::Lower => x.max(y),
    };
    let mut xs: Vec<f64> = a.values.iter().chain(b.values.iter()).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let sa = suffix_tail(a);
    let sb = suffix_tail(b);
    let tail = |x: f64| {
        let ta = sa[a.values.partition_point(|&y| y <= x)];
        let tb = sb[b.values.partition_point(|&y| y <= x)];
        pick(ta, tb)
    };
    let start = pick(1.0 - a.p_bottom, 1.0 - b.p_bottom);
    let p_top = pick(a.p_top, b.p_top);
    let mut probs = Vec::with_capacity(xs.len());
    let mut prev = start;
    for &x in &xs {
        let cur = tail(x);
        probs.push((prev - cur).max(0.0));
        prev = cur;
    }
    DiscretePld::from_parts(xs, probs, (1.0 - start).max(0.0), p_top)
}

/// Rounds `source` onto an arithmetic grid of step `alpha` spanning its
/// `beta` and `1 - beta` quantiles.
///
/// Upper bounds move interval mass to the right endpoint and send the upper
/// tail to +inf; lower bounds move it to the left endpoint and send the lower
/// tail to -inf. Exact infinite atoms of a discrete source are kept where
/// that is tighter and still on the correct side.
pub fn discretize(source: &dyn PldSource, params: TightnessParams, dir: BoundDirection) -> Result<DiscretePld> {
    if let Some(d) = source.as_discrete() {
        return discretize_discrete(d, params, dir);
    }
    let alpha = params.alpha;
    let q_lo = source.quantile(params.beta);
    let q_hi = source.quantile_upper(params.beta);
    if !(q_lo.is_finite() && q_hi.is_finite()) {
        return Err(PldError::InvalidParams(format!(
            "quantile range [{q_lo}, {q_hi}] is unbounded; beta must be positive"
        )));
    }
    let n = grid_len(q_lo, q_hi, alpha)?;
    let grid: Vec<f64> = (0..n).map(|k| q_lo + k as f64 * alpha).collect();
    if n == 1 {
        return DiscretePld::new(grid, vec![1.0], 0.0, 0.0);
    }
    let cdf: Vec<f64> = grid.iter().map(|&x| source.cdf(x)).collect();
    let sf: Vec<f64> = grid.iter().map(|&x| source.sf(x)).collect();
    // Mass strictly between grid[k-1] and grid[k], taken from whichever tail
    // keeps relative precision.
    let between = |k: usize| {
        let m = if cdf[k] < 0.5 { cdf[k] - cdf[k - 1] } else { sf[k - 1] - sf[k] };
        m.max(0.0)
    };
    let mut probs = vec![0.0; n];
    let (p_bottom, p_top);
    match dir {
        BoundDirection::Upper => {
            probs[0] = cdf[0];
            for k in 1..n {
                probs[k] = between(k);
            }
            p_bottom = 0.0;
            p_top = sf[n - 1];
        }
        BoundDirection::Lower => {
            for k in 0..n - 1 {
                probs[k] = between(k + 1);
            }
            probs[n - 1] = sf[n - 1];
            p_bottom = cdf[0];
            p_top = 0.0;
        }
    }
    Ok(DiscretePld::from_parts(grid, probs, p_bottom, p_top))
}

fn grid_len(q_lo: f64, q_hi: f64, alpha: f64) -> Result<usize> {
    let span = q_hi - q_lo;
    if !(span > 0.0) {
        return Ok(1);
    }
    let cells = (span / alpha).ceil();
    if !(cells.is_finite() && cells < MAX_GRID_POINTS as f64) {
        return Err(PldError::InvalidParams(format!("grid of {cells} cells exceeds the limit of {MAX_GRID_POINTS}")));
    }
    Ok(cells as usize + 1)
}

fn discretize_discrete(src: &DiscretePld, params: TightnessParams, dir: BoundDirection) -> Result<DiscretePld> {
    let alpha = params.alpha;
    let (q_lo, q_hi) = match (src.quantile(params.beta), src.quantile_upper(params.beta)) {
        (Some(a), Some(b)) => (a, b.max(a)),
        _ => return Ok(src.clone()),
    };
    let n = grid_len(q_lo, q_hi, alpha)?;
    let grid: Vec<f64> = (0..n).map(|k| q_lo + k as f64 * alpha).collect();
    let mut probs = vec![0.0; n];
    let mut p_bottom = src.p_bottom;
    let p_top_src = src.p_top;
    let mut p_top = p_top_src;
    if dir == BoundDirection::Upper {
        probs[0] += p_bottom;
        p_bottom = 0.0;
    }
    let top = grid[n - 1];
    for (v, p) in src.atoms() {
        let tol = value_tie_tol(v);
        match dir {
            BoundDirection::Upper => {
                if v > top + tol {
                    p_top += p;
                } else {
                    probs[round_up_index(&grid, v, tol)] += p;
                }
            }
            BoundDirection::Lower => {
                if v < grid[0] - tol {
                    p_bottom += p;
                } else {
                    probs[round_down_index(&grid, v, tol)] += p;
                }
            }
        }
    }
    Ok(DiscretePld::from_parts(grid, probs, p_bottom, p_top))
}

/// Smallest index k with grid[k] >= v - tol (clamped to the grid).
fn round_up_index(grid: &[f64], v: f64, tol: f64) -> usize {
    grid.partition_point(|&g| g < v - tol).min(grid.len() - 1)
}

/// Largest index k with grid[k] <= v + tol (the caller guarantees one exists).
fn round_down_index(grid: &[f64], v: f64, tol: f64) -> usize {
    grid.partition_point(|&g| g <= v + tol).saturating_sub(1)
}
