//! Composition of PLDs by direct convolution on additive grids.

use crate::allocation::ceil_log2;
use crate::error::{PldError, Result};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::pld::{value_tie_tol, BoundDirection, DiscretePld};

/// Common arithmetic step of two PLDs, treating single atoms as compatible
/// with any step. `Some(None)` means both are single atoms or empty.
fn common_step(a: &DiscretePld, b: &DiscretePld) -> Option<Option<f64>> {
    let step_of = |p: &DiscretePld| if p.len() <= 1 { Some(None) } else { p.arithmetic_step().map(Some) };
    match (step_of(a)?, step_of(b)?) {
        (None, None) => Some(None),
        (Some(s), None) | (None, Some(s)) => Some(Some(s)),
        (Some(s), Some(t)) => ((s - t).abs() <= 1e-9 * s).then_some(Some(s)),
    }
}

fn infinite_atoms(l1: &DiscretePld, l2: &DiscretePld) -> Result<(f64, f64)> {
    if (l1.p_top() > 0.0 && l2.p_bottom() > 0.0) || (l1.p_bottom() > 0.0 && l2.p_top() > 0.0) {
        return Err(PldError::IndeterminateSum);
    }
    let top = l1.p_top() + l2.p_top() - l1.p_top() * l2.p_top();
    let bottom = l1.p_bottom() + l2.p_bottom() - l1.p_bottom() * l2.p_bottom();
    Ok((bottom, top))
}

/// Sum of two PLDs on a shared grid of step `step`; every pairwise sum is a
/// grid point, so nothing is rounded.
fn aligned_sum(l1: &DiscretePld, l2: &DiscretePld, step: f64, p_bottom: f64, p_top: f64) -> DiscretePld {
    let (n1, n2) = (l1.len(), l2.len());
    if n1 == 0 || n2 == 0 {
        return DiscretePld::from_parts(Vec::new(), Vec::new(), p_bottom, p_top);
    }
    let v0 = l1.values()[0] + l2.values()[0];
    let n = n1 + n2 - 1;
    let mut out = vec![0.0; n];
    let q = l2.probs();
    for (i, &p) in l1.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (o, &w) in out[i..i + n2].iter_mut().zip(q) {
            *o += p * w;
        }
    }
    let values = (0..n).map(|k| v0 + k as f64 * step).collect();
    DiscretePld::from_parts(values, out, p_bottom, p_top).trimmed()
}

/// Grid index of `v` on `v0 + k*step`, rounded per `dir`; values within the
/// tie tolerance of a grid point land on it.
fn grid_index(v: f64, v0: f64, step: f64, dir: BoundDirection) -> i64 {
    let x = (v - v0) / step;
    let tol = value_tie_tol(v);
    match dir {
        BoundDirection::Upper => {
            let k = x.ceil() as i64;
            if k >= 1 && (v0 + (k - 1) as f64 * step) >= v - tol {
                k - 1
            } else if v0 + k as f64 * step < v - tol {
                k + 1
            } else {
                k
            }
        }
        BoundDirection::Lower => {
            let k = x.floor() as i64;
            if v0 + (k + 1) as f64 * step <= v + tol {
                k + 1
            } else if k >= 1 && v0 + k as f64 * step > v + tol {
                k - 1
            } else {
                k
            }
        }
    }
}

/// Moves every finite atom onto the grid `min value + k*step`, up for upper
/// bounds and down for lower bounds.
pub fn regrid(l: &DiscretePld, step: f64, dir: BoundDirection) -> Result<DiscretePld> {
    if !(step.is_finite() && step > 0.0) {
        return Err(PldError::InvalidParams(format!("grid step {step} must be positive")));
    }
    let (Some(v0), Some(v1)) = (l.min_value(), l.max_value()) else {
        return Ok(l.clone());
    };
    let n = grid_index(v1, v0, step, BoundDirection::Upper).max(0) as usize + 1;
    let mut probs = vec![0.0; n];
    for (v, p) in l.atoms() {
        let k = grid_index(v, v0, step, dir).clamp(0, n as i64 - 1) as usize;
        probs[k] += p;
    }
    let values = (0..n).map(|k| v0 + k as f64 * step).collect();
    Ok(DiscretePld::from_parts(values, probs, l.p_bottom(), l.p_top()).trimmed())
}

/// Distribution of `L1 + L2`. Inputs that already share an arithmetic grid
/// are summed exactly; otherwise finite sums are snapped to the grid of step
/// `alpha` anchored at the smallest possible sum, up for upper bounds and
/// down for lower bounds.
pub fn compose(l1: &DiscretePld, l2: &DiscretePld, alpha: f64, dir: BoundDirection) -> Result<DiscretePld> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(PldError::InvalidParams(format!("grid step {alpha} must be positive")));
    }
    let (p_bottom, p_top) = infinite_atoms(l1, l2)?;
    if let Some(step) = common_step(l1, l2) {
        return Ok(aligned_sum(l1, l2, step.unwrap_or(alpha), p_bottom, p_top));
    }
    let (v0, vmax) = (l1.values()[0] + l2.values()[0], l1.max_value().unwrap() + l2.max_value().unwrap());
    let n = grid_index(vmax, v0, alpha, BoundDirection::Upper).max(0) as usize + 1;
    let mut probs = vec![0.0; n];
    let b: Vec<(f64, f64)> = l2.atoms().filter(|&(_, p)| p > 0.0).collect();
    for (v, p) in l1.atoms().filter(|&(_, p)| p > 0.0) {
        for &(w, q) in &b {
            let k = grid_index(v + w, v0, alpha, dir).clamp(0, n as i64 - 1) as usize;
            probs[k] += p * q;
        }
    }
    let values = (0..n).map(|k| v0 + k as f64 * alpha).collect();
    Ok(DiscretePld::from_parts(values, probs, p_bottom, p_top).trimmed())
}

/// `k`-fold composition of `l` with itself.
///
/// Unless `l` already lies on an arithmetic grid at least as coarse, it is
/// first snapped to step `alpha / (2 ceil(log2 k))`; the squaring schedule
/// then adds aligned grids exactly. Each of the `k` summands moves by less
/// than one step, so the total shift is below `k` steps.
pub fn self_compose(l: &DiscretePld, k: usize, alpha: f64, dir: BoundDirection) -> Result<DiscretePld> {
    self_compose_truncated(l, k, alpha, dir, 0.0)
}

/// [`self_compose`] that also truncates `trunc_beta` tails after every
/// squaring: the tail on the costly side goes to the infinite atom of the
/// bound and the other is clamped to its quantile.
pub fn self_compose_truncated(
    l: &DiscretePld,
    k: usize,
    alpha: f64,
    dir: BoundDirection,
    trunc_beta: f64,
) -> Result<DiscretePld> {
    if k == 0 {
        return Err(PldError::InvalidParams("composition count must be at least 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(PldError::InvalidParams(format!("grid step {alpha} must be positive")));
    }
    let target = if k == 1 { alpha } else { alpha / (2 * ceil_log2(k)) as f64 };
    let base = match l.arithmetic_step() {
        Some(s) if s >= target * (1.0 - 1e-9) => l.trimmed(),
        None if l.len() <= 1 => l.clone(),
        _ => regrid(l, target, dir)?,
    };
    if k == 1 {
        return Ok(base);
    }
    let step = base.arithmetic_step().unwrap_or(target);
    let mut acc: Option<DiscretePld> = None;
    let mut power = base;
    let mut m = k;
    loop {
        if m & 1 == 1 {
            acc = Some(match acc {
                None => power.clone(),
                Some(r) => {
                    let (pb, pt) = infinite_atoms(&r, &power)?;
                    aligned_sum(&r, &power, step, pb, pt)
                }
            });
        }
        m >>= 1;
        if m == 0 {
            break;
        }
        let (pb, pt) = infinite_atoms(&power, &power)?;
        power = aligned_sum(&power, &power, step, pb, pt);
        if trunc_beta > 0.0 {
            power = truncate_tails(&power, dir, trunc_beta);
        }
    }
    Ok(acc.expect("k >= 1 sets at least one bit"))
}

/// Truncates the `beta` tails of the finite part of a PLD in the manner of
/// the allocation squarings.
pub fn truncate_tails(l: &DiscretePld, dir: BoundDirection, beta: f64) -> DiscretePld {
    let n = l.len();
    if !(beta > 0.0) || n == 0 {
        return l.clone();
    }
    let probs = l.probs();
    let mut acc = CompensatedSum::new();
    let mut k_lo = n - 1;
    for (k, &p) in probs.iter().enumerate() {
        acc.add(p);
        if acc.value() >= beta {
            k_lo = k;
            break;
        }
    }
    let mut acc = CompensatedSum::new();
    let mut k_hi = 0;
    for k in (0..n).rev() {
        if acc.value() + probs[k] > beta {
            k_hi = k;
            break;
        }
        acc.add(probs[k]);
    }
    if k_lo > k_hi {
        return l.clone();
    }
    let below = compensated_sum(probs[..k_lo].iter().copied());
    let above = compensated_sum(probs[k_hi + 1..].iter().copied());
    let mut out = probs.to_vec();
    out[..k_lo].iter_mut().for_each(|p| *p = 0.0);
    out[k_hi + 1..].iter_mut().for_each(|p| *p = 0.0);
    let (mut p_bottom, mut p_top) = (l.p_bottom(), l.p_top());
    match dir {
        BoundDirection::Upper => {
            out[k_lo] += below;
            p_top += above;
        }
        BoundDirection::Lower => {
            p_bottom += below;
            out[k_hi] += above;
        }
    }
    DiscretePld::from_parts(l.values().to_vec(), out, p_bottom, p_top).trimmed()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rr() -> DiscretePld {
        let l3 = 3f64.ln();
        DiscretePld::new(vec![-l3, l3], vec![0.25, 0.75], 0.0, 0.0).unwrap()
    }

    #[test]
    fn point_masses_round_up() {
        let a = DiscretePld::point_mass(0.3).unwrap();
        let b = DiscretePld::point_mass(0.45).unwrap();
        let c = compose(&a, &b, 0.1, BoundDirection::Upper).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c.values()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn randomized_response_twice() {
        let r = rr();
        let c = compose(&r, &r, 1e-3, BoundDirection::Upper).unwrap();
        let l3 = 3f64.ln();
        let want = [(-2.0 * l3, 0.0625), (0.0, 0.375), (2.0 * l3, 0.5625)];
        assert_eq!(c.len(), 3);
        for ((v, p), (wv, wp)) in c.atoms().zip(want) {
            assert!((v - wv).abs() < 1e-12 && (p - wp).abs() < 1e-15);
        }
    }

    #[test]
    fn infinite_atoms_combine() {
        let a = DiscretePld::new(vec![0.0], vec![0.9], 0.0, 0.1).unwrap();
        let b = DiscretePld::new(vec![0.0], vec![0.8], 0.0, 0.2).unwrap();
        let c = compose(&a, &b, 0.1, BoundDirection::Upper).unwrap();
        assert!((c.p_top() - 0.28).abs() < 1e-15);
        let low = DiscretePld::new(vec![0.0], vec![0.8], 0.2, 0.0).unwrap();
        assert_eq!(compose(&a, &low, 0.1, BoundDirection::Upper), Err(PldError::IndeterminateSum));
    }

    #[test]
    fn general_path_rounds_per_direction() {
        let a = DiscretePld::new(vec![0.0, 0.33], vec![0.5, 0.5], 0.0, 0.0).unwrap();
        let b = DiscretePld::new(vec![0.0, 0.5], vec![0.5, 0.5], 0.0, 0.0).unwrap();
        let up = compose(&a, &b, 0.1, BoundDirection::Upper).unwrap();
        let lo = compose(&a, &b, 0.1, BoundDirection::Lower).unwrap();
        let exact =
            DiscretePld::from_atoms(vec![(0.0, 0.25), (0.33, 0.25), (0.5, 0.25), (0.83, 0.25)], 0.0, 0.0).unwrap();
        assert!(crate::pld::check_stoch_dom(&exact, &up, 0.0, 0.0));
        assert!(crate::pld::check_stoch_dom(&up, &exact, 0.1, 0.0));
        assert!(crate::pld::check_stoch_dom(&lo, &exact, 0.0, 0.0));
    }

    #[test]
    fn self_compose_point_mass() {
        let p = DiscretePld::point_mass(0.37).unwrap();
        let c = self_compose(&p, 4, 0.01, BoundDirection::Upper).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c.values()[0] - 1.48).abs() < 1e-12);
    }

    #[test]
    fn regrid_keeps_on_grid_values() {
        let l = DiscretePld::new(vec![0.0, 0.2, 0.4], vec![0.2, 0.3, 0.5], 0.0, 0.0).unwrap();
        let g = regrid(&l, 0.1, BoundDirection::Lower).unwrap();
        assert_eq!(g.trimmed().probs().iter().filter(|&&p| p > 0.0).count(), 3);
        assert!(crate::pld::check_stoch_dom(&g, &l, 0.0, 0.0));
        assert!(crate::pld::check_stoch_dom(&l, &g, 0.0, 0.0));
    }

    #[test]
    fn truncation_moves_costly_tail_to_infinity() {
        let l = DiscretePld::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.01, 0.48, 0.5, 0.01], 0.0, 0.0).unwrap();
        let up = truncate_tails(&l, BoundDirection::Upper, 0.02);
        assert!((up.p_top() - 0.01).abs() < 1e-15);
        assert_eq!(up.values(), &[1.0, 2.0]);
        assert!(crate::pld::check_stoch_dom(&l, &up, 0.0, 0.02));
        let lo = truncate_tails(&l, BoundDirection::Lower, 0.02);
        assert!((lo.p_bottom() - 0.01).abs() < 1e-15);
        assert!(crate::pld::check_stoch_dom(&lo, &l, 0.0, 0.0));
    }
}
