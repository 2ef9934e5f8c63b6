//! Exact and closed-form references: brute-force allocation PLDs on small
//! alphabets, exact subsampled pairs and Gaussian hockey-stick values.

use crate::error::{PldError, Result};
use crate::mechanisms::DiscretePair;
use crate::numeric::{compensated_sum, norm_sf, scaled_exp};
use crate::pld::{AdjacencyDirection, DiscretePld};

/// Largest product space the brute-force enumeration accepts.
pub const MAX_ENUMERATION: usize = 1_000_000;

/// Exact PLD of random allocation over `t` steps for a discrete pair.
///
/// Enumerates every output sequence `w` and compares the mixture
/// `(1/t) sum_i Q^{i-1} x P x Q^{t-i}` with `Q^t`. Losses closer than
/// `1e-12` relative are merged.
pub fn brute_force_alloc_pld(pair: &DiscretePair, t: usize, adj: AdjacencyDirection) -> Result<DiscretePld> {
    if t == 0 {
        return Err(PldError::InvalidParams("t must be at least 1".into()));
    }
    let m = pair.len();
    let states = (0..t).try_fold(1usize, |acc, _| acc.checked_mul(m).filter(|&s| s <= MAX_ENUMERATION));
    let Some(states) = states else {
        return Err(PldError::TooLarge(format!("{m}^{t} outcomes exceed {MAX_ENUMERATION}")));
    };
    let (p, q) = (pair.p(), pair.q());
    let mut atoms = Vec::new();
    let mut p_top = Vec::new();
    let mut seq = vec![0usize; t];
    for _ in 0..states {
        let q_all: f64 = seq.iter().map(|&w| q[w]).product();
        let mixture = compensated_sum(
            (0..t).map(|i| seq.iter().enumerate().map(|(j, &w)| if i == j { p[w] } else { q[w] }).product::<f64>()),
        ) / t as f64;
        let (num, den) = match adj {
            AdjacencyDirection::Remove => (mixture, q_all),
            AdjacencyDirection::Add => (q_all, mixture),
        };
        if num > 0.0 {
            if den > 0.0 {
                atoms.push(((num / den).ln(), num));
            } else {
                p_top.push(num);
            }
        }
        // Odometer increment over the product space.
        for w in seq.iter_mut() {
            *w += 1;
            if *w < m {
                break;
            }
            *w = 0;
        }
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grouped: Vec<(f64, Vec<f64>)> = Vec::new();
    for (v, mass) in atoms {
        match grouped.last_mut() {
            Some((w, ms)) if (v - *w).abs() <= 1e-12 * w.abs().max(1.0) => ms.push(mass),
            _ => grouped.push((v, vec![mass])),
        }
    }
    let merged = grouped.into_iter().map(|(v, ms)| (v, compensated_sum(ms))).collect();
    DiscretePld::from_atoms(merged, 0.0, compensated_sum(p_top))
}

/// The pair `(lambda P + (1 - lambda) Q, Q)`.
pub fn exact_subsampled_pair(pair: &DiscretePair, lambda: f64) -> Result<DiscretePair> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PldError::InvalidParams(format!("sampling rate {lambda} outside [0, 1]")));
    }
    let mixed = pair.p().iter().zip(pair.q()).map(|(&a, &b)| lambda * a + (1.0 - lambda) * b).collect();
    DiscretePair::new(mixed, pair.q().to_vec())
}

/// Hockey-stick divergence `delta(eps)` between `N(1, sigma^2)` and
/// `N(0, sigma^2)`.
pub fn gaussian_delta_analytic(sigma: f64, epsilon: f64) -> f64 {
    let a = 0.5 / sigma;
    let b = epsilon * sigma;
    let d = norm_sf(b - a) - scaled_exp(norm_sf(a + b), epsilon);
    d.max(0.0)
}

/// Hockey-stick divergence `delta(eps)` of the Poisson-subsampled Gaussian
/// pair `(lambda N(1, sigma^2) + (1 - lambda) N(0, sigma^2), N(0, sigma^2))`.
pub fn subsampled_gaussian_delta(sigma: f64, lambda: f64, epsilon: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let s2 = sigma * sigma;
    // The likelihood ratio crosses e^eps at x*.
    let x = 0.5 + s2 * (epsilon.exp_m1() / lambda).ln_1p();
    let d = lambda * norm_sf((x - 1.0) / sigma) + (1.0 - lambda) * norm_sf(x / sigma)
        - scaled_exp(norm_sf(x / sigma), epsilon);
    d.max(0.0)
}

/// `E[e^L]` of the remove-direction allocation PLD of the Gaussian mechanism:
/// `(e^{1/sigma^2} + t - 1) / t`.
pub fn gaussian_alloc_exp_moment(sigma: f64, t: usize) -> f64 {
    ((1.0 / (sigma * sigma)).exp() + t as f64 - 1.0) / t as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_atoms(l: &DiscretePld, want: &[(f64, f64)]) {
        assert_eq!(l.len(), want.len(), "{l:?}");
        for ((v, p), &(wv, wp)) in l.atoms().zip(want) {
            assert!((v - wv).abs() < 1e-12 && (p - wp).abs() < 1e-12, "{l:?}");
        }
    }

    #[test]
    fn randomized_response_two_steps() {
        let rr = DiscretePair::randomized_response(0.75).unwrap();
        let rem = brute_force_alloc_pld(&rr, 2, AdjacencyDirection::Remove).unwrap();
        let l3 = 3f64.ln();
        assert_atoms(&rem, &[((1.0f64 / 3.0).ln(), 0.1875), ((5.0f64 / 3.0).ln(), 0.625), (l3, 0.1875)]);
        let add = brute_force_alloc_pld(&rr, 2, AdjacencyDirection::Add).unwrap();
        assert_atoms(&add, &[(-l3, 0.0625), (-(5.0f64 / 3.0).ln(), 0.375), (l3, 0.5625)]);
    }

    #[test]
    fn identical_pair_has_zero_loss() {
        let pair = DiscretePair::new(vec![0.2, 0.3, 0.5], vec![0.2, 0.3, 0.5]).unwrap();
        let l = brute_force_alloc_pld(&pair, 4, AdjacencyDirection::Remove).unwrap();
        assert_atoms(&l, &[(0.0, 1.0)]);
    }

    #[test]
    fn enumeration_cap() {
        let pair = DiscretePair::new(vec![0.25; 4], vec![0.25; 4]).unwrap();
        assert!(brute_force_alloc_pld(&pair, 9, AdjacencyDirection::Remove).is_ok());
        assert!(matches!(brute_force_alloc_pld(&pair, 10, AdjacencyDirection::Remove), Err(PldError::TooLarge(_))));
    }

    #[test]
    fn zero_denominator_goes_to_top() {
        let pair = DiscretePair::new(vec![0.5, 0.5], vec![1.0, 0.0]).unwrap();
        let l = brute_force_alloc_pld(&pair, 2, AdjacencyDirection::Remove).unwrap();
        // Only (0, 0) has Q^2 > 0; its mixture mass is 0.5.
        assert!((l.p_top() - 0.5).abs() < 1e-15);
        assert_atoms(&l, &[(0.5f64.ln(), 0.5)]);
    }

    #[test]
    fn subsampled_pairs() {
        let rr = DiscretePair::randomized_response(0.75).unwrap();
        let half = exact_subsampled_pair(&rr, 0.5).unwrap();
        assert_eq!(half.p(), &[0.5, 0.5]);
        assert_eq!(exact_subsampled_pair(&rr, 0.0).unwrap().p(), rr.q());
        assert_eq!(exact_subsampled_pair(&rr, 1.0).unwrap().p(), rr.p());
    }

    #[test]
    fn gaussian_delta_values() {
        // Frozen from a 30-digit evaluation of the normal-CDF form.
        assert!((gaussian_delta_analytic(1.0, 0.0) - 0.382_924_922_548_026_2).abs() < 1e-15);
        assert!((gaussian_delta_analytic(1.0, 1.0) - 0.126_936_737_506_643_9).abs() < 1e-15);
        assert!(gaussian_delta_analytic(1.0, 40.0) < 1e-300);
    }

    #[test]
    fn subsampled_gaussian_delta_values() {
        // Frozen from a 30-digit evaluation.
        let cases =
            [(0.5, 2.214_519_013_153_061_4e-7), (1.0, 2.732_009_261_546_131_4e-9), (2.0, 1.724_842_120_013_822_5e-12)];
        for (eps, want) in cases {
            let got = subsampled_gaussian_delta(1.0, 0.01, eps);
            assert!((got - want).abs() < 1e-18, "eps={eps}: {got} vs {want}");
        }
        assert!((subsampled_gaussian_delta(1.0, 1.0, 1.0) - gaussian_delta_analytic(1.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn exp_moment_values() {
        assert!((gaussian_alloc_exp_moment(1.0, 1) - std::f64::consts::E).abs() < 1e-15);
        assert!((gaussian_alloc_exp_moment(1.0, 4) - 1.429_570_457_114_761).abs() < 1e-12);
        assert!((gaussian_alloc_exp_moment(1e6, 7) - 1.0).abs() < 1e-12);
    }
}
