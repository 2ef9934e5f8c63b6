//! Small numerical helpers: compensated summation and the standard normal
//! distribution with accurate tails.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator of floats.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// `p * e^x` without the `0 * inf` trap when `x` is huge and `p` tiny.
#[inline]
pub fn scaled_exp(p: f64, x: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else if x < 700.0 {
        p * x.exp()
    } else {
        (p.ln() + x).exp()
    }
}

/// P(Z <= x) for a standard normal Z.
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x / SQRT_2)
}

/// P(Z > x) for a standard normal Z, accurate deep into the upper tail.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Smallest z with P(Z <= z) >= p.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// The z with P(Z > z) = q. Unlike `norm_quantile(1 - q)` this keeps full
/// relative precision for tiny q.
pub fn norm_quantile_upper(q: f64) -> f64 {
    -norm_quantile(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = vec![1.0];
        xs.extend(std::iter::repeat_n(1e-16, 10_000));
        let s = compensated_sum(xs);
        assert!((s - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        // Frozen from mpmath at 30 digits.
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        let sf10 = 7.619_853_024_160_526e-24;
        assert!((norm_sf(10.0) / sf10 - 1.0).abs() < 1e-13);
        let sf30 = 4.906_713_927_148_187e-198;
        assert!((norm_sf(30.0) / sf30 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_quantile_round_trips() {
        for &p in &[1e-300, 1e-200, 1e-50, 1e-13, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.999] {
            let z = norm_quantile(p);
            let back = norm_cdf(z);
            assert!((back / p - 1.0).abs() < 1e-12, "p={p} z={z} back={back}");
        }
        for &q in &[1e-300, 1e-13, 1e-6, 0.2] {
            let z = norm_quantile_upper(q);
            assert!((norm_sf(z) / q - 1.0).abs() < 1e-12, "q={q}");
        }
        assert!((norm_quantile(0.841_344_746_068_542_9) - 1.0).abs() < 1e-12);
    }
}
