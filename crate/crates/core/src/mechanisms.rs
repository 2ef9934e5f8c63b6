//! Loss-distribution sources for concrete mechanisms.

use crate::error::{PldError, Result};
use crate::numeric::{compensated_sum, norm_cdf, norm_quantile, norm_quantile_upper, norm_sf};
use crate::pld::{AdjacencyDirection, DiscretePld};
use crate::subsampling::{phi, phi_inv, SamplingRate};
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::sync::Arc;

/// A loss distribution exposed through its CDF and quantiles, ready to be
/// discretized.
pub trait PldSource: Debug + Send + Sync {
    /// P(L <= x).
    fn cdf(&self, x: f64) -> f64;

    /// P(L > x). Implementations should keep relative precision in the tail.
    fn sf(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    /// Smallest x with P(L <= x) >= a.
    fn quantile(&self, a: f64) -> f64;

    /// Smallest x with P(L > x) <= b.
    fn quantile_upper(&self, b: f64) -> f64;

    /// The loss distribution of the swapped pair.
    fn dual(&self) -> Result<Arc<dyn PldSource>>;

    /// The underlying atoms, for sources that are already discrete.
    fn as_discrete(&self) -> Option<&DiscretePld> {
        None
    }

    fn description(&self) -> String;
}

impl PldSource for DiscretePld {
    fn cdf(&self, x: f64) -> f64 {
        DiscretePld::cdf(self, x)
    }

    fn sf(&self, x: f64) -> f64 {
        self.ccdf(x)
    }

    fn quantile(&self, a: f64) -> f64 {
        DiscretePld::quantile(self, a).unwrap_or(f64::NAN)
    }

    fn quantile_upper(&self, b: f64) -> f64 {
        DiscretePld::quantile_upper(self, b).unwrap_or(f64::NAN)
    }

    fn dual(&self) -> Result<Arc<dyn PldSource>> {
        Ok(Arc::new(DiscretePld::dual(self)?))
    }

    fn as_discrete(&self) -> Option<&DiscretePld> {
        Some(self)
    }

    fn description(&self) -> String {
        format!("discrete PLD with {} atoms", self.len())
    }
}

/// Gaussian mechanism with sensitivity 1 and noise scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMechanism {
    sigma: f64,
}

impl GaussianMechanism {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(PldError::InvalidParams(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// The Gaussian loss distribution N(1/(2 sigma^2), 1/sigma^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPld {
    mean: f64,
    sd: f64,
}

impl GaussianPld {
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }
}

impl PldSource for GaussianPld {
    fn cdf(&self, x: f64) -> f64 {
        norm_cdf((x - self.mean) / self.sd)
    }

    fn sf(&self, x: f64) -> f64 {
        norm_sf((x - self.mean) / self.sd)
    }

    fn quantile(&self, a: f64) -> f64 {
        self.mean + self.sd * norm_quantile(a)
    }

    fn quantile_upper(&self, b: f64) -> f64 {
        self.mean + self.sd * norm_quantile_upper(b)
    }

    // The Gaussian pair is symmetric, so the loss is its own dual.
    fn dual(&self) -> Result<Arc<dyn PldSource>> {
        Ok(Arc::new(*self))
    }

    fn description(&self) -> String {
        format!("gaussian PLD N({}, {}^2)", self.mean, self.sd)
    }
}

/// Loss distribution of the Gaussian mechanism. Add and remove coincide.
pub fn gaussian_pld_source(mech: GaussianMechanism, _adj: AdjacencyDirection) -> GaussianPld {
    let s = mech.sigma;
    GaussianPld { mean: 0.5 / (s * s), sd: 1.0 / s }
}

/// Exact loss distribution of the Poisson-subsampled Gaussian mechanism.
///
/// With `l` the Gaussian loss, the remove direction is `phi(l)` under the
/// mixture `lambda N(m, s^2) + (1 - lambda) N(-m, s^2)` and the add direction
/// is `-phi(l)` with `l ~ N(-m, s^2)`, where `phi(v) = ln(1 + lambda (e^v - 1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampledGaussianPld {
    mean: f64,
    sd: f64,
    rate: SamplingRate,
    adj: AdjacencyDirection,
}

impl SubsampledGaussianPld {
    pub fn new(mech: GaussianMechanism, rate: SamplingRate, adj: AdjacencyDirection) -> Result<Self> {
        if rate.lambda() == 0.0 {
            return Err(PldError::InvalidParams("sampling rate must be positive".into()));
        }
        let g = gaussian_pld_source(mech, adj);
        Ok(Self { mean: g.mean, sd: g.sd, rate, adj })
    }

    fn mixture_cdf(&self, l: f64) -> f64 {
        let lam = self.rate.lambda();
        lam * norm_cdf((l - self.mean) / self.sd) + self.rate.one_minus() * norm_cdf((l + self.mean) / self.sd)
    }

    fn mixture_sf(&self, l: f64) -> f64 {
        let lam = self.rate.lambda();
        lam * norm_sf((l - self.mean) / self.sd) + self.rate.one_minus() * norm_sf((l + self.mean) / self.sd)
    }

    /// Root of a monotone function on `[lo, hi]` by bisection to full precision.
    fn bisect(mut lo: f64, mut hi: f64, above: impl Fn(f64) -> bool) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if above(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Largest add-direction loss, `-ln(1 - lambda)`.
    fn add_top(&self) -> f64 {
        -self.rate.one_minus().ln()
    }
}

impl PldSource for SubsampledGaussianPld {
    fn cdf(&self, x: f64) -> f64 {
        match self.adj {
            AdjacencyDirection::Remove => {
                if x <= self.rate.one_minus().ln() {
                    0.0
                } else {
                    self.mixture_cdf(phi_inv(x, self.rate))
                }
            }
            AdjacencyDirection::Add => {
                if x >= self.add_top() {
                    1.0
                } else {
                    norm_sf((phi_inv(-x, self.rate) + self.mean) / self.sd)
                }
            }
        }
    }

    fn sf(&self, x: f64) -> f64 {
        match self.adj {
            AdjacencyDirection::Remove => {
                if x <= self.rate.one_minus().ln() {
                    1.0
                } else {
                    self.mixture_sf(phi_inv(x, self.rate))
                }
            }
            AdjacencyDirection::Add => {
                if x >= self.add_top() {
                    0.0
                } else {
                    norm_cdf((phi_inv(-x, self.rate) + self.mean) / self.sd)
                }
            }
        }
    }

    fn quantile(&self, a: f64) -> f64 {
        match self.adj {
            AdjacencyDirection::Remove => {
                let z = norm_quantile(a);
                let (lo, hi) = (-self.mean + self.sd * z, self.mean + self.sd * z);
                phi(Self::bisect(lo, hi, |l| self.mixture_cdf(l) >= a), self.rate)
            }
            AdjacencyDirection::Add => -phi(-self.mean + self.sd * norm_quantile_upper(a), self.rate),
        }
    }

    fn quantile_upper(&self, b: f64) -> f64 {
        match self.adj {
            AdjacencyDirection::Remove => {
                let z = norm_quantile_upper(b);
                let (lo, hi) = (-self.mean + self.sd * z, self.mean + self.sd * z);
                phi(Self::bisect(lo, hi, |l| self.mixture_sf(l) <= b), self.rate)
            }
            AdjacencyDirection::Add => -phi(-self.mean + self.sd * norm_quantile(b), self.rate),
        }
    }

    fn dual(&self) -> Result<Arc<dyn PldSource>> {
        let adj = match self.adj {
            AdjacencyDirection::Remove => AdjacencyDirection::Add,
            AdjacencyDirection::Add => AdjacencyDirection::Remove,
        };
        Ok(Arc::new(Self { adj, ..*self }))
    }

    fn description(&self) -> String {
        format!("subsampled gaussian PLD ({}, sigma = {}, lambda = {})", self.adj, 1.0 / self.sd, self.rate.lambda())
    }
}

/// A pair of distributions (P, Q) over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PairRepr", into = "PairRepr")]
pub struct DiscretePair {
    p: Vec<f64>,
    q: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PairRepr {
    p: Vec<f64>,
    q: Vec<f64>,
}

impl TryFrom<PairRepr> for DiscretePair {
    type Error = PldError;
    fn try_from(r: PairRepr) -> Result<Self> {
        DiscretePair::new(r.p, r.q)
    }
}

impl From<DiscretePair> for PairRepr {
    fn from(d: DiscretePair) -> Self {
        PairRepr { p: d.p, q: d.q }
    }
}

const PAIR_TOL: f64 = 1e-12;

impl DiscretePair {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() || p.is_empty() {
            return Err(PldError::InvalidDistribution(format!("P has {} outcomes and Q has {}", p.len(), q.len())));
        }
        for (name, v) in [("P", &p), ("Q", &q)] {
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(PldError::InvalidDistribution(format!("{name} has a negative entry")));
            }
            let s = compensated_sum(v.iter().copied());
            if (s - 1.0).abs() > PAIR_TOL {
                return Err(PldError::InvalidDistribution(format!("{name} sums to {s}")));
            }
        }
        Ok(Self { p, q })
    }

    /// Randomized response: P = (p, 1 - p), Q = (1 - p, p).
    pub fn randomized_response(p: f64) -> Result<Self> {
        Self::new(vec![p, 1.0 - p], vec![1.0 - p, p])
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// The same pair with P and Q exchanged.
    pub fn swapped(&self) -> Self {
        Self { p: self.q.clone(), q: self.p.clone() }
    }
}

/// Exact loss distribution of a finite pair: `ln(P/Q)` under P for remove,
/// `ln(Q/P)` under Q for add.
pub fn discrete_pair_pld(pair: &DiscretePair, adj: AdjacencyDirection) -> Result<DiscretePld> {
    let (num, den) = match adj {
        AdjacencyDirection::Remove => (&pair.p, &pair.q),
        AdjacencyDirection::Add => (&pair.q, &pair.p),
    };
    let mut atoms = Vec::with_capacity(num.len());
    let mut p_top = 0.0;
    for (&a, &b) in num.iter().zip(den.iter()) {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            p_top += a;
        } else {
            atoms.push(((a / b).ln(), a));
        }
    }
    DiscretePld::from_atoms(atoms, 0.0, p_top)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsampled_gaussian_quantiles_invert_cdf() {
        let mech = GaussianMechanism::new(1.0).unwrap();
        let rate = SamplingRate::new(0.01).unwrap();
        for adj in [AdjacencyDirection::Remove, AdjacencyDirection::Add] {
            let src = SubsampledGaussianPld::new(mech, rate, adj).unwrap();
            for a in [1e-12, 1e-4, 0.3, 0.9] {
                let x = src.quantile(a);
                assert!((src.cdf(x) / a - 1.0).abs() < 1e-9, "{adj} a={a}");
                let y = src.quantile_upper(a);
                assert!((src.sf(y) / a - 1.0).abs() < 1e-9, "{adj} b={a}");
            }
        }
    }

    #[test]
    fn subsampled_gaussian_at_full_rate_is_gaussian() {
        let mech = GaussianMechanism::new(2.0).unwrap();
        let g = gaussian_pld_source(mech, AdjacencyDirection::Remove);
        for adj in [AdjacencyDirection::Remove, AdjacencyDirection::Add] {
            let src = SubsampledGaussianPld::new(mech, SamplingRate::new(1.0).unwrap(), adj).unwrap();
            for x in [-1.0, 0.0, 0.125, 0.9] {
                assert!((src.cdf(x) - g.cdf(x)).abs() < 1e-14, "{adj} x={x}");
            }
        }
    }

    #[test]
    fn subsampled_gaussian_dual_swaps_direction() {
        let mech = GaussianMechanism::new(1.0).unwrap();
        let rate = SamplingRate::new(0.2).unwrap();
        let rem = SubsampledGaussianPld::new(mech, rate, AdjacencyDirection::Remove).unwrap();
        let add = SubsampledGaussianPld::new(mech, rate, AdjacencyDirection::Add).unwrap();
        let d = rem.dual().unwrap();
        for x in [-0.2, 0.0, 0.1, 0.2] {
            assert_eq!(d.cdf(x), add.cdf(x));
        }
        assert_eq!(add.cdf(-(0.8f64.ln())), 1.0);
    }

    #[test]
    fn gaussian_source_examples() {
        let g = gaussian_pld_source(GaussianMechanism::new(1.0).unwrap(), AdjacencyDirection::Remove);
        assert!((g.quantile(0.5) - 0.5).abs() < 1e-15);
        assert!((g.cdf(0.5) - 0.5).abs() < 1e-15);
        let g2 = gaussian_pld_source(GaussianMechanism::new(2.0).unwrap(), AdjacencyDirection::Add);
        assert!((g2.quantile(0.841_344_746_068_542_9) - 0.625).abs() < 1e-12);
        assert!(GaussianMechanism::new(0.0).is_err());
    }

    #[test]
    fn pair_pld_examples() {
        let rr = DiscretePair::randomized_response(0.75).unwrap();
        let l = discrete_pair_pld(&rr, AdjacencyDirection::Remove).unwrap();
        let l3 = 3f64.ln();
        assert!((l.values()[0] + l3).abs() < 1e-15 && (l.values()[1] - l3).abs() < 1e-15);
        assert_eq!(l.probs(), &[0.25, 0.75]);

        let same = DiscretePair::new(vec![0.3, 0.7], vec![0.3, 0.7]).unwrap();
        let l = discrete_pair_pld(&same, AdjacencyDirection::Remove).unwrap();
        assert_eq!(l.values(), &[0.0]);
        assert!((l.probs()[0] - 1.0).abs() < 1e-15);

        let one = DiscretePair::new(vec![1.0, 0.0], vec![0.5, 0.5]).unwrap();
        let l = discrete_pair_pld(&one, AdjacencyDirection::Remove).unwrap();
        assert_eq!(l.values(), &[2f64.ln()]);
        let l = discrete_pair_pld(&one, AdjacencyDirection::Add).unwrap();
        assert!((l.p_top() - 0.5).abs() < 1e-15);
        assert!(l.is_realization());
    }

    #[test]
    fn pair_validation() {
        assert!(DiscretePair::new(vec![0.5, 0.6], vec![0.5, 0.5]).is_err());
        assert!(DiscretePair::new(vec![1.0], vec![0.5, 0.5]).is_err());
        assert!(DiscretePair::new(vec![1.5, -0.5], vec![0.5, 0.5]).is_err());
        let json = r#"{"p":[0.75,0.25],"q":[0.25,0.75]}"#;
        let pair: DiscretePair = serde_json::from_str(json).unwrap();
        assert_eq!(pair, DiscretePair::randomized_response(0.75).unwrap());
    }
}
