//! Poisson subsampling applied directly to PLD realizations.

use crate::error::{PldError, Result};
use crate::numeric::scaled_exp;
use crate::pld::DiscretePld;
use serde::{Deserialize, Serialize};

/// Sampling probability `lambda`, stored together with `1 - lambda` so that
/// rates close to one keep full precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRate {
    lambda: f64,
    one_minus: f64,
}

impl SamplingRate {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(PldError::InvalidParams(format!("sampling rate {lambda} outside [0, 1]")));
        }
        Ok(Self { lambda, one_minus: 1.0 - lambda })
    }

    /// Rate given through its complement `1 - lambda`.
    pub fn from_complement(one_minus: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&one_minus) {
            return Err(PldError::InvalidParams(format!("complement {one_minus} outside [0, 1]")));
        }
        Ok(Self { lambda: 1.0 - one_minus, one_minus })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn one_minus(&self) -> f64 {
        self.one_minus
    }
}

/// ln(1 + lambda (e^v - 1)).
pub(crate) fn phi(v: f64, r: SamplingRate) -> f64 {
    if v > 1.0 {
        v + (r.lambda + r.one_minus * (-v).exp()).ln()
    } else {
        (r.lambda * v.exp_m1()).ln_1p()
    }
}

/// Inverse of [`phi`], defined for `x > ln(1 - lambda)`.
pub(crate) fn phi_inv(x: f64, r: SamplingRate) -> f64 {
    if x > 1.0 {
        x + ((-r.one_minus * (-x).exp()).ln_1p() - r.lambda.ln())
    } else {
        (x.exp_m1() / r.lambda).ln_1p()
    }
}

/// Loss distribution of the subsampled pair `(lambda P + (1 - lambda) Q, Q)`
/// given the remove-direction loss of `(P, Q)`.
pub fn subsample_remove(l: &DiscretePld, rate: SamplingRate) -> Result<DiscretePld> {
    let moment = l.require_realization()?;
    if rate.lambda == 0.0 {
        return DiscretePld::point_mass(0.0);
    }
    if rate.one_minus == 0.0 {
        return Ok(l.clone());
    }
    let mut atoms: Vec<(f64, f64)> = l
        .atoms()
        .map(|(v, p)| {
            let mass = rate.lambda * p + rate.one_minus * scaled_exp(p, -v);
            (phi(v, rate), mass)
        })
        .collect();
    // Outcomes that only Q can produce have loss ln(1 - lambda).
    let residual = rate.one_minus * (1.0 - moment);
    if residual > 0.0 {
        atoms.push((rate.one_minus.ln(), residual));
    }
    DiscretePld::from_atoms(atoms, 0.0, rate.lambda * l.p_top())
}

/// Loss distribution of `(Q, lambda P + (1 - lambda) Q)` given the
/// add-direction loss `ln(Q/P)` under Q.
pub fn subsample_add(l: &DiscretePld, rate: SamplingRate) -> Result<DiscretePld> {
    l.require_realization()?;
    if rate.one_minus == 0.0 {
        return Ok(l.clone());
    }
    let mut atoms: Vec<(f64, f64)> = l.atoms().map(|(v, p)| (-phi(-v, rate), p)).collect();
    if l.p_top() > 0.0 {
        atoms.push((-rate.one_minus.ln(), l.p_top()));
    }
    DiscretePld::from_atoms(atoms, 0.0, 0.0)
}
