//! Fixtures shared by the benchmarks.

use pld_alloc::{
    discretize, gaussian_pld_source, to_exp_grid, AdjacencyDirection, BoundDirection, DiscretePld, GaussianMechanism,
    GeometricGridDist, TightnessParams,
};

/// Remove-direction Gaussian loss discretized with the given budget.
pub fn gaussian_pld(sigma: f64, alpha: f64, beta: f64) -> DiscretePld {
    let source = gaussian_pld_source(GaussianMechanism::new(sigma).unwrap(), AdjacencyDirection::Remove);
    discretize(&source, TightnessParams::new(alpha, beta).unwrap(), BoundDirection::Upper).unwrap()
}

/// `e^L` of a discretized Gaussian loss on a geometric grid of ratio `e^alpha`.
pub fn exp_grid(sigma: f64, alpha: f64, beta: f64) -> GeometricGridDist {
    to_exp_grid(&gaussian_pld(sigma, alpha, beta), false, alpha).unwrap()
}
