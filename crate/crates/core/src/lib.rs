//! Discrete privacy loss distributions with tight accounting for random
//! allocation, Poisson subsampling and composition.
//!
//! Every operation returns either a pessimistic (upper) or optimistic
//! (lower) discrete PLD. Upper results stochastically dominate the true
//! loss up to a value shift `alpha` and tail mass `beta`; lower results are
//! dominated by it.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod allocation;
pub mod composition;
pub mod error;
pub mod mechanisms;
pub mod numeric;
pub mod oracle;
pub mod pipeline;
pub mod pld;
pub mod subsampling;

pub use allocation::{
    conv, rand_alloc_add, rand_alloc_add_with_stats, rand_alloc_k, rand_alloc_k_one, rand_alloc_remove,
    rand_alloc_remove_with_stats, range_renorm, self_conv, to_exp_grid, AllocStats, AllocationParams,
    GeometricGridDist,
};
pub use composition::{compose, regrid, self_compose, self_compose_truncated};
pub use error::{PldError, Result};
pub use mechanisms::{
    discrete_pair_pld, gaussian_pld_source, DiscretePair, GaussianMechanism, GaussianPld, PldSource,
    SubsampledGaussianPld,
};
pub use pipeline::{compare_poisson, run_pipeline, PipelineReport, PipelineSpec, PoissonComparison, Stage};
pub use pld::{
    check_stoch_dom, combine_bounds, discretize, stoch_dom_gap, AdjacencyDirection, BoundDirection, DiscretePld,
    TightnessParams,
};
pub use subsampling::{subsample_add, subsample_remove, SamplingRate};
