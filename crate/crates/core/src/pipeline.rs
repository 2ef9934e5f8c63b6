//! Accounting pipelines: a mechanism followed by allocation, subsampling and
//! composition stages, evaluated in both adjacency directions.

use crate::allocation::{ceil_log2, rand_alloc_k_one, AllocationParams};
use crate::composition::{self_compose, self_compose_truncated};
use crate::error::{PldError, Result};
use crate::mechanisms::{
    discrete_pair_pld, gaussian_pld_source, DiscretePair, GaussianMechanism, PldSource, SubsampledGaussianPld,
};
use crate::pld::{discretize, AdjacencyDirection, BoundDirection, DiscretePld, TightnessParams};
use crate::subsampling::{subsample_add, subsample_remove, SamplingRate};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One step of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Gaussian { sigma: f64 },
    Pair(DiscretePair),
    Allocate { t: usize, k: usize },
    Subsample { lambda: f64 },
    Compose { m: usize },
}

impl Stage {
    fn is_mechanism(&self) -> bool {
        matches!(self, Stage::Gaussian { .. } | Stage::Pair(_))
    }
}

/// Which adjacency directions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionChoice {
    Add,
    Remove,
    #[default]
    Both,
}

impl DirectionChoice {
    pub fn directions(self) -> Vec<AdjacencyDirection> {
        match self {
            Self::Add => vec![AdjacencyDirection::Add],
            Self::Remove => vec![AdjacencyDirection::Remove],
            Self::Both => vec![AdjacencyDirection::Remove, AdjacencyDirection::Add],
        }
    }
}

/// Which bounds to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundChoice {
    #[default]
    Upper,
    Lower,
    Both,
}

impl BoundChoice {
    pub fn bounds(self) -> Vec<BoundDirection> {
        match self {
            Self::Upper => vec![BoundDirection::Upper],
            Self::Lower => vec![BoundDirection::Lower],
            Self::Both => vec![BoundDirection::Upper, BoundDirection::Lower],
        }
    }
}

/// A full accounting request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub stages: Vec<Stage>,
    pub tightness: TightnessParams,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub direction: DirectionChoice,
    #[serde(default)]
    pub bound: BoundChoice,
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.stages.first() else {
            return Err(PldError::InvalidParams("pipeline has no stages".into()));
        };
        if !first.is_mechanism() {
            return Err(PldError::InvalidParams("first stage must be a mechanism".into()));
        }
        if let Some(i) = self.stages.iter().skip(1).position(Stage::is_mechanism) {
            return Err(PldError::InvalidParams(format!("stage {}: mechanism after the first stage", i + 1)));
        }
        Ok(())
    }

    /// Number of stages that spend approximation budget, counting the
    /// discretization of a continuous loss as one.
    pub fn budget_consumers(&self) -> usize {
        let mut continuous = false;
        let mut count = 0;
        for stage in &self.stages {
            match stage {
                Stage::Gaussian { .. } => continuous = true,
                Stage::Pair(_) => continuous = false,
                Stage::Allocate { .. } => {
                    count += 1;
                    continuous = false;
                }
                Stage::Subsample { .. } => {}
                Stage::Compose { .. } => {
                    count += 1 + usize::from(continuous);
                    continuous = false;
                }
            }
        }
        count + usize::from(continuous)
    }
}

/// Loss in the middle of a pipeline: either still exact and continuous, or
/// already a discrete bound.
#[derive(Debug, Clone)]
enum LossState {
    Gaussian(GaussianMechanism, AdjacencyDirection),
    Source(Arc<dyn PldSource>),
    Discrete(DiscretePld),
}

impl LossState {
    fn into_discrete(self, params: TightnessParams, dir: BoundDirection) -> Result<DiscretePld> {
        match self {
            LossState::Gaussian(m, adj) => discretize(&gaussian_pld_source(m, adj), params, dir),
            LossState::Source(s) => discretize(s.as_ref(), params, dir),
            LossState::Discrete(l) => Ok(l),
        }
    }

    fn as_source(&self) -> Arc<dyn PldSource> {
        match self {
            LossState::Gaussian(m, adj) => Arc::new(gaussian_pld_source(*m, *adj)),
            LossState::Source(s) => s.clone(),
            LossState::Discrete(l) => Arc::new(l.clone()),
        }
    }
}

fn stage_error(index: usize, e: PldError) -> PldError {
    match e {
        PldError::InvalidParams(m) => PldError::InvalidParams(format!("stage {index}: {m}")),
        PldError::InvalidRealization(m) => PldError::InvalidRealization(format!("stage {index}: {m}")),
        PldError::OutOfRange(m) => PldError::OutOfRange(format!("stage {index}: {m}")),
        PldError::TooLarge(m) => PldError::TooLarge(format!("stage {index}: {m}")),
        other => other,
    }
}

/// Evaluates the stages for one adjacency direction and one bound.
pub fn evaluate(
    stages: &[Stage],
    stage_params: TightnessParams,
    adj: AdjacencyDirection,
    dir: BoundDirection,
) -> Result<DiscretePld> {
    let mut state: Option<LossState> = None;
    for (i, stage) in stages.iter().enumerate() {
        let next = match (stage, state.take()) {
            (Stage::Gaussian { sigma }, None) => {
                LossState::Gaussian(GaussianMechanism::new(*sigma).map_err(|e| stage_error(i, e))?, adj)
            }
            (Stage::Pair(pair), None) => {
                LossState::Discrete(discrete_pair_pld(pair, adj).map_err(|e| stage_error(i, e))?)
            }
            (Stage::Allocate { t, k }, Some(s)) => {
                let alloc = AllocationParams::new(*t, *k, stage_params).map_err(|e| stage_error(i, e))?;
                LossState::Discrete(
                    rand_alloc_k_one(s.as_source().as_ref(), adj, alloc, dir).map_err(|e| stage_error(i, e))?,
                )
            }
            (Stage::Subsample { lambda }, Some(s)) => {
                let rate = SamplingRate::new(*lambda).map_err(|e| stage_error(i, e))?;
                subsample_state(s, rate, adj, stage_params, dir).map_err(|e| stage_error(i, e))?
            }
            (Stage::Compose { m }, Some(s)) => {
                let l = s.into_discrete(stage_params, dir).map_err(|e| stage_error(i, e))?;
                LossState::Discrete(self_compose(&l, *m, stage_params.alpha, dir).map_err(|e| stage_error(i, e))?)
            }
            _ => return Err(PldError::InvalidParams(format!("stage {i}: misplaced mechanism"))),
        };
        state = Some(next);
    }
    let state = state.ok_or_else(|| PldError::InvalidParams("pipeline has no stages".into()))?;
    state.into_discrete(stage_params, dir)
}

fn subsample_state(
    state: LossState,
    rate: SamplingRate,
    adj: AdjacencyDirection,
    params: TightnessParams,
    dir: BoundDirection,
) -> Result<LossState> {
    // A Gaussian loss has an exact subsampled form.
    if let LossState::Gaussian(mech, _) = state {
        if rate.lambda() == 0.0 {
            return Ok(LossState::Discrete(DiscretePld::point_mass(0.0)?));
        }
        return Ok(LossState::Source(Arc::new(SubsampledGaussianPld::new(mech, rate, adj)?)));
    }
    let l = state.into_discrete(params, dir)?;
    let out = match adj {
        AdjacencyDirection::Remove => subsample_remove(&l, rate)?,
        AdjacencyDirection::Add => subsample_add(&l, rate)?,
    };
    Ok(LossState::Discrete(out))
}

/// One output row of an epsilon-delta curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub delta_upper: Option<f64>,
    pub delta_lower: Option<f64>,
    /// `remove`, `add` or `max` for the larger of the two.
    pub direction: String,
}

/// Epsilon at a requested delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPoint {
    pub delta: f64,
    pub epsilon_upper: Option<f64>,
    pub epsilon_lower: Option<f64>,
    pub direction: String,
}

/// A computed bound with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPld {
    pub direction: AdjacencyDirection,
    pub bound: BoundDirection,
    pub pld: DiscretePld,
}

/// Result of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stage_params: TightnessParams,
    pub curve: Vec<CurvePoint>,
    pub epsilons: Vec<EpsilonPoint>,
    pub plds: Vec<LabeledPld>,
    /// Bounds that could not be formed, with the reason.
    pub skipped: Vec<String>,
}

impl PipelineReport {
    pub fn pld(&self, adj: AdjacencyDirection, bound: BoundDirection) -> Option<&DiscretePld> {
        self.plds.iter().find(|p| p.direction == adj && p.bound == bound).map(|p| &p.pld)
    }

    /// Largest delta over the computed directions for one bound.
    pub fn delta(&self, bound: BoundDirection, epsilon: f64) -> Option<f64> {
        self.plds.iter().filter(|p| p.bound == bound).map(|p| p.pld.hockey_stick_delta(epsilon)).reduce(f64::max)
    }

    /// Largest epsilon over the computed directions for one bound.
    pub fn epsilon(&self, bound: BoundDirection, delta: f64) -> Result<Option<f64>> {
        let mut best: Option<f64> = None;
        for p in self.plds.iter().filter(|p| p.bound == bound) {
            let e = p.pld.epsilon_for_delta(delta)?;
            best = Some(best.map_or(e, |b| b.max(e)));
        }
        Ok(best)
    }
}

/// Runs a pipeline in the requested directions and bounds. The global budget
/// is split evenly over the stages that consume it; lower bounds that need an
/// operation only defined on realizations are skipped and reported.
pub fn run_pipeline(spec: &PipelineSpec) -> Result<PipelineReport> {
    spec.validate()?;
    let consumers = spec.budget_consumers().max(1);
    let stage_params = spec.tightness.scaled(1.0 / consumers as f64)?;
    let mut plds = Vec::new();
    let mut skipped = Vec::new();
    for bound in spec.bound.bounds() {
        for adj in spec.direction.directions() {
            match evaluate(&spec.stages, stage_params, adj, bound) {
                Ok(pld) => plds.push(LabeledPld { direction: adj, bound, pld }),
                Err(PldError::InvalidRealization(m)) if bound == BoundDirection::Lower => {
                    skipped.push(format!("{adj} lower bound: {m}"));
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mut report = PipelineReport { stage_params, curve: Vec::new(), epsilons: Vec::new(), plds, skipped };
    let mut labels: Vec<Option<AdjacencyDirection>> = spec.direction.directions().into_iter().map(Some).collect();
    if labels.len() > 1 {
        labels.push(None);
    }
    for &eps in &spec.epsilons {
        for &label in &labels {
            let delta = |bound| {
                report
                    .plds
                    .iter()
                    .filter(|p| p.bound == bound && label.is_none_or(|a| p.direction == a))
                    .map(|p| p.pld.hockey_stick_delta(eps))
                    .reduce(f64::max)
            };
            report.curve.push(CurvePoint {
                epsilon: eps,
                delta_upper: delta(BoundDirection::Upper),
                delta_lower: delta(BoundDirection::Lower),
                direction: label.map_or("max".into(), |a| a.to_string()),
            });
        }
    }
    for &delta in &spec.deltas {
        for &label in &labels {
            let eps = |bound| -> Result<Option<f64>> {
                let mut best: Option<f64> = None;
                for p in report.plds.iter().filter(|p| p.bound == bound && label.is_none_or(|a| p.direction == a)) {
                    let e = p.pld.epsilon_for_delta(delta)?;
                    best = Some(best.map_or(e, |b: f64| b.max(e)));
                }
                Ok(best)
            };
            let point = EpsilonPoint {
                delta,
                epsilon_upper: eps(BoundDirection::Upper)?,
                epsilon_lower: eps(BoundDirection::Lower)?,
                direction: label.map_or("max".into(), |a| a.to_string()),
            };
            report.epsilons.push(point);
        }
    }
    Ok(report)
}

/// Remove and add bounds for one bound direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionPair {
    pub remove: DiscretePld,
    pub add: DiscretePld,
}

impl DirectionPair {
    /// Privacy profile: the larger delta of the two directions.
    pub fn delta(&self, epsilon: f64) -> f64 {
        self.remove.hockey_stick_delta(epsilon).max(self.add.hockey_stick_delta(epsilon))
    }

    /// The larger epsilon of the two directions.
    pub fn epsilon(&self, delta: f64) -> Result<f64> {
        Ok(self.remove.epsilon_for_delta(delta)?.max(self.add.epsilon_for_delta(delta)?))
    }
}

/// Epsilons of one scheme at a fixed delta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub remove: f64,
    pub add: f64,
    pub max: f64,
}

impl EpsilonSummary {
    fn of(pair: &DirectionPair, delta: f64) -> Result<Self> {
        let remove = pair.remove.epsilon_for_delta(delta)?;
        let add = pair.add.epsilon_for_delta(delta)?;
        Ok(Self { remove, add, max: remove.max(add) })
    }
}

/// Random allocation against Poisson subsampling with rate `k / t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonComparison {
    pub delta: f64,
    pub allocation_upper: DirectionPair,
    pub allocation_lower: DirectionPair,
    pub poisson_upper: DirectionPair,
    pub poisson_lower: DirectionPair,
    pub epsilon_allocation_upper: EpsilonSummary,
    pub epsilon_allocation_lower: EpsilonSummary,
    pub epsilon_poisson_upper: EpsilonSummary,
    pub epsilon_poisson_lower: EpsilonSummary,
}

/// Bounds on `t` rounds of the Gaussian mechanism under Poisson subsampling
/// with rate `k / t`.
///
/// The exact subsampled loss is discretized on a grid of step
/// `alpha / (2 ceil(log2 t))` with tails `beta / (2t)` and composed by
/// squaring, truncating `beta / (2t)` tails after each squaring. Every round
/// is rounded by less than one step, so the bounds may sit up to `t` steps
/// away from the exact curve.
pub fn poisson_bounds(
    sigma: f64,
    t: usize,
    k: usize,
    params: TightnessParams,
    dir: BoundDirection,
) -> Result<DirectionPair> {
    AllocationParams::new(t, k, params)?;
    let mech = GaussianMechanism::new(sigma)?;
    let rate = SamplingRate::new(k as f64 / t as f64)?;
    let step = if t == 1 { params.alpha } else { params.alpha / (2 * ceil_log2(t)) as f64 };
    let tail = params.beta / (2 * t) as f64;
    let grid = TightnessParams::new(step, tail)?;
    let one = |adj| -> Result<DiscretePld> {
        let l = if t == 1 {
            discretize(&gaussian_pld_source(mech, adj), grid, dir)?
        } else {
            discretize(&SubsampledGaussianPld::new(mech, rate, adj)?, grid, dir)?
        };
        self_compose_truncated(&l, t, params.alpha, dir, tail)
    };
    Ok(DirectionPair { remove: one(AdjacencyDirection::Remove)?, add: one(AdjacencyDirection::Add)? })
}

/// Allocation bounds for the Gaussian mechanism, `k` of `t` rounds.
pub fn allocation_bounds(
    sigma: f64,
    t: usize,
    k: usize,
    params: TightnessParams,
    dir: BoundDirection,
) -> Result<DirectionPair> {
    let alloc = AllocationParams::new(t, k, params)?;
    let mech = GaussianMechanism::new(sigma)?;
    let g = gaussian_pld_source(mech, AdjacencyDirection::Remove);
    Ok(DirectionPair {
        remove: rand_alloc_k_one(&g, AdjacencyDirection::Remove, alloc, dir)?,
        add: rand_alloc_k_one(&g, AdjacencyDirection::Add, alloc, dir)?,
    })
}

/// Upper and lower bounds for random allocation and Poisson subsampling of
/// the Gaussian mechanism, with their epsilons at `delta`.
pub fn compare_poisson(
    sigma: f64,
    t: usize,
    k: usize,
    params: TightnessParams,
    delta: f64,
) -> Result<PoissonComparison> {
    let allocation_upper = allocation_bounds(sigma, t, k, params, BoundDirection::Upper)?;
    let allocation_lower = allocation_bounds(sigma, t, k, params, BoundDirection::Lower)?;
    let poisson_upper = poisson_bounds(sigma, t, k, params, BoundDirection::Upper)?;
    let poisson_lower = poisson_bounds(sigma, t, k, params, BoundDirection::Lower)?;
    Ok(PoissonComparison {
        delta,
        epsilon_allocation_upper: EpsilonSummary::of(&allocation_upper, delta)?,
        epsilon_allocation_lower: EpsilonSummary::of(&allocation_lower, delta)?,
        epsilon_poisson_upper: EpsilonSummary::of(&poisson_upper, delta)?,
        epsilon_poisson_lower: EpsilonSummary::of(&poisson_lower, delta)?,
        allocation_upper,
        allocation_lower,
        poisson_upper,
        poisson_lower,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::gaussian_delta_analytic;

    fn spec(stages: Vec<Stage>, alpha: f64, beta: f64) -> PipelineSpec {
        PipelineSpec {
            stages,
            tightness: TightnessParams::new(alpha, beta).unwrap(),
            epsilons: vec![],
            deltas: vec![],
            direction: DirectionChoice::Both,
            bound: BoundChoice::Both,
        }
    }

    #[test]
    fn budget_split_counts_consuming_stages() {
        let s = spec(
            vec![
                Stage::Gaussian { sigma: 1.0 },
                Stage::Allocate { t: 4, k: 2 },
                Stage::Subsample { lambda: 0.5 },
                Stage::Compose { m: 2 },
            ],
            1e-3,
            1e-8,
        );
        assert_eq!(s.budget_consumers(), 2);
        let s = spec(vec![Stage::Gaussian { sigma: 1.0 }, Stage::Compose { m: 2 }], 1e-3, 1e-8);
        assert_eq!(s.budget_consumers(), 2);
        let s = spec(vec![Stage::Gaussian { sigma: 1.0 }], 1e-3, 1e-8);
        assert_eq!(s.budget_consumers(), 1);
    }

    #[test]
    fn single_step_allocation_is_the_mechanism() {
        let mut s = spec(vec![Stage::Gaussian { sigma: 1.0 }, Stage::Allocate { t: 1, k: 1 }], 1e-4, 1e-12);
        s.epsilons = vec![1.0];
        let r = run_pipeline(&s).unwrap();
        let exact = gaussian_delta_analytic(1.0, 1.0);
        let row = r.curve.iter().find(|c| c.direction == "max").unwrap();
        assert!(row.delta_lower.unwrap() <= exact + 1e-12);
        assert!(row.delta_upper.unwrap() >= exact - 1e-12);
        assert!(row.delta_upper.unwrap() - row.delta_lower.unwrap() < 1e-4);
    }

    #[test]
    fn randomized_response_allocation_brackets_exact_delta() {
        let rr = DiscretePair::randomized_response(0.75).unwrap();
        let mut s = spec(vec![Stage::Pair(rr), Stage::Allocate { t: 2, k: 1 }], 1e-4, 1e-12);
        s.epsilons = vec![0.0];
        let r = run_pipeline(&s).unwrap();
        let row = r.curve.iter().find(|c| c.direction == "max").unwrap();
        assert!(row.delta_lower.unwrap() <= 0.375 + 1e-12, "{row:?}");
        assert!(row.delta_upper.unwrap() >= 0.375 - 1e-12, "{row:?}");
    }

    #[test]
    fn rejects_bad_stage_order() {
        let s = spec(vec![Stage::Compose { m: 2 }], 1e-3, 1e-8);
        assert!(matches!(run_pipeline(&s), Err(PldError::InvalidParams(_))));
        let s = spec(vec![Stage::Gaussian { sigma: 1.0 }, Stage::Gaussian { sigma: 2.0 }], 1e-3, 1e-8);
        assert!(run_pipeline(&s).is_err());
    }

    #[test]
    fn poisson_with_one_round_is_the_mechanism() {
        let p = TightnessParams::new(1e-4, 1e-12).unwrap();
        let c = compare_poisson(1.0, 1, 1, p, 1e-6).unwrap();
        let e = c.epsilon_poisson_upper.max;
        assert!((c.epsilon_allocation_upper.max - e).abs() < 2e-4);
        assert!(c.epsilon_poisson_lower.max <= e);
    }
}
