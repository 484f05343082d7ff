//! ELBO gradient estimators.
//!
//! Fresh estimators draw `ε_m`, push them through the approximation and
//! evaluate the model; they return a [`SampleCache`] holding everything the
//! importance-sampled estimators need to produce a gradient at different
//! parameters later without touching the model again.

mod importance;
mod reparam;
mod score;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximation::{EpsilonVector, FactorizedApproxParams, GradientVector, LatentVector};
use crate::error::{Error, Result};
use crate::models::{MiniBatch, Target};

pub use importance::{importance_gradient, importance_weights, FactorWeights};
pub use reparam::reparam_gradient;
pub use score::{importance_score_gradient, score_gradient};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Monte Carlo samples `M` per fresh estimate.
    pub num_samples: usize,
    /// Mean weight below which reuse is reported as degenerate.
    pub weight_floor: f64,
    /// Per-sample weight above which reuse is refused.
    pub weight_ceiling: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            num_samples: 1,
            weight_floor: 1e-3,
            weight_ceiling: 1e3,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::config("estimator.num_samples", "must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.weight_floor) {
            return Err(Error::config("estimator.weight_floor", "must be in [0, 1)"));
        }
        if !(self.weight_ceiling > 1.0) {
            return Err(Error::config("estimator.weight_ceiling", "must be > 1"));
        }
        Ok(())
    }
}

/// Everything drawn and evaluated for one fresh estimate.
#[derive(Debug, Clone)]
pub struct SampleCache {
    pub eps: Vec<EpsilonVector>,
    pub z: Vec<LatentVector>,
    /// `∇_z log p(x_b, z_m)`; empty for caches drawn by the score estimator.
    pub grad_z: Vec<Vec<f64>>,
    /// Per-factor `Σ log φ(ε_{m,i})`.
    pub log_phi: Vec<Vec<f64>>,
    pub logp: Vec<f64>,
    pub batch_id: usize,
    pub params_at_draw: FactorizedApproxParams,
}

impl SampleCache {
    pub fn num_samples(&self) -> usize {
        self.eps.len()
    }

    pub fn has_model_gradients(&self) -> bool {
        self.grad_z.len() == self.eps.len()
    }
}

#[derive(Debug, Clone)]
pub struct FreshEstimate {
    pub gradient: GradientVector,
    pub cache: SampleCache,
    /// Sample average of `log p − log q`.
    pub elbo: f64,
}

#[derive(Debug, Clone)]
pub struct ImportanceEstimate {
    pub gradient: GradientVector,
    /// Mean of the per-factor, per-sample weights `φ(ε')/φ(ε)`.
    pub mean_weight: f64,
    /// Importance-weighted `log p − log q'` average.
    pub elbo: f64,
    /// Mean weight under the floor, or a cached sample left the range of the
    /// transform.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub enum ReuseOutcome {
    Accepted(ImportanceEstimate),
    /// Some weight exceeded the ceiling; the caller should draw fresh samples.
    Refused { max_ratio: f64 },
}

impl ReuseOutcome {
    pub fn accepted(self) -> Option<ImportanceEstimate> {
        match self {
            ReuseOutcome::Accepted(e) => Some(e),
            ReuseOutcome::Refused { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    #[default]
    Reparam,
    Score,
}

impl EstimatorKind {
    pub fn fresh<R: Rng + ?Sized>(
        self,
        params: &FactorizedApproxParams,
        target: &Target<'_>,
        batch: &MiniBatch,
        cfg: &EstimatorConfig,
        rng: &mut R,
    ) -> Result<FreshEstimate> {
        match self {
            EstimatorKind::Reparam => reparam_gradient(params, target, batch, cfg, rng),
            EstimatorKind::Score => score_gradient(params, target, batch, cfg, rng),
        }
    }

    pub fn reuse(
        self,
        cache: &SampleCache,
        params: &FactorizedApproxParams,
        cfg: &EstimatorConfig,
    ) -> Result<ReuseOutcome> {
        match self {
            EstimatorKind::Reparam => importance_gradient(cache, params, cfg),
            EstimatorKind::Score => importance_score_gradient(cache, params, cfg),
        }
    }
}
