use rand::Rng;

use crate::approximation::{sample_epsilon, FactorizedApproxParams, GradientVector};
use crate::error::Result;
use crate::models::{MiniBatch, Target};

use super::importance::importance_weights;
use super::{EstimatorConfig, FreshEstimate, ImportanceEstimate, ReuseOutcome, SampleCache};

/// Score-function gradient
/// `(1/M) Σ_m (log p(x, z_m) − log q_λ(z_m)) ∇_λ log q_λ(z_m)`.
///
/// Needs only log-density evaluations of the model. The returned cache has
/// no model gradients.
pub fn score_gradient<R: Rng + ?Sized>(
    params: &FactorizedApproxParams,
    target: &Target<'_>,
    batch: &MiniBatch,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<FreshEstimate> {
    let d = params.dim();
    let num = cfg.num_samples;
    let mut cache = SampleCache {
        eps: Vec::with_capacity(num),
        z: Vec::with_capacity(num),
        grad_z: Vec::new(),
        log_phi: Vec::with_capacity(num),
        logp: Vec::with_capacity(num),
        batch_id: batch.batch_id,
        params_at_draw: params.clone(),
    };
    let mut gradient = GradientVector::zeros(d);
    let mut elbo = 0.0;
    for _ in 0..num {
        let eps = sample_epsilon(rng, d)?;
        let z = params.forward(&eps)?;
        let logp = target.log_joint(batch, &z)?;
        let log_q = params.log_density_at(&eps)?;
        let score = params.score_at(&eps)?;
        let c = logp - log_q;
        for (g, s) in gradient.0.iter_mut().zip(&score.0) {
            *g += c * s;
        }
        elbo += c;

        cache.log_phi.push(params.base_log_density_per_factor(&eps)?);
        cache.eps.push(eps);
        cache.z.push(z);
        cache.logp.push(logp);
    }
    gradient.scale(1.0 / num as f64);
    Ok(FreshEstimate {
        gradient,
        cache,
        elbo: elbo / num as f64,
    })
}

/// Importance-sampled score-function gradient at `new_params`, reusing only
/// the cached `log p(x, z_m)`. Each factor's parameters are weighted by the
/// factor's approximation-density ratio `q_{λ'}(z_S) / q_λ(z_S)`; `log q` and
/// its score are recomputed at `new_params`.
///
/// A sample with any coordinate outside the transform's range is dropped.
pub fn importance_score_gradient(
    cache: &SampleCache,
    new_params: &FactorizedApproxParams,
    cfg: &EstimatorConfig,
) -> Result<ReuseOutcome> {
    let (weights, eps_new) = importance_weights(cache, new_params)?;
    let max_ratio = weights.max_density_ratio();
    if max_ratio > cfg.weight_ceiling {
        return Ok(ReuseOutcome::Refused { max_ratio });
    }
    let d = new_params.dim();
    let partition = new_params.partition();
    let num = cache.num_samples();
    let mut gradient = GradientVector::zeros(d);
    let mut elbo = 0.0;
    for m in 0..num {
        if !weights.valid[m].iter().all(|&v| v) {
            continue;
        }
        let log_q = new_params.log_density_at(&eps_new[m])?;
        let score = new_params.score_at(&eps_new[m])?;
        let c = cache.logp[m] - log_q;
        for i in 0..d {
            let r = weights.density_ratio(m, partition.factor_of(i));
            gradient.0[i] += r * (c * score.0[i]);
            gradient.0[d + i] += r * (c * score.0[d + i]);
        }
        let joint: f64 = (0..partition.num_factors())
            .map(|s| weights.log_base[m][s] + weights.log_jacobian[s])
            .sum();
        elbo += joint.exp() * c;
    }
    gradient.scale(1.0 / num as f64);
    let mean_weight = weights.mean_weight();
    Ok(ReuseOutcome::Accepted(ImportanceEstimate {
        gradient,
        mean_weight,
        elbo: elbo / num as f64,
        degenerate: mean_weight < cfg.weight_floor || weights.any_invalid(),
    }))
}
