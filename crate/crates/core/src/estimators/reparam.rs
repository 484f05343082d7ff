use rand::Rng;

use crate::approximation::{sample_epsilon, FactorizedApproxParams, GradientVector};
use crate::error::{Error, Result};
use crate::models::{MiniBatch, Target};

use super::{EstimatorConfig, FreshEstimate, SampleCache};

/// Monte Carlo reparameterization gradient with `M` fresh draws.
///
/// Each sample costs one model gradient (and one log-density, for the ELBO
/// estimate); those are the only model evaluations.
pub fn reparam_gradient<R: Rng + ?Sized>(
    params: &FactorizedApproxParams,
    target: &Target<'_>,
    batch: &MiniBatch,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<FreshEstimate> {
    let d = params.dim();
    if target.latent_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: target.latent_dim(),
            actual: d,
        });
    }
    let m_total = cfg.num_samples;
    let mut cache = SampleCache {
        eps: Vec::with_capacity(m_total),
        z: Vec::with_capacity(m_total),
        grad_z: Vec::with_capacity(m_total),
        log_phi: Vec::with_capacity(m_total),
        logp: Vec::with_capacity(m_total),
        batch_id: batch.batch_id,
        params_at_draw: params.clone(),
    };
    let mut gradient = GradientVector::zeros(d);
    let mut elbo = 0.0;
    for _ in 0..m_total {
        let eps = sample_epsilon(rng, d)?;
        let z = params.forward(&eps)?;
        let grad_z = target.grad_log_joint(batch, &z)?;
        let logp = target.log_joint(batch, &z)?;
        let log_q = params.log_density_at(&eps)?;
        gradient.add_assign(&params.reparam_pullback(&eps, &grad_z)?);
        elbo += logp - log_q;

        cache.log_phi.push(params.base_log_density_per_factor(&eps)?);
        cache.eps.push(eps);
        cache.z.push(z);
        cache.grad_z.push(grad_z);
        cache.logp.push(logp);
    }
    gradient.scale(1.0 / m_total as f64);
    Ok(FreshEstimate {
        gradient,
        cache,
        elbo: elbo / m_total as f64,
    })
}
