//! Importance-sampled reparameterization gradients.
//!
//! Cached `z_m` are held fixed and mapped back to the base draws
//! `ε'_m = f⁻¹(z_m, λ')` that would have produced them under the new
//! parameters. Each factor `S` of the approximation gets its own weight
//! from the base densities, `w_{S,m} = Π_{i∈S} φ(ε'_{m,i}) / φ(ε_{m,i})`.
//!
//! The base-density ratio is the density ratio in `ε`-space. In `z`-space the
//! new and old approximations also differ by the Jacobian of the affine map,
//! `Π_{i∈S} σ_i / σ'_i`, and the gradient is weighted by the full ratio
//! `q_{λ'}(z_S) / q_λ(z_S)` so that its expectation equals the fresh gradient
//! at `λ'`. The two coincide whenever the scales of the factor are unchanged.

use crate::approximation::{log_std_normal, EpsilonVector, FactorizedApproxParams, GradientVector};
use crate::error::{Error, Result};

use super::{EstimatorConfig, ImportanceEstimate, ReuseOutcome, SampleCache};

/// Per-sample, per-factor log weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorWeights {
    /// `log φ(ε') − log φ(ε)` summed over each factor, `[m][s]`.
    pub log_base: Vec<Vec<f64>>,
    /// `Σ_{i∈S} (ρ_i − ρ'_i)` per factor.
    pub log_jacobian: Vec<f64>,
    /// `false` where a cached sample left the range of the transform.
    pub valid: Vec<Vec<bool>>,
}

impl FactorWeights {
    pub fn num_samples(&self) -> usize {
        self.log_base.len()
    }

    pub fn num_factors(&self) -> usize {
        self.log_jacobian.len()
    }

    /// Base-density weight `w_{s,m} = φ(ε')/φ(ε)`; 0 for invalid samples.
    pub fn weight(&self, m: usize, s: usize) -> f64 {
        if self.valid[m][s] {
            self.log_base[m][s].exp()
        } else {
            0.0
        }
    }

    /// Approximation-density ratio `q_{λ'}(z_S) / q_λ(z_S)`; 0 for invalid samples.
    pub fn density_ratio(&self, m: usize, s: usize) -> f64 {
        if self.valid[m][s] {
            (self.log_base[m][s] + self.log_jacobian[s]).exp()
        } else {
            0.0
        }
    }

    pub fn mean_weight(&self) -> f64 {
        let (m, s) = (self.num_samples(), self.num_factors());
        let total: f64 = (0..m)
            .flat_map(|i| (0..s).map(move |j| (i, j)))
            .map(|(i, j)| self.weight(i, j))
            .sum();
        total / (m * s) as f64
    }

    pub fn max_density_ratio(&self) -> f64 {
        (0..self.num_samples())
            .flat_map(|m| (0..self.num_factors()).map(move |s| (m, s)))
            .map(|(m, s)| self.density_ratio(m, s))
            .fold(0.0, f64::max)
    }

    pub fn any_invalid(&self) -> bool {
        self.valid.iter().flatten().any(|v| !v)
    }
}

fn check_compatible(cache: &SampleCache, new_params: &FactorizedApproxParams) -> Result<()> {
    let old = &cache.params_at_draw;
    if old.dim() != new_params.dim() {
        return Err(Error::DimensionMismatch {
            expected: old.dim(),
            actual: new_params.dim(),
        });
    }
    if !old.same_structure(new_params) {
        return Err(Error::InvalidPartition(
            "new parameters use a different layout or factor partition".into(),
        ));
    }
    Ok(())
}

/// Maps one cached sample to its base draw under `new_params`. Coordinates
/// whose parameters did not change keep the cached draw exactly.
fn remap(
    cache: &SampleCache,
    m: usize,
    new_params: &FactorizedApproxParams,
    unchanged: &[bool],
) -> Result<(EpsilonVector, Vec<bool>)> {
    let d = new_params.dim();
    if unchanged.iter().all(|&u| u) {
        return Ok((cache.eps[m].clone(), vec![true; d]));
    }
    let (mut eps, valid) = new_params.inverse_masked(&cache.z[m])?;
    for i in 0..d {
        if unchanged[i] && valid[i] {
            eps.0[i] = cache.eps[m][i];
        }
    }
    Ok((eps, valid))
}

/// Base draws `ε'_m` and per-factor weights for moving `cache` to `new_params`.
pub fn importance_weights(
    cache: &SampleCache,
    new_params: &FactorizedApproxParams,
) -> Result<(FactorWeights, Vec<EpsilonVector>)> {
    check_compatible(cache, new_params)?;
    let old = &cache.params_at_draw;
    let partition = new_params.partition();
    let d = new_params.dim();
    let unchanged: Vec<bool> = (0..d).map(|i| old.coordinate_unchanged(new_params, i)).collect();

    let log_jacobian = partition
        .groups()
        .iter()
        .map(|g| {
            g.iter()
                .map(|&i| old.log_scale()[i] - new_params.log_scale()[i])
                .sum()
        })
        .collect();

    let mut log_base = Vec::with_capacity(cache.num_samples());
    let mut valid_out = Vec::with_capacity(cache.num_samples());
    let mut eps_new = Vec::with_capacity(cache.num_samples());
    for m in 0..cache.num_samples() {
        let (eps, valid) = remap(cache, m, new_params, &unchanged)?;
        let mut row = Vec::with_capacity(partition.num_factors());
        let mut row_valid = Vec::with_capacity(partition.num_factors());
        for (s, group) in partition.groups().iter().enumerate() {
            let ok = group.iter().all(|&i| valid[i]);
            let new_log_phi: f64 = group.iter().map(|&i| log_std_normal(eps[i])).sum();
            row.push(if ok {
                new_log_phi - cache.log_phi[m][s]
            } else {
                f64::NEG_INFINITY
            });
            row_valid.push(ok);
        }
        log_base.push(row);
        valid_out.push(row_valid);
        eps_new.push(eps);
    }
    Ok((
        FactorWeights {
            log_base,
            log_jacobian,
            valid: valid_out,
        },
        eps_new,
    ))
}

/// Importance-sampled reparameterization gradient at `new_params` from a
/// cache drawn elsewhere. Never evaluates the model.
pub fn importance_gradient(
    cache: &SampleCache,
    new_params: &FactorizedApproxParams,
    cfg: &EstimatorConfig,
) -> Result<ReuseOutcome> {
    if !cache.has_model_gradients() {
        return Err(Error::MissingModelGradients);
    }
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
        let pull = new_params.reparam_pullback(&eps_new[m], &cache.grad_z[m])?;
        for i in 0..d {
            let r = weights.density_ratio(m, partition.factor_of(i));
            if r != 0.0 {
                gradient.0[i] += r * pull.0[i];
                gradient.0[d + i] += r * pull.0[d + i];
            }
        }
        let joint_log_ratio: f64 = (0..partition.num_factors())
            .map(|s| weights.log_base[m][s] + weights.log_jacobian[s])
            .sum();
        if weights.valid[m].iter().all(|&v| v) {
            let log_q = new_params.log_density_at(&eps_new[m])?;
            elbo += joint_log_ratio.exp() * (cache.logp[m] - log_q);
        }
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
