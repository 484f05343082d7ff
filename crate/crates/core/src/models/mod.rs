//! Differentiable target models.
//!
//! Every model exposes the mini-batch-scaled log-joint
//! `(N / |b|) Σ_{i∈b} log p(x_i | z) + log p(z)` and its exact gradient in
//! `z`. Constrained latents (precisions, rates, mixture weights) are received
//! in their constrained form; the approximation's transforms keep them valid.

mod data;
mod gaussian;
mod mixture;
mod poisson;
mod regression;
mod target;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximation::CoordinateLayout;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub use data::{partition_batches, Dataset, MiniBatch};
pub use gaussian::{ConjugateNormal, DiagGaussian};
pub use mixture::GaussianMixture;
pub use poisson::PoissonGamma;
pub use regression::LinearRegression;
pub use target::{CounterSnapshot, EvalCounters, Target};

pub(crate) const HALF_LN_2PI: f64 = crate::approximation::HALF_LN_2PI;

pub(crate) fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -0.5 * r * r - sd.ln() - HALF_LN_2PI
}

pub(crate) fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * x.ln()
        - rate * x
}

/// A probabilistic model `p(x, z)` over a fixed latent layout.
pub trait Model: Send + Sync {
    fn latent_dim(&self) -> usize;

    /// Transform applied to each latent coordinate by the approximation.
    fn layout(&self) -> &CoordinateLayout;

    /// Number of feature columns a compatible dataset has.
    fn data_dim(&self) -> usize;

    fn log_prior(&self, z: &[f64]) -> f64;

    /// Adds `∇_z log p(z)` into `out`.
    fn add_grad_log_prior(&self, z: &[f64], out: &mut [f64]);

    /// `Σ_{i∈rows} log p(x_i | z)`.
    fn log_likelihood(&self, data: &Dataset, rows: &[usize], z: &[f64]) -> f64;

    /// Adds `scale · Σ_{i∈rows} ∇_z log p(x_i | z)` into `out`.
    fn add_grad_log_likelihood(
        &self,
        data: &Dataset,
        rows: &[usize],
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    );

    /// Draws ground-truth latents from the prior.
    fn sample_latent(&self, rng: &mut SeededRng) -> Vec<f64>;

    /// Draws `n` records given the latents.
    fn sample_data(&self, z: &[f64], n: usize, rng: &mut SeededRng) -> Result<Dataset>;
}

fn check_z<M: Model + ?Sized>(model: &M, data: &Dataset, z: &[f64]) -> Result<()> {
    if z.len() != model.latent_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.latent_dim(),
            actual: z.len(),
        });
    }
    if data.dim() != model.data_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.data_dim(),
            actual: data.dim(),
        });
    }
    model.layout().check_latent(z).map_err(|e| match e {
        Error::OutOfRange { index, value } => Error::InvalidDomain { index, value },
        other => other,
    })
}

/// `(N / |b|) Σ_{i∈b} log p(x_i | z) + log p(z)`.
pub fn log_joint<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    batch: &MiniBatch,
    z: &[f64],
) -> Result<f64> {
    check_z(model, data, z)?;
    let mut value = model.log_prior(z);
    if !batch.is_prior_only() {
        value += batch.scale(data.len()) * model.log_likelihood(data, batch.indices(), z);
    }
    Ok(value)
}

/// Exact gradient of [`log_joint`] with respect to `z`.
pub fn grad_log_joint<M: Model + ?Sized>(
    model: &M,
    data: &Dataset,
    batch: &MiniBatch,
    z: &[f64],
) -> Result<Vec<f64>> {
    check_z(model, data, z)?;
    let mut out = vec![0.0; z.len()];
    model.add_grad_log_prior(z, &mut out);
    if !batch.is_prior_only() {
        let scale = batch.scale(data.len());
        model.add_grad_log_likelihood(data, batch.indices(), z, scale, &mut out);
    }
    Ok(out)
}

/// Draws latents from the prior and `n` records from the likelihood.
pub fn make_synthetic<M: Model + ?Sized>(
    model: &M,
    rng: &mut SeededRng,
    n: usize,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Dataset("n must be ≥ 1".into()));
    }
    let truth = model.sample_latent(rng);
    let mut data = model.sample_data(&truth, n, rng)?;
    data.truth = Some(truth);
    Ok(data)
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

/// User-facing model choice with hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Diagonal Gaussian with a normal prior on each mean and a Gamma prior
    /// on each precision. Latents: `dim` means then `dim` precisions.
    DiagGaussianConjugate {
        dim: usize,
        #[serde(default = "one")]
        mean_prior_sd: f64,
        #[serde(default = "two")]
        precision_shape: f64,
        #[serde(default = "two")]
        precision_rate: f64,
    },
    /// Linear regression with normal priors on the weights and a Gamma prior
    /// on the noise precision. Latents: `dim` weights then the precision.
    BayesLinearRegression {
        dim: usize,
        #[serde(default = "one")]
        weight_prior_sd: f64,
        #[serde(default = "two")]
        precision_shape: f64,
        #[serde(default = "two")]
        precision_rate: f64,
    },
    /// Independent Poisson counts per column with Gamma priors on the rates.
    PoissonGamma {
        #[serde(default = "one_usize")]
        dim: usize,
        #[serde(default = "two")]
        shape: f64,
        #[serde(default = "half")]
        rate: f64,
    },
    /// Isotropic Gaussian mixture with known component scale. Latents:
    /// `components × dim` means then `components − 1` stick-broken weights.
    Gmm {
        dim: usize,
        components: usize,
        #[serde(default = "three")]
        mean_prior_sd: f64,
        #[serde(default = "one")]
        obs_sd: f64,
        #[serde(default = "one")]
        concentration: f64,
    },
    /// Normal likelihood with known noise and a normal prior on the mean.
    ConjugateNormalKnownVariance {
        dim: usize,
        #[serde(default)]
        prior_mean: f64,
        #[serde(default = "one")]
        prior_sd: f64,
        #[serde(default = "one")]
        noise_sd: f64,
    },
}

fn one_usize() -> usize {
    1
}
fn half() -> f64 {
    0.5
}
fn three() -> f64 {
    3.0
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("model.{field}"), format!("must be > 0, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::config(format!("model.{field}"), "must be ≥ 1"))
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<AnyModel> {
        Ok(match *self {
            ModelSpec::DiagGaussianConjugate {
                dim,
                mean_prior_sd,
                precision_shape,
                precision_rate,
            } => {
                at_least_one("dim", dim)?;
                positive("mean_prior_sd", mean_prior_sd)?;
                positive("precision_shape", precision_shape)?;
                positive("precision_rate", precision_rate)?;
                AnyModel::DiagGaussian(DiagGaussian::new(
                    dim,
                    mean_prior_sd,
                    precision_shape,
                    precision_rate,
                ))
            }
            ModelSpec::BayesLinearRegression {
                dim,
                weight_prior_sd,
                precision_shape,
                precision_rate,
            } => {
                at_least_one("dim", dim)?;
                positive("weight_prior_sd", weight_prior_sd)?;
                positive("precision_shape", precision_shape)?;
                positive("precision_rate", precision_rate)?;
                AnyModel::Regression(LinearRegression::new(
                    dim,
                    weight_prior_sd,
                    precision_shape,
                    precision_rate,
                ))
            }
            ModelSpec::PoissonGamma { dim, shape, rate } => {
                at_least_one("dim", dim)?;
                positive("shape", shape)?;
                positive("rate", rate)?;
                AnyModel::Poisson(PoissonGamma::new(dim, shape, rate))
            }
            ModelSpec::Gmm {
                dim,
                components,
                mean_prior_sd,
                obs_sd,
                concentration,
            } => {
                at_least_one("dim", dim)?;
                if components < 2 {
                    return Err(Error::config("model.components", "must be ≥ 2"));
                }
                positive("mean_prior_sd", mean_prior_sd)?;
                positive("obs_sd", obs_sd)?;
                positive("concentration", concentration)?;
                AnyModel::Mixture(GaussianMixture::new(
                    dim,
                    components,
                    mean_prior_sd,
                    obs_sd,
                    concentration,
                ))
            }
            ModelSpec::ConjugateNormalKnownVariance {
                dim,
                prior_mean,
                prior_sd,
                noise_sd,
            } => {
                at_least_one("dim", dim)?;
                if !prior_mean.is_finite() {
                    return Err(Error::config("model.prior_mean", "must be finite"));
                }
                positive("prior_sd", prior_sd)?;
                positive("noise_sd", noise_sd)?;
                AnyModel::ConjugateNormal(ConjugateNormal::new(dim, prior_mean, prior_sd, noise_sd))
            }
        })
    }
}

/// Closed set of the models above.
#[derive(Debug, Clone)]
pub enum AnyModel {
    DiagGaussian(DiagGaussian),
    Regression(LinearRegression),
    Poisson(PoissonGamma),
    Mixture(GaussianMixture),
    ConjugateNormal(ConjugateNormal),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $body:expr) => {
        match $self {
            AnyModel::DiagGaussian($m) => $body,
            AnyModel::Regression($m) => $body,
            AnyModel::Poisson($m) => $body,
            AnyModel::Mixture($m) => $body,
            AnyModel::ConjugateNormal($m) => $body,
        }
    };
}

impl Model for AnyModel {
    fn latent_dim(&self) -> usize {
        dispatch!(self, m => m.latent_dim())
    }
    fn layout(&self) -> &CoordinateLayout {
        dispatch!(self, m => m.layout())
    }
    fn data_dim(&self) -> usize {
        dispatch!(self, m => m.data_dim())
    }
    fn log_prior(&self, z: &[f64]) -> f64 {
        dispatch!(self, m => m.log_prior(z))
    }
    fn add_grad_log_prior(&self, z: &[f64], out: &mut [f64]) {
        dispatch!(self, m => m.add_grad_log_prior(z, out))
    }
    fn log_likelihood(&self, data: &Dataset, rows: &[usize], z: &[f64]) -> f64 {
        dispatch!(self, m => m.log_likelihood(data, rows, z))
    }
    fn add_grad_log_likelihood(
        &self,
        data: &Dataset,
        rows: &[usize],
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        dispatch!(self, m => m.add_grad_log_likelihood(data, rows, z, scale, out))
    }
    fn sample_latent(&self, rng: &mut SeededRng) -> Vec<f64> {
        dispatch!(self, m => m.sample_latent(rng))
    }
    fn sample_data(&self, z: &[f64], n: usize, rng: &mut SeededRng) -> Result<Dataset> {
        dispatch!(self, m => m.sample_data(z, n, rng))
    }
}

/// Standard normal draw, shared by the samplers.
pub(crate) fn std_normal(rng: &mut SeededRng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

pub(crate) fn gamma_draw(rng: &mut SeededRng, shape: f64, rate: f64) -> f64 {
    use rand_distr::Distribution;
    rand_distr::Gamma::new(shape, 1.0 / rate)
        .expect("validated hyperparameters")
        .sample(rng)
}
