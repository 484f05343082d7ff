use crate::approximation::{CoordinateLayout, TransformKind};
use crate::error::Result;
use crate::rng::SeededRng;

use super::{gamma_draw, gamma_log_pdf, normal_log_pdf, std_normal, Dataset, Model, HALF_LN_2PI};

/// `x_id ~ N(μ_d, 1/τ_d)`, `μ_d ~ N(0, s²)`, `τ_d ~ Gamma(a, b)`.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    dim: usize,
    mean_prior_sd: f64,
    shape: f64,
    rate: f64,
    layout: CoordinateLayout,
}

impl DiagGaussian {
    pub fn new(dim: usize, mean_prior_sd: f64, shape: f64, rate: f64) -> Self {
        let layout = CoordinateLayout::new()
            .with(TransformKind::Identity, dim)
            .with(TransformKind::Softplus, dim);
        Self {
            dim,
            mean_prior_sd,
            shape,
            rate,
            layout,
        }
    }
}

impl Model for DiagGaussian {
    fn latent_dim(&self) -> usize {
        2 * self.dim
    }

    fn layout(&self) -> &CoordinateLayout {
        &self.layout
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        let (mu, tau) = z.split_at(self.dim);
        mu.iter()
            .map(|&m| normal_log_pdf(m, 0.0, self.mean_prior_sd))
            .chain(tau.iter().map(|&t| gamma_log_pdf(t, self.shape, self.rate)))
            .sum()
    }

    fn add_grad_log_prior(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let v = self.mean_prior_sd * self.mean_prior_sd;
        for j in 0..d {
            out[j] -= z[j] / v;
            out[d + j] += (self.shape - 1.0) / z[d + j] - self.rate;
        }
    }

    fn log_likelihood(&self, data: &Dataset, rows: &[usize], z: &[f64]) -> f64 {
        let (mu, tau) = z.split_at(self.dim);
        let norm: f64 = tau.iter().map(|t| 0.5 * t.ln() - HALF_LN_2PI).sum();
        let mut total = norm * rows.len() as f64;
        for &i in rows {
            for (j, &x) in data.row(i).iter().enumerate() {
                let r = x - mu[j];
                total -= 0.5 * tau[j] * r * r;
            }
        }
        total
    }

    fn add_grad_log_likelihood(
        &self,
        data: &Dataset,
        rows: &[usize],
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let d = self.dim;
        let (mu, tau) = z.split_at(d);
        let mut sum_r = vec![0.0; d];
        let mut sum_r2 = vec![0.0; d];
        for &i in rows {
            for (j, &x) in data.row(i).iter().enumerate() {
                let r = x - mu[j];
                sum_r[j] += r;
                sum_r2[j] += r * r;
            }
        }
        let n = rows.len() as f64;
        for j in 0..d {
            out[j] += scale * tau[j] * sum_r[j];
            out[d + j] += scale * (0.5 * n / tau[j] - 0.5 * sum_r2[j]);
        }
    }

    fn sample_latent(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.dim)
            .map(|_| self.mean_prior_sd * std_normal(rng))
            .collect();
        z.extend((0..self.dim).map(|_| gamma_draw(rng, self.shape, self.rate)));
        z
    }

    fn sample_data(&self, z: &[f64], n: usize, rng: &mut SeededRng) -> Result<Dataset> {
        let (mu, tau) = z.split_at(self.dim);
        let mut features = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            for j in 0..self.dim {
                features.push(mu[j] + std_normal(rng) / tau[j].sqrt());
            }
        }
        Dataset::new(self.dim, features, None)
    }
}

/// `x_id ~ N(μ_d, σ²)` with known `σ`, `μ_d ~ N(m₀, s₀²)`.
///
/// The posterior is Gaussian with a closed form, which makes this the
/// reference model for checking optimizers end to end.
#[derive(Debug, Clone)]
pub struct ConjugateNormal {
    dim: usize,
    prior_mean: f64,
    prior_sd: f64,
    noise_sd: f64,
    layout: CoordinateLayout,
}

/// Closed-form posterior of [`ConjugateNormal`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalPosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl ConjugateNormal {
    pub fn new(dim: usize, prior_mean: f64, prior_sd: f64, noise_sd: f64) -> Self {
        Self {
            dim,
            prior_mean,
            prior_sd,
            noise_sd,
            layout: CoordinateLayout::identity(dim),
        }
    }

    pub fn posterior(&self, data: &Dataset) -> NormalPosterior {
        let n = data.len() as f64;
        let (v0, vn) = (self.prior_sd.powi(2), self.noise_sd.powi(2));
        let precision = 1.0 / v0 + n / vn;
        let mut mean = vec![0.0; self.dim];
        for i in 0..data.len() {
            for (j, x) in data.row(i).iter().enumerate() {
                mean[j] += x;
            }
        }
        for m in &mut mean {
            *m = (self.prior_mean / v0 + *m / vn) / precision;
        }
        NormalPosterior {
            mean,
            variance: vec![1.0 / precision; self.dim],
        }
    }

    /// `log p(x)`, from `log p(x, μ) − log p(μ | x)` at the posterior mean.
    pub fn log_evidence(&self, data: &Dataset) -> f64 {
        let post = self.posterior(data);
        let rows: Vec<usize> = (0..data.len()).collect();
        let joint = self.log_likelihood(data, &rows, &post.mean) + self.log_prior(&post.mean);
        let at_mode: f64 = post
            .variance
            .iter()
            .map(|v| normal_log_pdf(0.0, 0.0, v.sqrt()))
            .sum();
        joint - at_mode
    }
}

impl Model for ConjugateNormal {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn layout(&self) -> &CoordinateLayout {
        &self.layout
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        z.iter()
            .map(|&m| normal_log_pdf(m, self.prior_mean, self.prior_sd))
            .sum()
    }

    fn add_grad_log_prior(&self, z: &[f64], out: &mut [f64]) {
        let v = self.prior_sd * self.prior_sd;
        for (o, &m) in out.iter_mut().zip(z) {
            *o -= (m - self.prior_mean) / v;
        }
    }

    fn log_likelihood(&self, data: &Dataset, rows: &[usize], z: &[f64]) -> f64 {
        let v = self.noise_sd * self.noise_sd;
        let norm = -(self.noise_sd.ln() + HALF_LN_2PI) * (self.dim * rows.len()) as f64;
        let mut sq = 0.0;
        for &i in rows {
            for (x, m) in data.row(i).iter().zip(z) {
                sq += (x - m) * (x - m);
            }
        }
        norm - 0.5 * sq / v
    }

    fn add_grad_log_likelihood(
        &self,
        data: &Dataset,
        rows: &[usize],
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let v = self.noise_sd * self.noise_sd;
        let mut sum_r = vec![0.0; self.dim];
        for &i in rows {
            for (j, (x, m)) in data.row(i).iter().zip(z).enumerate() {
                sum_r[j] += x - m;
            }
        }
        for (o, r) in out.iter_mut().zip(sum_r) {
            *o += scale * r / v;
        }
    }

    fn sample_latent(&self, rng: &mut SeededRng) -> Vec<f64> {
        (0..self.dim)
            .map(|_| self.prior_mean + self.prior_sd * std_normal(rng))
            .collect()
    }

    fn sample_data(&self, z: &[f64], n: usize, rng: &mut SeededRng) -> Result<Dataset> {
        let mut features = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            for &m in z {
                features.push(m + self.noise_sd * std_normal(rng));
            }
        }
        Dataset::new(self.dim, features, None)
    }
}
