use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::approximation::{CoordinateLayout, TransformKind};
use crate::error::Result;
use crate::rng::SeededRng;

use super::{gamma_draw, normal_log_pdf, std_normal, Dataset, Model, HALF_LN_2PI};

/// Isotropic Gaussian mixture with known component scale.
///
/// Latents are the `K × D` component means (row-major by component) followed
/// by the first `K − 1` mixture weights; the last weight is `1 − Σ π_k`.
/// Priors: `m_k ~ N(0, s₀² I)`, `π ~ Dirichlet(α, …, α)`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    k: usize,
    mean_prior_sd: f64,
    obs_sd: f64,
    concentration: f64,
    layout: CoordinateLayout,
}

impl GaussianMixture {
    pub fn new(dim: usize, k: usize, mean_prior_sd: f64, obs_sd: f64, concentration: f64) -> Self {
        let layout = CoordinateLayout::new()
            .with(TransformKind::Identity, k * dim)
            .with(TransformKind::StickBreaking, k - 1);
        Self {
            dim,
            k,
            mean_prior_sd,
            obs_sd,
            concentration,
            layout,
        }
    }

    fn weights(&self, z: &[f64]) -> Vec<f64> {
        let mut w = z[self.k * self.dim..].to_vec();
        let last = 1.0 - w.iter().sum::<f64>();
        w.push(last);
        w
    }

    /// Per-component `log π_k + log N(x; m_k, s² I)` for one row.
    fn component_terms(&self, x: &[f64], z: &[f64], log_w: &[f64], out: &mut [f64]) {
        let v = self.obs_sd * self.obs_sd;
        let norm = -(self.dim as f64) * (self.obs_sd.ln() + HALF_LN_2PI);
        for k in 0..self.k {
            let m = &z[k * self.dim..(k + 1) * self.dim];
            let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            out[k] = log_w[k] + norm - 0.5 * sq / v;
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|a| (a - max).exp()).sum::<f64>().ln()
}

impl Model for GaussianMixture {
    fn latent_dim(&self) -> usize {
        self.k * self.dim + self.k - 1
    }

    fn layout(&self) -> &CoordinateLayout {
        &self.layout
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        let kd = self.k * self.dim;
        let means: f64 = z[..kd]
            .iter()
            .map(|&m| normal_log_pdf(m, 0.0, self.mean_prior_sd))
            .sum();
        let a = self.concentration;
        let k = self.k as f64;
        let dirichlet = ln_gamma(k * a) - k * ln_gamma(a)
            + (a - 1.0) * self.weights(z).iter().map(|w| w.ln()).sum::<f64>();
        means + dirichlet
    }

    fn add_grad_log_prior(&self, z: &[f64], out: &mut [f64]) {
        let kd = self.k * self.dim;
        let v = self.mean_prior_sd * self.mean_prior_sd;
        for i in 0..kd {
            out[i] -= z[i] / v;
        }
        let w = self.weights(z);
        let last = w[self.k - 1];
        for j in 0..self.k - 1 {
            out[kd + j] += (self.concentration - 1.0) * (1.0 / w[j] - 1.0 / last);
        }
    }

    fn log_likelihood(&self, data: &Dataset, rows: &[usize], z: &[f64]) -> f64 {
        let log_w: Vec<f64> = self.weights(z).iter().map(|w| w.ln()).collect();
        let mut terms = vec![0.0; self.k];
        rows.iter()
            .map(|&i| {
                self.component_terms(data.row(i), z, &log_w, &mut terms);
                log_sum_exp(&terms)
            })
            .sum()
    }

    fn add_grad_log_likelihood(
        &self,
        data: &Dataset,
        rows: &[usize],
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let kd = self.k * self.dim;
        let v = self.obs_sd * self.obs_sd;
        let w = self.weights(z);
        let log_w: Vec<f64> = w.iter().map(|w| w.ln()).collect();
        let mut terms = vec![0.0; self.k];
        let mut resp_sum = vec![0.0; self.k];
        for &i in rows {
            let x = data.row(i);
            self.component_terms(x, z, &log_w, &mut terms);
            let lse = log_sum_exp(&terms);
            for k in 0..self.k {
                let r = (terms[k] - lse).exp();
                resp_sum[k] += r;
                for j in 0..self.dim {
                    let idx = k * self.dim + j;
                    out[idx] += scale * r * (x[j] - z[idx]) / v;
                }
            }
        }
        let last = self.k - 1;
        for j in 0..last {
            out[kd + j] += scale * (resp_sum[j] / w[j] - resp_sum[last] / w[last]);
        }
    }

    fn sample_latent(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.k * self.dim)
            .map(|_| self.mean_prior_sd * std_normal(rng))
            .collect();
        let g: Vec<f64> = (0..self.k)
            .map(|_| gamma_draw(rng, self.concentration, 1.0).max(1e-12))
            .collect();
        let total: f64 = g.iter().sum();
        z.extend(g[..self.k - 1].iter().map(|x| x / total));
        z
    }

    fn sample_data(&self, z: &[f64], n: usize, rng: &mut SeededRng) -> Result<Dataset> {
        let w = self.weights(z);
        let mut features = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = self.k - 1;
            for (k, wk) in w.iter().enumerate() {
                acc += wk;
                if u < acc {
                    comp = k;
                    break;
                }
            }
            for j in 0..self.dim {
                features.push(z[comp * self.dim + j] + self.obs_sd * std_normal(rng));
            }
        }
        Dataset::new(self.dim, features, None)
    }
}
