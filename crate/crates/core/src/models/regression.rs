use crate::approximation::{CoordinateLayout, TransformKind};
use crate::error::Result;
use crate::rng::SeededRng;

use super::{gamma_draw, gamma_log_pdf, normal_log_pdf, std_normal, Dataset, Model, HALF_LN_2PI};

/// `y_i ~ N(wᵀx_i, 1/τ)`, `w_j ~ N(0, s²)`, `τ ~ Gamma(a, b)`.
/// Latents are `[w_0 .. w_{D−1}, τ]`.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    dim: usize,
    weight_prior_sd: f64,
    shape: f64,
    rate: f64,
    layout: CoordinateLayout,
}

impl LinearRegression {
    pub fn new(dim: usize, weight_prior_sd: f64, shape: f64, rate: f64) -> Self {
        let layout = CoordinateLayout::new()
            .with(TransformKind::Identity, dim)
            .with(TransformKind::Softplus, 1);
        Self {
            dim,
            weight_prior_sd,
            shape,
            rate,
            layout,
        }
    }

    fn residual(&self, data: &Dataset, i: usize, w: &[f64]) -> f64 {
        let pred: f64 = data.row(i).iter().zip(w).map(|(x, w)| x * w).sum();
        data.target(i).unwrap_or(0.0) - pred
    }
}

impl Model for LinearRegression {
    fn latent_dim(&self) -> usize {
        self.dim + 1
    }

    fn layout(&self) -> &CoordinateLayout {
        &self.layout
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn log_prior(&self, z: &[f64]) -> f64 {
        let (w, tau) = z.split_at(self.dim);
        w.iter()
            .map(|&w| normal_log_pdf(w, 0.0, self.weight_prior_sd))
            .sum::<f64>()
            + gamma_log_pdf(tau[0], self.shape, self.rate)
    }

    fn add_grad_log_prior(&self, z: &[f64], out: &mut [f64]) {
        let v = self.weight_prior_sd * self.weight_prior_sd;
        for j in 0..self.dim {
            out[j] -= z[j] / v;
        }
        out[self.dim] += (self.shape - 1.0) / z[self.dim] - self.rate;
    }

    fn log_likelihood(&self, data: &Dataset, rows: &[usize], z: &[f64]) -> f64 {
        let (w, tau) = z.split_at(self.dim);
        let tau = tau[0];
        let sq: f64 = rows
            .iter()
            .map(|&i| self.residual(data, i, w).powi(2))
            .sum();
        rows.len() as f64 * (0.5 * tau.ln() - HALF_LN_2PI) - 0.5 * tau * sq
    }

    fn add_grad_log_likelihood(
        &self,
        data: &Dataset,
        rows: &[usize],
        z: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let (w, tau) = z.split_at(self.dim);
        let tau = tau[0];
        let mut sq = 0.0;
        for &i in rows {
            let r = self.residual(data, i, w);
            sq += r * r;
            for (o, x) in out[..self.dim].iter_mut().zip(data.row(i)) {
                *o += scale * tau * r * x;
            }
        }
        out[self.dim] += scale * (0.5 * rows.len() as f64 / tau - 0.5 * sq);
    }

    fn sample_latent(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.dim)
            .map(|_| self.weight_prior_sd * std_normal(rng))
            .collect();
        z.push(gamma_draw(rng, self.shape, self.rate));
        z
    }

    fn sample_data(&self, z: &[f64], n: usize, rng: &mut SeededRng) -> Result<Dataset> {
        let (w, tau) = z.split_at(self.dim);
        let noise_sd = 1.0 / tau[0].sqrt();
        let mut features = Vec::with_capacity(n * self.dim);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let start = features.len();
            features.extend((0..self.dim).map(|_| std_normal(rng)));
            let pred: f64 = features[start..].iter().zip(w).map(|(x, w)| x * w).sum();
            targets.push(pred + noise_sd * std_normal(rng));
        }
        Dataset::new(self.dim, features, Some(targets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{log_joint, MiniBatch};

    #[test]
    fn zero_residuals_give_normalizer_only() {
        let m = LinearRegression::new(2, 1.0, 2.0, 2.0);
        let n = 8;
        let data = Dataset::new(2, vec![0.7; 2 * n], Some(vec![0.0; n])).unwrap();
        let batch = MiniBatch::new(0, vec![1, 4], n).unwrap();
        let z = [0.0, 0.0, 1.0];
        let got = log_joint(&m, &data, &batch, &z).unwrap();
        let lik = (n as f64 / 2.0) * 2.0 * (-HALF_LN_2PI);
        let expect = lik + m.log_prior(&z);
        assert!((got - expect).abs() < 1e-12);
    }
}
