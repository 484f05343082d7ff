use rand_distr::Distribution;
use statrs::function::factorial::ln_factorial;

use crate::approximation::{CoordinateLayout, TransformKind};
use crate::error::Result;
use crate::rng::SeededRng;

use super::{gamma_draw, gamma_log_pdf, Dataset, Model};

/// Counts `x_id ~ Poisson(λ_d)` with `λ_d ~ Gamma(a, b)`.
#[derive(Debug, Clone)]
pub struct PoissonGamma {
    dim: usize,
    shape: f64,
    rate: f64,
    layout: CoordinateLayout,
}

impl PoissonGamma {
    pub fn new(dim: usize, shape: f64, rate: f64) -> Self {
        Self {
            dim,
            shape,
            rate,
            layout: CoordinateLayout::new().with(TransformKind::Softplus, dim),
        }
    }
}

impl Model for PoissonGamma {
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
        z.iter().map(|&l| gamma_log_pdf(l, self.shape, self.rate)).sum()
    }

    fn add_grad_log_prior(&self, z: &[f64], out: &mut [f64]) {
        for (o, &l) in out.iter_mut().zip(z) {
            *o += (self.shape - 1.0) / l - self.rate;
        }
    }

    fn log_likelihood(&self, data: &Dataset, rows: &[usize], z: &[f64]) -> f64 {
        let log_rate: Vec<f64> = z.iter().map(|l| l.ln()).collect();
        let mut total = 0.0;
        for &i in rows {
            for (j, &x) in data.row(i).iter().enumerate() {
                total += x * log_rate[j] - z[j] - ln_factorial(x as u64);
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
        let mut sum = vec![0.0; self.dim];
        for &i in rows {
            for (s, x) in sum.iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        let n = rows.len() as f64;
        for j in 0..self.dim {
            out[j] += scale * (sum[j] / z[j] - n);
        }
    }

    fn sample_latent(&self, rng: &mut SeededRng) -> Vec<f64> {
        (0..self.dim)
            .map(|_| gamma_draw(rng, self.shape, self.rate))
            .collect()
    }

    fn sample_data(&self, z: &[f64], n: usize, rng: &mut SeededRng) -> Result<Dataset> {
        let dists: Vec<_> = z
            .iter()
            .map(|&l| rand_distr::Poisson::new(l).expect("positive rate"))
            .collect();
        let mut features = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            for d in &dists {
                features.push(d.sample(rng));
            }
        }
        Ok(Dataset::new(self.dim, features, None)?.with_prefix("count"))
    }
}
