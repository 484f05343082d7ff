#![allow(dead_code)]

use isvi::approximation::{CoordinateLayout, FactorPartition, FactorizedApproxParams};
use isvi::models::{AnyModel, Dataset, ModelSpec};
use statrs::function::erf::erfc;

/// `log p(z) = Σ log N(z_i; 1, 1)`: the conjugate-normal model seen through
/// a prior-only batch.
pub fn unit_gaussian_target(dim: usize) -> (AnyModel, Dataset) {
    let model = ModelSpec::ConjugateNormalKnownVariance {
        dim,
        prior_mean: 1.0,
        prior_sd: 1.0,
        noise_sd: 1.0,
    }
    .build()
    .unwrap();
    let data = Dataset::new(dim, vec![0.0; dim], None).unwrap();
    (model, data)
}

pub fn identity_params(location: &[f64], log_scale: &[f64]) -> FactorizedApproxParams {
    let d = location.len();
    let mut p = FactorizedApproxParams::new(CoordinateLayout::identity(d), FactorPartition::singletons(d).unwrap())
        .unwrap();
    p.location_mut().copy_from_slice(location);
    p.log_scale_mut().copy_from_slice(log_scale);
    p
}

/// Per-column mean and standard error of the mean.
pub fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let k = rows[0].len();
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let se = (0..k)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    (mean, se)
}

/// Whether two sets of replicates agree within `k` combined standard errors
/// in every column; returns the worst `|Δ| / se`.
pub fn agree_within(a: &[Vec<f64>], b: &[Vec<f64>], k: f64) -> (bool, f64) {
    let (ma, sa) = column_stats(a);
    let (mb, sb) = column_stats(b);
    let worst = (0..ma.len())
        .map(|j| (ma[j] - mb[j]).abs() / sa[j].hypot(sb[j]))
        .fold(0.0, f64::max);
    (worst <= k, worst)
}

/// Kendall's tau between `values` and their positions, with the normal
/// approximation p-value for a one-sided test of a positive trend.
pub fn kendall_trend(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match values[j].partial_cmp(&values[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let nf = n as f64;
    let pairs = nf * (nf - 1.0) / 2.0;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = s as f64 / var.sqrt();
    let p = 0.5 * erfc(z / std::f64::consts::SQRT_2);
    (s as f64 / pairs, p)
}
