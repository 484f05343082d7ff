use isvi::approximation::{
    softplus, CoordinateLayout, EpsilonVector, FactorPartition, FactorizedApproxParams, LatentVector,
    TransformKind,
};
use isvi::models::{
    grad_log_joint, log_joint, make_synthetic, partition_batches, AnyModel, Dataset, MiniBatch, Model,
    ModelSpec,
};
use isvi::rng::seeded;
use proptest::prelude::*;

fn specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::DiagGaussianConjugate {
            dim: 3,
            mean_prior_sd: 1.0,
            precision_shape: 2.0,
            precision_rate: 2.0,
        },
        ModelSpec::BayesLinearRegression {
            dim: 3,
            weight_prior_sd: 1.0,
            precision_shape: 2.0,
            precision_rate: 2.0,
        },
        ModelSpec::PoissonGamma {
            dim: 2,
            shape: 2.0,
            rate: 0.5,
        },
        ModelSpec::Gmm {
            dim: 2,
            components: 3,
            mean_prior_sd: 3.0,
            obs_sd: 1.0,
            concentration: 1.0,
        },
        ModelSpec::ConjugateNormalKnownVariance {
            dim: 3,
            prior_mean: 0.5,
            prior_sd: 1.0,
            noise_sd: 1.0,
        },
    ]
}

/// Largest per-coordinate `|a − b| / max(|a|, |b|, 1)`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            let (mut up, mut down) = (x.to_vec(), x.to_vec());
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

fn setup(spec: &ModelSpec, seed: u64) -> (AnyModel, Dataset, MiniBatch) {
    let model = spec.build().unwrap();
    let data = make_synthetic(&model, &mut seeded(seed), 30).unwrap();
    let batch = partition_batches(data.len(), 7, Some(&mut seeded(seed + 1)))
        .unwrap()
        .swap_remove(0);
    (model, data, batch)
}

/// A point inside the model's domain, from unconstrained coordinates in
/// `[-1.5, 1.5]`.
fn latent(model: &AnyModel, raw: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = (0..model.latent_dim()).map(|i| raw[i % raw.len()] * (1.0 + 0.1 * i as f64)).collect();
    model.layout().constrain(&u).0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn grad_log_joint_matches_finite_differences(
        seed in 0u64..1000,
        raw in prop::collection::vec(-1.5f64..1.5, 8),
    ) {
        for spec in specs() {
            let (model, data, batch) = setup(&spec, seed);
            let z = latent(&model, &raw);
            let g = grad_log_joint(&model, &data, &batch, &z).unwrap();
            let fd = central_difference(|z| log_joint(&model, &data, &batch, z).unwrap(), &z);
            let err = rel_err(&g, &fd);
            prop_assert!(err <= 1e-6, "{spec:?}: rel err {err:e} at z = {z:?}");
        }
    }
}

fn layouts() -> Vec<CoordinateLayout> {
    vec![
        CoordinateLayout::identity(3),
        CoordinateLayout::new().with(TransformKind::Softplus, 3),
        CoordinateLayout::new().with(TransformKind::StickBreaking, 3),
        CoordinateLayout::new()
            .with(TransformKind::Identity, 1)
            .with(TransformKind::Softplus, 1)
            .with(TransformKind::StickBreaking, 2),
    ]
}

/// A smooth test log-density with a closed-form gradient.
fn toy_log_p(z: &[f64]) -> f64 {
    z.iter().enumerate().map(|(i, &v)| (0.3 + 0.2 * i as f64) * v - 0.5 * v * v + 0.1 * (v * (i as f64 + 1.0)).sin()).sum()
}

fn toy_grad(z: &[f64]) -> Vec<f64> {
    z.iter().enumerate().map(|(i, &v)| 0.3 + 0.2 * i as f64 - v + 0.1 * (i as f64 + 1.0) * (v * (i as f64 + 1.0)).cos()).collect()
}

fn params_from(layout: CoordinateLayout, theta: &[f64]) -> FactorizedApproxParams {
    let d = layout.dim();
    let mut p = FactorizedApproxParams::new(layout, FactorPartition::singletons(d).unwrap()).unwrap();
    p.values_mut().copy_from_slice(theta);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn reparam_pullback_matches_finite_differences(
        mu in prop::collection::vec(-1.0f64..1.0, 4),
        rho in prop::collection::vec(-1.5f64..0.3, 4),
        eps in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        for layout in layouts() {
            let d = layout.dim();
            let theta: Vec<f64> = mu[..d].iter().chain(&rho[..d]).copied().collect();
            let e = EpsilonVector(eps[..d].to_vec());
            let p = params_from(layout.clone(), &theta);
            let z = p.forward(&e).unwrap();
            let g = p.reparam_pullback(&e, &toy_grad(&z)).unwrap();
            let integrand = |t: &[f64]| {
                let q = params_from(layout.clone(), t);
                toy_log_p(&q.forward(&e).unwrap()) + q.log_det_jacobian(&e).unwrap()
            };
            let fd = central_difference(integrand, &theta);
            let err = rel_err(&g.0, &fd);
            prop_assert!(err <= 1e-5, "{layout:?}: rel err {err:e}");
        }
    }

    #[test]
    fn transforms_round_trip(
        mu in prop::collection::vec(-1.0f64..1.0, 4),
        rho in prop::collection::vec(-1.5f64..0.5, 4),
        eps in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        for layout in layouts() {
            let d = layout.dim();
            let theta: Vec<f64> = mu[..d].iter().chain(&rho[..d]).copied().collect();
            let p = params_from(layout, &theta);
            let e = EpsilonVector(eps[..d].to_vec());
            let back = p.inverse(&p.forward(&e).unwrap()).unwrap();
            for (a, b) in back.iter().zip(e.iter()) {
                prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn batch_log_joints_average_to_full(seed in 0u64..1000, raw in prop::collection::vec(-1.0f64..1.0, 8)) {
        for spec in specs() {
            let model = spec.build().unwrap();
            let data = make_synthetic(&model, &mut seeded(seed), 40).unwrap();
            let z = latent(&model, &raw);
            let batches = partition_batches(data.len(), 8, Some(&mut seeded(seed))).unwrap();
            let mean = batches.iter().map(|b| log_joint(&model, &data, b, &z).unwrap()).sum::<f64>()
                / batches.len() as f64;
            let full = log_joint(&model, &data, &MiniBatch::full(data.len()), &z).unwrap();
            prop_assert!((mean - full).abs() <= 1e-9 * full.abs().max(1.0), "{spec:?}: {mean} vs {full}");
        }
    }
}

fn single_count() -> (AnyModel, Dataset) {
    let model = ModelSpec::PoissonGamma {
        dim: 1,
        shape: 1.0,
        rate: 1.0,
    }
    .build()
    .unwrap();
    (model, Dataset::new(1, vec![1.0], None).unwrap())
}

#[test]
fn poisson_gamma_hand_values() {
    let (model, data) = single_count();
    let batch = MiniBatch::full(1);
    assert!((log_joint(&model, &data, &batch, &[1.0]).unwrap() + 2.0).abs() < 1e-12);
    assert!((grad_log_joint(&model, &data, &batch, &[1.0]).unwrap()[0] + 1.0).abs() < 1e-12);
}

#[test]
fn regression_with_zero_residuals() {
    let model = ModelSpec::BayesLinearRegression {
        dim: 2,
        weight_prior_sd: 1.0,
        precision_shape: 2.0,
        precision_rate: 2.0,
    }
    .build()
    .unwrap();
    let data = Dataset::new(2, vec![0.3, -1.0, 2.0, 0.5, -0.7, 0.1, 1.1, 1.2], Some(vec![0.0; 4])).unwrap();
    let z = [0.0, 0.0, 1.0];
    let batch = MiniBatch::new(0, vec![1, 3], 4).unwrap();
    let lik = 2.0 * 2.0 * -0.5 * (2.0 * std::f64::consts::PI).ln();
    let prior = model.log_prior(&z);
    assert!((log_joint(&model, &data, &batch, &z).unwrap() - (lik + prior)).abs() < 1e-12);
}

#[test]
fn conjugate_normal_prior_only_and_stationary_at_posterior_mean() {
    let spec = ModelSpec::ConjugateNormalKnownVariance {
        dim: 2,
        prior_mean: 0.7,
        prior_sd: 2.0,
        noise_sd: 1.5,
    };
    let AnyModel::ConjugateNormal(m) = spec.build().unwrap() else {
        unreachable!()
    };
    let model = AnyModel::ConjugateNormal(m.clone());
    let data = make_synthetic(&model, &mut seeded(9), 50).unwrap();

    let mode = -2.0 * (2.0f64 * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let at_prior = log_joint(&model, &data, &MiniBatch::prior_only(0), &[0.7, 0.7]).unwrap();
    assert!((at_prior - mode).abs() < 1e-12);

    let post = m.posterior(&data);
    let g = grad_log_joint(&model, &data, &MiniBatch::full(data.len()), &post.mean).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-8), "{g:?}");
}

#[test]
fn synthetic_conjugate_data_centers_on_truth() {
    let model = ModelSpec::ConjugateNormalKnownVariance {
        dim: 1,
        prior_mean: 0.0,
        prior_sd: 1.0,
        noise_sd: 1.0,
    }
    .build()
    .unwrap();
    let n = 100_000;
    let data = make_synthetic(&model, &mut seeded(4), n).unwrap();
    let truth = data.truth.clone().unwrap()[0];
    let mean = (0..n).map(|i| data.row(i)[0]).sum::<f64>() / n as f64;
    assert!((mean - truth).abs() < 4.0 / (n as f64).sqrt());

    let again = make_synthetic(&model, &mut seeded(4), n).unwrap();
    assert_eq!(data.row(12345), again.row(12345));
    assert!(make_synthetic(&model, &mut seeded(4), 0).is_err());
}

#[test]
fn softplus_latent_is_positive() {
    let layout = CoordinateLayout::new().with(TransformKind::Softplus, 1);
    let p = params_from(layout, &[-30.0, 0.0]);
    let z = p.forward(&EpsilonVector(vec![0.0])).unwrap();
    assert!(z[0] > 0.0 && (z[0] - softplus(-30.0)).abs() < 1e-25);
    assert!(p.inverse(&LatentVector(vec![-1.0])).is_err());
}
