mod common;

use common::{agree_within, column_stats, identity_params, unit_gaussian_target};
use isvi::approximation::{
    log_std_normal, sample_epsilon, CoordinateLayout, EpsilonVector, FactorPartition, FactorizedApproxParams,
    LatentVector, TransformKind,
};
use isvi::estimators::{
    importance_gradient, importance_score_gradient, importance_weights, reparam_gradient, score_gradient,
    EstimatorConfig, EstimatorKind, ReuseOutcome, SampleCache,
};
use isvi::models::{make_synthetic, EvalCounters, MiniBatch, ModelSpec, Target};
use isvi::rng::seeded;
use proptest::prelude::*;

/// A one-sample cache drawn at `params` with base draw `eps`; the model
/// quantities are placeholders.
fn cache_at(params: &FactorizedApproxParams, eps: &[f64]) -> SampleCache {
    let e = EpsilonVector(eps.to_vec());
    SampleCache {
        z: vec![params.forward(&e).unwrap()],
        log_phi: vec![params.base_log_density_per_factor(&e).unwrap()],
        eps: vec![e],
        grad_z: vec![vec![0.0; eps.len()]],
        logp: vec![0.0],
        batch_id: 0,
        params_at_draw: params.clone(),
    }
}

#[test]
fn weight_after_location_shift() {
    let cache = cache_at(&identity_params(&[0.0], &[0.0]), &[0.0]);
    let (w, eps_new) = importance_weights(&cache, &identity_params(&[0.5], &[0.0])).unwrap();
    assert!((eps_new[0][0] + 0.5).abs() < 1e-15);
    assert!((w.weight(0, 0) - 0.882497).abs() < 1e-6);
}

#[test]
fn weight_after_scale_change() {
    let cache = cache_at(&identity_params(&[0.0], &[0.0]), &[1.0]);
    let (w, eps_new) = importance_weights(&cache, &identity_params(&[0.0], &[2f64.ln()])).unwrap();
    assert!((eps_new[0][0] - 0.5).abs() < 1e-15);
    assert!((w.weight(0, 0) - 1.454991).abs() < 1e-6);
    // q'(z)/q(z) carries the extra σ/σ' = 1/2
    assert!((w.density_ratio(0, 0) - 1.454991 / 2.0).abs() < 1e-6);
}

#[test]
fn unchanged_parameters_give_unit_weights() {
    let p = identity_params(&[0.3, -1.0], &[-0.2, 0.4]);
    let cache = cache_at(&p, &[0.7, -2.1]);
    let (w, eps_new) = importance_weights(&cache, &p).unwrap();
    assert_eq!(eps_new[0].0, vec![0.7, -2.1]);
    assert!((0..2).all(|s| w.weight(0, s) == 1.0 && w.density_ratio(0, s) == 1.0));
}

fn fresh_and_reused(kind: EstimatorKind, seed: u64) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let model = ModelSpec::DiagGaussianConjugate {
        dim: 3,
        mean_prior_sd: 1.0,
        precision_shape: 2.0,
        precision_rate: 2.0,
    }
    .build()
    .unwrap();
    let data = make_synthetic(&model, &mut seeded(seed), 40).unwrap();
    let counters = EvalCounters::default();
    let target = Target::new(&model, &data, &counters);
    let layout = CoordinateLayout::identity(3).with(TransformKind::Softplus, 3);
    let mut params = FactorizedApproxParams::new(layout, FactorPartition::chunks(6, 4).unwrap()).unwrap();
    for (i, v) in params.values_mut().iter_mut().enumerate() {
        *v = 0.1 * i as f64 - 0.4;
    }
    let cfg = EstimatorConfig {
        num_samples: 7,
        ..Default::default()
    };
    let batch = MiniBatch::new(3, (0..10).collect(), data.len()).unwrap();
    let fresh = kind.fresh(&params, &target, &batch, &cfg, &mut seeded(seed)).unwrap();
    let ReuseOutcome::Accepted(reused) = kind.reuse(&fresh.cache, &params, &cfg).unwrap() else {
        panic!("reuse at unchanged parameters was refused")
    };
    (fresh.gradient.0, reused.gradient.0, fresh.elbo, reused.elbo)
}

#[test]
fn identity_reuse_reproduces_fresh_estimates() {
    for kind in [EstimatorKind::Reparam, EstimatorKind::Score] {
        for seed in 0..20 {
            let (fresh, reused, e_fresh, e_reused) = fresh_and_reused(kind, seed);
            for (a, b) in fresh.iter().zip(&reused) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{kind:?}: {a} vs {b}");
            }
            assert!((e_fresh - e_reused).abs() <= 1e-12 * e_fresh.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn factor_weight_is_product_of_coordinate_weights(
        theta in prop::collection::vec(-1.0f64..1.0, 6),
        shift in prop::collection::vec(-0.3f64..0.3, 6),
        eps in prop::collection::vec(-2.5f64..2.5, 3),
    ) {
        let layout = CoordinateLayout::new().with(TransformKind::Identity, 2).with(TransformKind::Softplus, 1);
        let build = |partition: FactorPartition, values: &[f64]| {
            let mut p = FactorizedApproxParams::new(layout.clone(), partition).unwrap();
            p.values_mut().copy_from_slice(values);
            p
        };
        let moved: Vec<f64> = theta.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let joint = build(FactorPartition::chunks(3, 3).unwrap(), &theta);
        let single = build(FactorPartition::singletons(3).unwrap(), &theta);
        let (wj, _) = importance_weights(&cache_at(&joint, &eps), &build(FactorPartition::chunks(3, 3).unwrap(), &moved)).unwrap();
        let (ws, eps_new) = importance_weights(&cache_at(&single, &eps), &build(FactorPartition::singletons(3).unwrap(), &moved)).unwrap();
        let log_product: f64 = (0..3).map(|s| ws.weight(0, s).ln()).sum();
        prop_assert!((wj.weight(0, 0).ln() - log_product).abs() <= 1e-12);

        // no normalizing constant involved: ½(ε² − ε'²) per coordinate
        let by_hand: f64 = (0..3).map(|i| 0.5 * (eps[i] * eps[i] - eps_new[0][i] * eps_new[0][i])).sum();
        prop_assert!((wj.weight(0, 0).ln() - by_hand).abs() <= 1e-12);
    }

    #[test]
    fn score_weights_are_density_ratios(
        theta in prop::collection::vec(-1.0f64..1.0, 4),
        shift in prop::collection::vec(-0.3f64..0.3, 4),
        eps in prop::collection::vec(-2.5f64..2.5, 2),
    ) {
        let old = identity_params(&theta[..2], &theta[2..]);
        let moved: Vec<f64> = theta.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let new = identity_params(&moved[..2], &moved[2..]);
        let cache = cache_at(&old, &eps);
        let (w, _) = importance_weights(&cache, &new).unwrap();
        let z = &cache.z[0];
        for s in 0..2 {
            let q = |p: &FactorizedApproxParams| {
                let e = (z[s] - p.location()[s]) / p.scale(s);
                log_std_normal(e) - p.log_scale()[s]
            };
            let ratio = (q(&new) - q(&old)).exp();
            let via_base = w.weight(0, s) * old.scale(s) / new.scale(s);
            prop_assert!((w.density_ratio(0, s) - ratio).abs() <= 1e-12 * ratio.max(1.0));
            prop_assert!((via_base - ratio).abs() <= 1e-12 * ratio.max(1.0));
        }
    }
}

#[test]
fn out_of_range_sample_gets_zero_weight() {
    let layout = CoordinateLayout::new().with(TransformKind::Softplus, 1);
    let p = FactorizedApproxParams::new(layout, FactorPartition::singletons(1).unwrap()).unwrap();
    let mut cache = cache_at(&p, &[0.0]);
    cache.z[0] = LatentVector(vec![-1.0]);
    let mut moved = p.clone();
    moved.location_mut()[0] = 0.1;
    let (w, _) = importance_weights(&cache, &moved).unwrap();
    assert_eq!(w.weight(0, 0), 0.0);
    assert!(w.any_invalid());
}

#[test]
fn softplus_reuse_after_location_shift_is_finite() {
    let layout = CoordinateLayout::new().with(TransformKind::Softplus, 2);
    let p = FactorizedApproxParams::new(layout, FactorPartition::singletons(2).unwrap()).unwrap();
    let mut cache = cache_at(&p, &[0.4, -1.2]);
    cache.grad_z = vec![vec![1.5, -0.5]];
    let mut moved = p.clone();
    moved.location_mut()[0] += 0.05;
    let ReuseOutcome::Accepted(est) = importance_gradient(&cache, &moved, &EstimatorConfig::default()).unwrap() else {
        panic!("refused")
    };
    assert!(est.gradient.is_finite() && est.mean_weight.is_finite() && !est.degenerate);
}

#[test]
fn large_weights_are_refused() {
    let old = identity_params(&[0.0], &[0.0]);
    let cache = cache_at(&old, &[4.0]);
    let cfg = EstimatorConfig {
        weight_ceiling: 10.0,
        ..Default::default()
    };
    // ε' = 0 at the new location: φ(0)/φ(4) ≈ 3000
    let outcome = importance_gradient(&cache, &identity_params(&[4.0], &[0.0]), &cfg).unwrap();
    assert!(matches!(outcome, ReuseOutcome::Refused { max_ratio } if max_ratio > 10.0));
}

#[test]
fn model_is_called_only_by_fresh_estimates() {
    let (model, data) = unit_gaussian_target(2);
    let counters = EvalCounters::default();
    let target = Target::new(&model, &data, &counters);
    let p = identity_params(&[0.0, 0.0], &[0.0, 0.0]);
    let cfg = EstimatorConfig {
        num_samples: 5,
        ..Default::default()
    };
    let batch = MiniBatch::prior_only(0);
    let fresh = reparam_gradient(&p, &target, &batch, &cfg, &mut seeded(1)).unwrap();
    assert_eq!(target.counters().model_grad_evals, 5);
    let mut moved = p.clone();
    moved.location_mut()[1] = 0.2;
    importance_gradient(&fresh.cache, &moved, &cfg).unwrap();
    assert_eq!(target.counters().model_grad_evals, 5);

    let before = target.counters();
    let fresh = score_gradient(&p, &target, &batch, &cfg, &mut seeded(1)).unwrap();
    let after = target.counters();
    assert_eq!(after.model_grad_evals, before.model_grad_evals);
    assert_eq!(after.logp_evals - before.logp_evals, 5);
    importance_score_gradient(&fresh.cache, &moved, &cfg).unwrap();
    assert_eq!(target.counters(), after);
    assert!(importance_gradient(&fresh.cache, &moved, &cfg).is_err());
}

#[test]
fn reparam_gradient_at_zero_draw() {
    // log N(z; 1, 1) at z = 0 has gradient 1
    let p = identity_params(&[0.0], &[0.0]);
    let g = p.reparam_pullback(&EpsilonVector(vec![0.0]), &[1.0]).unwrap();
    assert_eq!(g.location(), &[1.0]);
    assert_eq!(g.log_scale(), &[1.0]);
}

fn replicate_gradients(kind: EstimatorKind, params: &FactorizedApproxParams, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let (model, data) = unit_gaussian_target(params.dim());
    let counters = EvalCounters::default();
    let target = Target::new(&model, &data, &counters);
    let cfg = EstimatorConfig::default();
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            kind.fresh(params, &target, &MiniBatch::prior_only(0), &cfg, &mut rng)
                .unwrap()
                .gradient
                .0
        })
        .collect()
}

#[test]
fn fresh_estimators_match_analytic_gradient() {
    // ELBO of N(μ, σ²) against N(1, 1): ∂μ = 1 − μ, ∂ρ = 1 − σ²
    let p = identity_params(&[0.0], &[0.0]);
    for kind in [EstimatorKind::Reparam, EstimatorKind::Score] {
        let (mean, se) = column_stats(&replicate_gradients(kind, &p, 100_000, 11));
        assert!((mean[0] - 1.0).abs() <= 3.0 * se[0], "{kind:?}: {} ± {}", mean[0], se[0]);
        assert!(mean[1].abs() <= 3.0 * se[1].max(1e-12), "{kind:?}: {} ± {}", mean[1], se[1]);
    }
    // the target equals q, so every score integrand is zero
    let at_target = identity_params(&[1.0], &[0.0]);
    let g = replicate_gradients(EstimatorKind::Score, &at_target, 50, 3);
    assert!(g.iter().flatten().all(|&v| v.abs() < 1e-12));
}

#[test]
fn importance_gradients_are_unbiased() {
    let old = identity_params(&[0.3, -0.2], &[-0.2, 0.2]);
    let mut new = old.clone();
    new.values_mut().iter_mut().for_each(|v| *v += 0.01);
    let (model, data) = unit_gaussian_target(2);
    let counters = EvalCounters::default();
    let target = Target::new(&model, &data, &counters);
    let cfg = EstimatorConfig::default();
    let batch = MiniBatch::prior_only(0);
    for kind in [EstimatorKind::Reparam, EstimatorKind::Score] {
        let mut rng = seeded(21);
        let reused: Vec<Vec<f64>> = (0..100_000)
            .map(|_| {
                let fresh = kind.fresh(&old, &target, &batch, &cfg, &mut rng).unwrap();
                kind.reuse(&fresh.cache, &new, &cfg).unwrap().accepted().unwrap().gradient.0
            })
            .collect();
        let direct = replicate_gradients(kind, &new, 100_000, 22);
        let (ok, worst) = agree_within(&reused, &direct, 3.0);
        assert!(ok, "{kind:?}: worst deviation {worst:.2} SE");
    }
}

#[test]
fn sample_epsilon_feeds_forward() {
    let p = identity_params(&[1.0, 2.0], &[0.0, 0.0]);
    let e = sample_epsilon(&mut seeded(5), 2).unwrap();
    let z = p.forward(&e).unwrap();
    assert!((z[0] - 1.0 - e[0]).abs() < 1e-15 && (z[1] - 2.0 - e[1]).abs() < 1e-15);
}
