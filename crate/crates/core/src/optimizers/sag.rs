use std::collections::VecDeque;

use rayon::prelude::*;

use crate::approximation::{FactorizedApproxParams, GradientVector};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind, ReuseOutcome, SampleCache};
use crate::models::{AnyModel, Dataset, EvalCounters};
use crate::trace::StepKind;

use super::driver::Driver;
use super::sgd::isgd_loop;
use super::{ISagConfig, RunOutput, RunSettings, SraConfig};

/// A step direction assembled from several batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub gradient: GradientVector,
    /// Batches whose gradients entered the average.
    pub contributing: usize,
    /// Mean importance weight over the historical batches; 1 if none.
    pub mean_weight: f64,
}

/// Batches visited most recently, capped at `K`.
struct Recency {
    order: VecDeque<usize>,
    cap: Option<usize>,
}

impl Recency {
    fn new(cap: Option<usize>) -> Self {
        Self {
            order: VecDeque::new(),
            cap,
        }
    }

    /// Marks `b` as the newest batch; returns a batch that fell out, if any.
    fn touch(&mut self, b: usize) -> Option<usize> {
        self.order.retain(|&x| x != b);
        self.order.push_back(b);
        match self.cap {
            Some(k) if self.order.len() > k => self.order.pop_front(),
            _ => None,
        }
    }

    fn sorted(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.order.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

fn check_batches(cfg: &ISagConfig, driver: &Driver<'_>) -> Result<()> {
    match cfg.batches_per_epoch {
        Some(b) if b != driver.num_batches() => Err(Error::config(
            "batches_per_epoch",
            format!("{b} does not match the {} batches of the data", driver.num_batches()),
        )),
        _ => Ok(()),
    }
}

/// Average of the stored gradients in ascending batch order.
fn table_direction(table: &[Option<GradientVector>], retained: &[usize], dim: usize) -> Direction {
    let mut gradient = GradientVector::zeros(dim);
    let mut contributing = 0;
    for &b in retained {
        if let Some(g) = &table[b] {
            gradient.add_assign(g);
            contributing += 1;
        }
    }
    gradient.scale(1.0 / contributing.max(1) as f64);
    Direction {
        gradient,
        contributing,
        mean_weight: 1.0,
    }
}

/// The I-SAG direction: the fresh gradient of batch `current` plus
/// importance-sampled gradients at `params` from the caches of the other
/// batches, summed in ascending batch order and divided by the number of
/// contributing batches. Caches that are refused or whose mean weight falls
/// under the floor contribute nothing.
pub fn isag_direction(
    kind: EstimatorKind,
    cfg: &EstimatorConfig,
    params: &FactorizedApproxParams,
    current: usize,
    fresh: &GradientVector,
    history: &[(usize, &SampleCache)],
) -> Result<Direction> {
    let reused: Vec<Option<(GradientVector, f64)>> = history
        .par_iter()
        .map(|(b, cache)| {
            if *b == current {
                return Ok(None);
            }
            Ok(match kind.reuse(cache, params, cfg)? {
                ReuseOutcome::Accepted(e) if !e.degenerate && e.gradient.is_finite() => {
                    Some((e.gradient, e.mean_weight))
                }
                _ => None,
            })
        })
        .collect::<Result<_>>()?;

    let mut ids: Vec<usize> = history.iter().map(|(b, _)| *b).collect();
    if !ids.contains(&current) {
        ids.push(current);
    }
    ids.sort_unstable();
    let mut gradient = GradientVector::zeros(params.dim());
    let mut contributing = 0;
    let mut weights = Vec::new();
    for b in ids {
        if b == current {
            gradient.add_assign(fresh);
            contributing += 1;
        } else if let Some(i) = history.iter().position(|(h, _)| *h == b) {
            if let Some((g, w)) = &reused[i] {
                gradient.add_assign(g);
                contributing += 1;
                weights.push(*w);
            }
        }
    }
    gradient.scale(1.0 / contributing as f64);
    let mean_weight = if weights.is_empty() {
        1.0
    } else {
        weights.iter().sum::<f64>() / weights.len() as f64
    };
    Ok(Direction {
        gradient,
        contributing,
        mean_weight,
    })
}

fn init_pass(
    driver: &mut Driver<'_>,
    params: &mut FactorizedApproxParams,
    init: Option<&super::ISgdConfig>,
    on_fresh: impl FnMut(usize, &crate::estimators::FreshEstimate),
) -> Result<()> {
    if let Some(init) = init {
        init.validate()?;
        let b = driver.num_batches();
        isgd_loop(driver, params, init, Some(b), on_fresh)?;
    }
    Ok(())
}

/// Steps along the average of the latest stored per-batch gradients; stale
/// entries are used as stored.
pub fn sag_run(
    model: &AnyModel,
    data: &Dataset,
    init: &FactorizedApproxParams,
    cfg: &ISagConfig,
    settings: &RunSettings,
) -> Result<RunOutput> {
    sag_loop(model, data, init, cfg, settings, |_, _| {})
}

pub(crate) fn sag_loop(
    model: &AnyModel,
    data: &Dataset,
    init: &FactorizedApproxParams,
    cfg: &ISagConfig,
    settings: &RunSettings,
    mut on_direction: impl FnMut(usize, &Direction),
) -> Result<RunOutput> {
    cfg.validate()?;
    let counters = EvalCounters::default();
    let mut driver = Driver::new(model, data, &counters, init, settings)?;
    check_batches(cfg, &driver)?;
    let mut params = init.clone();
    let mut table: Vec<Option<GradientVector>> = vec![None; driver.num_batches()];
    let mut recency = Recency::new(cfg.latest_k);

    init_pass(&mut driver, &mut params, cfg.init.as_ref(), |b, est| {
        table[b] = Some(est.gradient.clone());
        if let Some(old) = recency.touch(b) {
            table[old] = None;
        }
    })?;

    while let Some(b) = driver.next_batch(&params)? {
        let est = driver.fresh(&params, b)?;
        table[b] = Some(est.gradient);
        if let Some(old) = recency.touch(b) {
            table[old] = None;
        }
        let dir = table_direction(&table, &recency.sorted(), params.dim());
        on_direction(b, &dir);
        driver.step(&mut params, &dir.gradient, StepKind::Fresh, est.elbo, 1.0)?;
    }
    driver.finish(params)
}

/// SAG with historical gradients re-evaluated at the current parameters by
/// importance sampling their cached samples.
pub fn isag_run(
    model: &AnyModel,
    data: &Dataset,
    init: &FactorizedApproxParams,
    cfg: &ISagConfig,
    settings: &RunSettings,
) -> Result<RunOutput> {
    isag_loop(model, data, init, cfg, settings, |_, _| {})
}

pub(crate) fn isag_loop(
    model: &AnyModel,
    data: &Dataset,
    init: &FactorizedApproxParams,
    cfg: &ISagConfig,
    settings: &RunSettings,
    mut on_direction: impl FnMut(usize, &Direction),
) -> Result<RunOutput> {
    cfg.validate()?;
    let counters = EvalCounters::default();
    let mut driver = Driver::new(model, data, &counters, init, settings)?;
    check_batches(cfg, &driver)?;
    let mut params = init.clone();
    let mut caches: Vec<Option<SampleCache>> = vec![None; driver.num_batches()];
    let mut recency = Recency::new(cfg.latest_k);

    init_pass(&mut driver, &mut params, cfg.init.as_ref(), |b, est| {
        caches[b] = Some(est.cache.clone());
        if let Some(old) = recency.touch(b) {
            caches[old] = None;
        }
    })?;

    while let Some(b) = driver.next_batch(&params)? {
        let est = driver.fresh(&params, b)?;
        caches[b] = Some(est.cache);
        if let Some(old) = recency.touch(b) {
            caches[old] = None;
        }
        let history: Vec<(usize, &SampleCache)> = recency
            .sorted()
            .into_iter()
            .filter(|&h| h != b)
            .filter_map(|h| caches[h].as_ref().map(|c| (h, c)))
            .collect();
        let s = driver.settings();
        let dir = isag_direction(s.estimator, &s.estimator_config, &params, b, &est.gradient, &history)?;
        on_direction(b, &dir);
        driver.step(&mut params, &dir.gradient, StepKind::Fresh, est.elbo, dir.mean_weight)?;
    }
    driver.finish(params)
}

/// Steps along an exponential running average of fresh gradients,
/// `g ← α g + (1 − α) g_fresh`, starting from zero.
pub fn sra_run(
    model: &AnyModel,
    data: &Dataset,
    init: &FactorizedApproxParams,
    cfg: &SraConfig,
    settings: &RunSettings,
) -> Result<RunOutput> {
    cfg.validate()?;
    let counters = EvalCounters::default();
    let mut driver = Driver::new(model, data, &counters, init, settings)?;
    let mut params = init.clone();
    let alpha = cfg.decay;
    let mut avg = GradientVector::zeros(params.dim());
    let blend = |avg: &mut GradientVector, g: &GradientVector| {
        for (a, x) in avg.0.iter_mut().zip(&g.0) {
            *a = alpha * *a + (1.0 - alpha) * x;
        }
    };

    init_pass(&mut driver, &mut params, cfg.init.as_ref(), |_, est| blend(&mut avg, &est.gradient))?;

    while let Some(b) = driver.next_batch(&params)? {
        let est = driver.fresh(&params, b)?;
        blend(&mut avg, &est.gradient);
        driver.step(&mut params, &avg, StepKind::Fresh, est.elbo, 1.0)?;
    }
    driver.finish(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximation::{CoordinateLayout, FactorPartition};
    use crate::models::{make_synthetic, ConjugateNormal, Model};
    use crate::optimizers::{AdamConfig, ISgdConfig, StopRule};
    use crate::rng::seeded;

    fn setup() -> (AnyModel, Dataset, FactorizedApproxParams) {
        let model = AnyModel::ConjugateNormal(ConjugateNormal::new(2, 0.0, 1.0, 1.0));
        let data = make_synthetic(&model, &mut seeded(4), 60).unwrap();
        let init = FactorizedApproxParams::new(
            CoordinateLayout::identity(2),
            FactorPartition::singletons(2).unwrap(),
        )
        .unwrap();
        (model, data, init)
    }

    fn settings(lr: f64) -> RunSettings {
        RunSettings {
            adam: AdamConfig {
                learning_rate: lr,
                ..Default::default()
            },
            batch_size: 10,
            stop: StopRule {
                max_epochs: 3,
                ..Default::default()
            },
            seed: 11,
            wall_clock: false,
            ..Default::default()
        }
    }

    #[test]
    fn recency_caps_at_k() {
        let mut r = Recency::new(Some(2));
        assert_eq!(r.touch(3), None);
        assert_eq!(r.touch(1), None);
        assert_eq!(r.touch(3), None);
        assert_eq!(r.touch(0), Some(1));
        assert_eq!(r.sorted(), vec![0, 3]);
    }

    #[test]
    fn frozen_isag_matches_sag_table() {
        let (model, data, init) = setup();
        let s = settings(0.0);
        let cfg = ISagConfig::default();
        let mut sag_dirs = Vec::new();
        sag_loop(&model, &data, &init, &cfg, &s, |b, d| sag_dirs.push((b, d.clone()))).unwrap();
        let mut isag_dirs = Vec::new();
        isag_loop(&model, &data, &init, &cfg, &s, |b, d| isag_dirs.push((b, d.clone()))).unwrap();
        assert_eq!(sag_dirs.len(), 12);
        assert_eq!(sag_dirs, isag_dirs);
        assert!(sag_dirs.iter().all(|(_, d)| d.contributing == 6));
    }

    #[test]
    fn single_batch_sag_is_full_batch_ascent() {
        let (model, data, init) = setup();
        let mut s = settings(0.05);
        s.batch_size = data.len();
        let cfg = ISagConfig {
            init: None,
            ..Default::default()
        };
        let sag = sag_run(&model, &data, &init, &cfg, &s).unwrap();
        let sgd = super::super::sgd_run(&model, &data, &init, &s).unwrap();
        assert_eq!(sag.params.values(), sgd.params.values());
        assert_eq!(sag.trace, sgd.trace);
    }

    #[test]
    fn isag_drops_far_stale_batches() {
        let (model, data, init) = setup();
        let s = settings(0.05);
        let counters = EvalCounters::default();
        let target = crate::models::Target::new(&model, &data, &counters);
        let batch = crate::models::MiniBatch::full(data.len());
        let mut rng = seeded(2);
        let est = EstimatorKind::Reparam
            .fresh(&init, &target, &batch, &s.estimator_config, &mut rng)
            .unwrap();
        let mut far = init.clone();
        for v in far.location_mut() {
            *v += 50.0;
        }
        let fresh = GradientVector(vec![1.0; 4]);
        let dir = isag_direction(
            EstimatorKind::Reparam,
            &s.estimator_config,
            &far,
            1,
            &fresh,
            &[(0, &est.cache)],
        )
        .unwrap();
        assert_eq!(dir.contributing, 1);
        assert_eq!(dir.gradient, fresh);
        assert_eq!(model.latent_dim(), 2);
    }

    #[test]
    fn sra_constant_stream_converges_geometrically() {
        let alpha: f64 = 0.5;
        let g = 3.0;
        let mut avg = 0.0;
        for k in 1..=20 {
            avg = alpha * avg + (1.0 - alpha) * g;
            assert!((g - avg - g * alpha.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn sag_init_pass_counts_one_epoch() {
        let (model, data, init) = setup();
        let mut s = settings(0.05);
        s.stop.max_epochs = 1;
        let cfg = ISagConfig {
            init: Some(ISgdConfig::default()),
            ..Default::default()
        };
        let out = sag_run(&model, &data, &init, &cfg, &s).unwrap();
        assert_eq!(out.counters.model_grad_evals, 6);
        assert_eq!(out.epochs, 1);
    }
}
