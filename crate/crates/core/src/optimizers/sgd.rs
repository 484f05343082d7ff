use rand::Rng;

use crate::approximation::FactorizedApproxParams;
use crate::error::Result;
use crate::estimators::{FreshEstimate, ReuseOutcome, SampleCache};
use crate::models::{AnyModel, Dataset, EvalCounters};
use crate::trace::StepKind;

use super::driver::Driver;
use super::{ISgdConfig, RunOutput, RunSettings};

/// One fresh gradient and one Adam step per mini-batch.
pub fn sgd_run(
    model: &AnyModel,
    data: &Dataset,
    init: &FactorizedApproxParams,
    settings: &RunSettings,
) -> Result<RunOutput> {
    let counters = EvalCounters::default();
    let mut driver = Driver::new(model, data, &counters, init, settings)?;
    let mut params = init.clone();
    while let Some(b) = driver.next_batch(&params)? {
        let est = driver.fresh(&params, b)?;
        driver.step(&mut params, &est.gradient, StepKind::Fresh, est.elbo, 1.0)?;
    }
    driver.finish(params)
}

/// With probability `t` take another step on the stored samples, otherwise
/// move on to the next mini-batch.
pub fn isgd_run(
    model: &AnyModel,
    data: &Dataset,
    init: &FactorizedApproxParams,
    cfg: &ISgdConfig,
    settings: &RunSettings,
) -> Result<RunOutput> {
    cfg.validate()?;
    let counters = EvalCounters::default();
    let mut driver = Driver::new(model, data, &counters, init, settings)?;
    let mut params = init.clone();
    isgd_loop(&mut driver, &mut params, cfg, None, |_, _| {})?;
    driver.finish(params)
}

/// The I-SGD loop. Stops when the driver runs out of budget or, when
/// `max_fresh` is given, before the fresh step that would exceed it.
/// `on_fresh` sees every fresh estimate with its batch index.
pub(crate) fn isgd_loop(
    driver: &mut Driver<'_>,
    params: &mut FactorizedApproxParams,
    cfg: &ISgdConfig,
    max_fresh: Option<usize>,
    mut on_fresh: impl FnMut(usize, &FreshEstimate),
) -> Result<()> {
    let mut cache: Option<SampleCache> = None;
    let mut run_length = 0;
    let mut fresh_steps = 0;
    loop {
        if !driver.can_step() {
            break;
        }
        let u: f64 = driver.decisions.random();
        if let Some(c) = cache.as_ref().filter(|_| u < cfg.reuse_probability && run_length < cfg.max_reuse_steps) {
            match driver.reuse(c, params)? {
                ReuseOutcome::Accepted(est) if !est.degenerate && est.gradient.is_finite() => {
                    driver.step(params, &est.gradient, StepKind::Reuse, est.elbo, est.mean_weight)?;
                    run_length += 1;
                    continue;
                }
                // weights collapsed or blew up: the stored samples no longer describe q
                _ => {}
            }
        }
        if max_fresh.is_some_and(|m| fresh_steps >= m) {
            break;
        }
        let Some(b) = driver.next_batch(params)? else {
            break;
        };
        let est = driver.fresh(params, b)?;
        on_fresh(b, &est);
        driver.step(params, &est.gradient, StepKind::Fresh, est.elbo, 1.0)?;
        cache = Some(est.cache);
        run_length = 0;
        fresh_steps += 1;
    }
    Ok(())
}
