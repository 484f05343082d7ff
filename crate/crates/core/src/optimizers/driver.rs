use std::time::Instant;

use rand::seq::SliceRandom;

use crate::approximation::{sample_epsilon, EpsilonVector, FactorizedApproxParams};
use crate::error::{Error, Result};
use crate::estimators::{FreshEstimate, ReuseOutcome, SampleCache};
use crate::models::{partition_batches, AnyModel, Dataset, EvalCounters, MiniBatch, Model, Target};
use crate::rng::{stream, SeededRng, Stream};
use crate::trace::{EvalRecord, StepKind, TraceRecord};

use super::{AdamState, RunOutput, RunSettings, StopReason, PLATEAU_EPOCHS, PLATEAU_TOLERANCE};

/// State shared by all optimizer loops: batches and their visiting order,
/// generator streams, counters, the trace and the stop rule.
pub(crate) struct Driver<'a> {
    target: Target<'a>,
    settings: &'a RunSettings,
    batches: Vec<MiniBatch>,
    order: Vec<usize>,
    cursor: usize,
    epochs_started: usize,
    samples: SeededRng,
    schedule: SeededRng,
    pub decisions: SeededRng,
    start: Instant,
    step: u64,
    trace: Vec<TraceRecord>,
    evals: Vec<EvalRecord>,
    eval_eps: Vec<EpsilonVector>,
    epoch_elbo: (f64, usize),
    epoch_scores: Vec<f64>,
    stop: Option<StopReason>,
    pub adam: AdamState,
}

impl<'a> Driver<'a> {
    pub fn new(
        model: &'a AnyModel,
        data: &'a Dataset,
        counters: &'a EvalCounters,
        init: &FactorizedApproxParams,
        settings: &'a RunSettings,
    ) -> Result<Self> {
        settings.validate()?;
        if model.latent_dim() != init.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.latent_dim(),
                actual: init.dim(),
            });
        }
        if model.layout() != init.layout() {
            return Err(Error::InvalidLayout(
                "initial parameters use a different coordinate layout than the model".into(),
            ));
        }
        let mut schedule = stream(settings.seed, Stream::Schedule);
        let batches = if data.is_empty() {
            vec![MiniBatch::prior_only(0)]
        } else {
            partition_batches(data.len(), settings.batch_size, Some(&mut schedule))?
        };
        let mut eval_rng = stream(settings.seed, Stream::Evaluation);
        let eval_eps = match &settings.eval {
            Some(e) => (0..e.num_samples)
                .map(|_| sample_epsilon(&mut eval_rng, init.dim()))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let mut driver = Self {
            target: Target::new(model, data, counters),
            settings,
            batches,
            order: Vec::new(),
            cursor: 0,
            epochs_started: 0,
            samples: stream(settings.seed, Stream::Samples),
            schedule,
            decisions: stream(settings.seed, Stream::ReuseDecision),
            start: Instant::now(),
            step: 0,
            trace: Vec::new(),
            evals: Vec::new(),
            eval_eps,
            epoch_elbo: (0.0, 0),
            epoch_scores: Vec::new(),
            stop: None,
            adam: AdamState::new(2 * init.dim(), settings.adam),
        };
        if settings.eval.is_some() {
            driver.evaluate(init)?;
        }
        Ok(driver)
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn settings(&self) -> &RunSettings {
        self.settings
    }

    fn wall_ms(&self) -> f64 {
        if self.settings.wall_clock {
            self.start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    }

    /// `false` once any budget is exhausted.
    pub fn can_step(&mut self) -> bool {
        if self.stop.is_some() {
            return false;
        }
        let stop = &self.settings.stop;
        let c = self.target.counters();
        self.stop = if stop.max_steps.is_some_and(|m| self.step >= m) {
            Some(StopReason::Steps)
        } else if stop.max_grad_evals.is_some_and(|m| c.model_grad_evals >= m) {
            Some(StopReason::GradEvals)
        } else if stop.max_logp_evals.is_some_and(|m| c.logp_evals >= m) {
            Some(StopReason::LogpEvals)
        } else {
            None
        };
        self.stop.is_none()
    }

    /// Index of the next batch to visit, or `None` when the run is over.
    pub fn next_batch(&mut self, params: &FactorizedApproxParams) -> Result<Option<usize>> {
        if !self.can_step() {
            return Ok(None);
        }
        if self.cursor == self.order.len() {
            if self.epochs_started > 0 {
                self.finish_epoch(params)?;
                if self.stop.is_some() {
                    return Ok(None);
                }
            }
            if self.epochs_started >= self.settings.stop.max_epochs {
                self.stop = Some(StopReason::Epochs);
                return Ok(None);
            }
            self.order = (0..self.batches.len()).collect();
            self.order.shuffle(&mut self.schedule);
            self.cursor = 0;
            self.epochs_started += 1;
        }
        let b = self.order[self.cursor];
        self.cursor += 1;
        Ok(Some(b))
    }

    fn finish_epoch(&mut self, params: &FactorizedApproxParams) -> Result<()> {
        let per_epoch_eval = self.settings.eval.is_some_and(|e| e.every_steps.is_none());
        if per_epoch_eval {
            self.evaluate(params)?;
        }
        let score = match (self.settings.eval.is_some(), self.evals.last()) {
            (true, Some(e)) => e.elbo,
            _ => self.epoch_elbo.0 / self.epoch_elbo.1.max(1) as f64,
        };
        self.epoch_elbo = (0.0, 0);
        self.epoch_scores.push(score);
        let n = self.epoch_scores.len();
        if self.settings.stop.plateau && n > PLATEAU_EPOCHS {
            let (now, then) = (self.epoch_scores[n - 1], self.epoch_scores[n - 1 - PLATEAU_EPOCHS]);
            if (now - then) / then.abs().max(f64::MIN_POSITIVE) < PLATEAU_TOLERANCE {
                self.stop = Some(StopReason::Plateau);
            }
        }
        Ok(())
    }

    pub fn fresh(&mut self, params: &FactorizedApproxParams, b: usize) -> Result<FreshEstimate> {
        let est = self.settings.estimator.fresh(
            params,
            &self.target,
            &self.batches[b],
            &self.settings.estimator_config,
            &mut self.samples,
        )?;
        if !est.gradient.is_finite() {
            return Err(Error::NonFinite(format!("fresh gradient on batch {b}")));
        }
        Ok(est)
    }

    pub fn reuse(&self, cache: &SampleCache, params: &FactorizedApproxParams) -> Result<ReuseOutcome> {
        let out = self
            .settings
            .estimator
            .reuse(cache, params, &self.settings.estimator_config)?;
        if let ReuseOutcome::Accepted(e) = &out {
            if !e.gradient.is_finite() {
                return Err(Error::NonFinite("importance-sampled gradient".into()));
            }
        }
        Ok(out)
    }

    /// Applies an Adam step and appends the trace row for it.
    pub fn step(
        &mut self,
        params: &mut FactorizedApproxParams,
        gradient: &crate::approximation::GradientVector,
        kind: StepKind,
        elbo: f64,
        mean_weight: f64,
    ) -> Result<()> {
        if !elbo.is_finite() {
            return Err(Error::NonFinite(format!("ELBO estimate at step {}", self.step + 1)));
        }
        self.adam.step(params, gradient)?;
        self.step += 1;
        let c = self.target.counters();
        self.trace.push(TraceRecord {
            step: self.step,
            step_kind: kind,
            model_grad_evals: c.model_grad_evals,
            logp_evals: c.logp_evals,
            wall_ms: self.wall_ms(),
            elbo,
            mean_weight,
        });
        self.epoch_elbo.0 += elbo;
        self.epoch_elbo.1 += 1;
        if let Some(k) = self.settings.eval.and_then(|e| e.every_steps) {
            if self.step % k == 0 {
                self.evaluate(params)?;
            }
        }
        Ok(())
    }

    /// Full-data ELBO at the fixed evaluation draws; uncounted.
    fn evaluate(&mut self, params: &FactorizedApproxParams) -> Result<()> {
        let full = if self.target.data.is_empty() {
            MiniBatch::prior_only(0)
        } else {
            MiniBatch::full(self.target.data.len())
        };
        let mut total = 0.0;
        for eps in &self.eval_eps {
            let z = params.forward(eps)?;
            total += self.target.log_joint_uncounted(&full, &z)? - params.log_density_at(eps)?;
        }
        let c = self.target.counters();
        self.evals.push(EvalRecord {
            step: self.step,
            model_grad_evals: c.model_grad_evals,
            logp_evals: c.logp_evals,
            wall_ms: self.wall_ms(),
            elbo: total / self.eval_eps.len() as f64,
        });
        Ok(())
    }

    pub fn finish(mut self, params: FactorizedApproxParams) -> Result<RunOutput> {
        if self.settings.eval.is_some() && self.evals.last().is_some_and(|e| e.step != self.step) {
            self.evaluate(&params)?;
        }
        Ok(RunOutput {
            params,
            trace: self.trace,
            evals: self.evals,
            counters: self.target.counters(),
            epochs: self.epochs_started,
            stop_reason: self.stop.unwrap_or(StopReason::Epochs),
        })
    }
}
