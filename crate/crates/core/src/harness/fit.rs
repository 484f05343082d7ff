use std::path::PathBuf;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{AnyModel, CounterSnapshot, Dataset};
use crate::optimizers::{RunOutput, StopReason};
use crate::rng::{stream, Stream};
use crate::trace::EvalRecord;

use super::bench::{curve, first_crossing};
use super::{estimate_elbo, output_dir, write_json, write_run_files, ElboEstimate, Outcome, RunConfig};

/// Draws used for the final ELBO and latent-mean estimates in the summary.
pub const SUMMARY_SAMPLES: usize = 500;

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticPosterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub log_evidence: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub optimizer: String,
    pub seed: u64,
    pub steps: u64,
    pub epochs: usize,
    pub stop_reason: StopReason,
    pub counters: CounterSnapshot,
    pub final_elbo: ElboEstimate,
    pub location: Vec<f64>,
    pub log_scale: Vec<f64>,
    /// Monte Carlo mean of the constrained latents under the approximation.
    pub latent_mean: Vec<f64>,
    pub threshold: Option<f64>,
    pub threshold_crossing: Option<EvalRecord>,
    /// Closed-form answer, for the conjugate-normal model.
    pub analytic_posterior: Option<AnalyticPosterior>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub output: RunOutput,
    pub summary: FitSummary,
    pub model: AnyModel,
    pub data: Dataset,
}

pub fn run_fit(cfg: &RunConfig, seed: u64) -> Result<FitReport> {
    let optimizer = cfg
        .optimizer
        .ok_or_else(|| Error::config("optimizer", "fit needs an [optimizer] section"))?;
    let model = cfg.model.build()?;
    let data = cfg.dataset(&model, seed)?;
    let init = cfg.initial_params(&model, cfg.approximation.factor_size)?;
    let settings = cfg.settings(seed)?;
    let output = optimizer.run(&model, &data, &init, &settings)?;

    let mut rng = stream(seed, Stream::Evaluation);
    let final_elbo = estimate_elbo(&model, &data, &output.params, SUMMARY_SAMPLES, &mut rng)?;
    if !final_elbo.mean.is_finite() {
        return Err(Error::NonFinite("final ELBO".into()));
    }
    let d = output.params.dim();
    let mut latent_mean = vec![0.0; d];
    for _ in 0..SUMMARY_SAMPLES {
        let eps = crate::approximation::sample_epsilon(&mut rng, d)?;
        for (m, z) in latent_mean.iter_mut().zip(output.params.forward(&eps)?.iter()) {
            *m += z / SUMMARY_SAMPLES as f64;
        }
    }
    let threshold = cfg.threshold.elbo;
    let threshold_crossing = threshold.and_then(|t| {
        first_crossing(&curve(&output.trace, &output.evals, cfg.threshold.window), t).cloned()
    });
    let analytic_posterior = match &model {
        AnyModel::ConjugateNormal(m) => {
            let p = m.posterior(&data);
            Some(AnalyticPosterior {
                mean: p.mean,
                variance: p.variance,
                log_evidence: m.log_evidence(&data),
            })
        }
        _ => None,
    };
    let summary = FitSummary {
        optimizer: optimizer.name().into(),
        seed,
        steps: output.trace.len() as u64,
        epochs: output.epochs,
        stop_reason: output.stop_reason,
        counters: output.counters,
        final_elbo,
        location: output.params.location().to_vec(),
        log_scale: output.params.log_scale().to_vec(),
        latent_mean,
        threshold,
        threshold_crossing,
        analytic_posterior,
    };
    Ok(FitReport {
        output,
        summary,
        model,
        data,
    })
}

/// Writes `trace.csv`, `eval.csv` (when evaluating) and `summary.json`.
pub fn cmd_fit(cfg: &RunConfig, seed: u64, out: Option<PathBuf>) -> Result<Outcome> {
    let report = run_fit(cfg, seed)?;
    let dir = output_dir(cfg, out, "out/fit")?;
    write_run_files(&dir, "run", &report.output.trace, &report.output.evals)?;
    write_json(&dir.join("summary.json"), &report.summary)?;
    Ok(match (report.summary.threshold, &report.summary.threshold_crossing) {
        (Some(_), None) => Outcome::ThresholdNotReached,
        _ => Outcome::Success,
    })
}
