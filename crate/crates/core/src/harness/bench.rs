use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::CounterSnapshot;
use crate::optimizers::{Optimizer, RunOutput};
use crate::trace::{smooth, EvalRecord, TraceRecord};

use super::{output_dir, write_json, write_run_files, Outcome, RunConfig};

/// The ELBO curve thresholds are read from: the evaluation records when the
/// run has them, otherwise the per-step ELBO smoothed over `window` steps.
pub fn curve(trace: &[TraceRecord], evals: &[EvalRecord], window: usize) -> Vec<EvalRecord> {
    if !evals.is_empty() {
        return evals.to_vec();
    }
    let raw: Vec<f64> = trace.iter().map(|r| r.elbo).collect();
    smooth(&raw, window)
        .into_iter()
        .zip(trace)
        .map(|(elbo, r)| EvalRecord {
            step: r.step,
            model_grad_evals: r.model_grad_evals,
            logp_evals: r.logp_evals,
            wall_ms: r.wall_ms,
            elbo,
        })
        .collect()
}

pub fn best_elbo(curve: &[EvalRecord]) -> Option<f64> {
    curve.iter().map(|r| r.elbo).reduce(f64::max)
}

pub fn first_crossing(curve: &[EvalRecord], threshold: f64) -> Option<&EvalRecord> {
    curve.iter().find(|r| r.elbo >= threshold)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub optimizer: Optimizer,
    pub crossing: Option<EvalRecord>,
    pub best_elbo: f64,
    pub totals: CounterSnapshot,
    pub steps: u64,
    #[serde(skip)]
    pub output: RunOutput,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub reference: String,
    pub threshold: f64,
    pub variants: Vec<VariantResult>,
}

impl BenchReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn all_reached(&self) -> bool {
        self.variants.iter().all(|v| v.crossing.is_some())
    }
}

fn names(variants: &[Optimizer]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in variants {
        let base = v.name();
        let k = out.iter().filter(|n| n.split('-').next() == Some(base)).count();
        out.push(if k == 0 { base.to_string() } else { format!("{base}-{}", k + 1) });
    }
    out
}

/// Runs every variant on the same data and initialization. The threshold is
/// the best ELBO of the first SGD variant minus `threshold.nats`; without an
/// SGD variant, an SGD reference run is added.
pub fn run_bench(cfg: &RunConfig, seed: u64) -> Result<BenchReport> {
    if cfg.variants.len() < 2 {
        return Err(Error::config("variants", "bench needs at least two variants to compare"));
    }
    let mut variants = cfg.variants.clone();
    let reference_index = match variants.iter().position(|v| matches!(v, Optimizer::Sgd {})) {
        Some(i) => i,
        None => {
            variants.push(Optimizer::Sgd {});
            variants.len() - 1
        }
    };
    let names = names(&variants);
    let model = cfg.model.build()?;
    let data = cfg.dataset(&model, seed)?;
    let init = cfg.initial_params(&model, cfg.approximation.factor_size)?;
    let settings = cfg.settings(seed)?;

    let outputs: Vec<RunOutput> = variants
        .par_iter()
        .map(|v| v.run(&model, &data, &init, &settings))
        .collect::<Result<_>>()?;

    let window = cfg.threshold.window;
    let curves: Vec<Vec<EvalRecord>> = outputs.iter().map(|o| curve(&o.trace, &o.evals, window)).collect();
    let reference_best = best_elbo(&curves[reference_index])
        .ok_or_else(|| Error::NonFinite("reference run produced no ELBO values".into()))?;
    let threshold = reference_best - cfg.threshold.nats;

    let variants = variants
        .into_iter()
        .zip(names.iter())
        .zip(outputs.into_iter().zip(&curves))
        .map(|((optimizer, name), (output, c))| VariantResult {
            name: name.clone(),
            optimizer,
            crossing: first_crossing(c, threshold).cloned(),
            best_elbo: best_elbo(c).unwrap_or(f64::NEG_INFINITY),
            totals: output.counters,
            steps: output.trace.len() as u64,
            output,
        })
        .collect();
    Ok(BenchReport {
        seed,
        reference: names[reference_index].clone(),
        threshold,
        variants,
    })
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    variant: &'a str,
    reached: bool,
    step: Option<u64>,
    model_grad_evals: Option<u64>,
    logp_evals: Option<u64>,
    wall_ms: Option<f64>,
    total_model_grad_evals: u64,
    total_logp_evals: u64,
    best_elbo: f64,
}

/// Writes per-variant traces, `comparison.csv` and `summary.json`; rows of
/// variants that never reached the threshold have empty crossing columns.
pub fn cmd_bench(cfg: &RunConfig, seed: u64, out: Option<PathBuf>) -> Result<Outcome> {
    let report = run_bench(cfg, seed)?;
    let dir = output_dir(cfg, out, "out/bench")?;
    for v in &report.variants {
        write_run_files(&dir, &v.name, &v.output.trace, &v.output.evals)?;
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("comparison.csv"))?));
    for v in &report.variants {
        let c = v.crossing.as_ref();
        w.serialize(ComparisonRow {
            variant: &v.name,
            reached: c.is_some(),
            step: c.map(|c| c.step),
            model_grad_evals: c.map(|c| c.model_grad_evals),
            logp_evals: c.map(|c| c.logp_evals),
            wall_ms: c.map(|c| c.wall_ms),
            total_model_grad_evals: v.totals.model_grad_evals,
            total_logp_evals: v.totals.logp_evals,
            best_elbo: v.best_elbo,
        })?;
    }
    w.flush()?;
    write_json(&dir.join("summary.json"), &report)?;
    Ok(if report.all_reached() {
        Outcome::Success
    } else {
        Outcome::ThresholdNotReached
    })
}
