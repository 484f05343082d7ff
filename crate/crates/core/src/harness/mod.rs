//! Run configuration and the `fit`, `weight-decay` and `bench` commands.
//!
//! Each command has a `run_*` function returning an in-memory report and a
//! `cmd_*` wrapper that also writes CSV traces and a JSON summary into an
//! output directory.

mod bench;
mod config;
mod fit;
mod weight_decay;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::approximation::{sample_epsilon, FactorizedApproxParams};
use crate::error::{Error, Result};
use crate::models::{AnyModel, Dataset, MiniBatch};
use crate::rng::SeededRng;
use crate::trace::{write_evals, write_trace, EvalRecord, TraceRecord};

pub use bench::{
    best_elbo, cmd_bench, curve, first_crossing, run_bench, BenchReport, VariantResult,
};
pub use config::{
    ApproxConfig, DataConfig, EstimatorSection, RunConfig, ThresholdConfig, WeightDecayConfig,
    DEFAULT_FACTOR_SIZES,
};
pub use fit::{cmd_fit, run_fit, FitReport, FitSummary};
pub use weight_decay::{cmd_weight_decay, run_weight_decay, FactorCurve, WeightDecayReport};

/// How a command ended, short of an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    ThresholdNotReached,
}

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_THRESHOLD: i32 = 3;

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Success) => EXIT_SUCCESS,
        Ok(Outcome::ThresholdNotReached) => EXIT_THRESHOLD,
        Err(Error::Config { .. }) => EXIT_CONFIG,
        Err(_) => EXIT_RUNTIME,
    }
}

/// Loads and validates a config, applying a command-line seed.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<(RunConfig, u64)> {
    let mut cfg = RunConfig::load(path)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let seed = cfg.seed()?;
    Ok((cfg, seed))
}

pub fn output_dir(cfg: &RunConfig, out: Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn write_run_files(dir: &Path, name: &str, trace: &[TraceRecord], evals: &[EvalRecord]) -> Result<()> {
    write_trace(BufWriter::new(File::create(dir.join(format!("{name}.trace.csv")))?), trace)?;
    if !evals.is_empty() {
        write_evals(BufWriter::new(File::create(dir.join(format!("{name}.eval.csv")))?), evals)?;
    }
    Ok(())
}

/// Full-data ELBO estimate with its Monte Carlo standard error, uncounted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub num_samples: usize,
}

pub fn estimate_elbo(
    model: &AnyModel,
    data: &Dataset,
    params: &FactorizedApproxParams,
    num_samples: usize,
    rng: &mut SeededRng,
) -> Result<ElboEstimate> {
    let batch = if data.is_empty() {
        MiniBatch::prior_only(0)
    } else {
        MiniBatch::full(data.len())
    };
    let mut values = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let eps = sample_epsilon(rng, params.dim())?;
        let z = params.forward(&eps)?;
        values.push(crate::models::log_joint(model, data, &batch, &z)? - params.log_density_at(&eps)?);
    }
    let (mean, sd) = mean_sd(&values);
    Ok(ElboEstimate {
        mean,
        std_error: sd / (num_samples as f64).sqrt(),
        num_samples,
    })
}

/// Sample mean and standard deviation (`n − 1` denominator).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
