//! Per-step telemetry and its CSV form.
//!
//! Trace CSV columns, in order:
//! `step,step_kind,model_grad_evals,logp_evals,wall_ms,elbo,mean_weight`.
//! Evaluation CSV columns: `step,model_grad_evals,logp_evals,wall_ms,elbo`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const TRACE_HEADER: &str = "step,step_kind,model_grad_evals,logp_evals,wall_ms,elbo,mean_weight";
pub const EVAL_HEADER: &str = "step,model_grad_evals,logp_evals,wall_ms,elbo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    /// The step's gradient needed new model evaluations.
    Fresh,
    /// The step's gradient came entirely from a cache.
    Reuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub step_kind: StepKind,
    pub model_grad_evals: u64,
    pub logp_evals: u64,
    pub wall_ms: f64,
    /// Mini-batch ELBO estimate at this step.
    pub elbo: f64,
    /// Mean importance weight; 1 on fresh steps.
    pub mean_weight: f64,
}

/// Full-data ELBO at fixed base draws, taken periodically; not counted as
/// model evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub model_grad_evals: u64,
    pub logp_evals: u64,
    pub wall_ms: f64,
    pub elbo: f64,
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T], header: &str) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Into::into))
        .collect()
}

pub fn write_trace<W: Write>(writer: W, rows: &[TraceRecord]) -> Result<()> {
    write_rows(writer, rows, TRACE_HEADER)
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>> {
    read_rows(reader)
}

pub fn write_evals<W: Write>(writer: W, rows: &[EvalRecord]) -> Result<()> {
    write_rows(writer, rows, EVAL_HEADER)
}

pub fn read_evals<R: Read>(reader: R) -> Result<Vec<EvalRecord>> {
    read_rows(reader)
}

/// Trailing moving average with the given window.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
