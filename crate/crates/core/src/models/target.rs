use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::error::Result;

use super::{grad_log_joint, log_joint, AnyModel, Dataset, MiniBatch, Model};

/// Counts model evaluations. Gradient evaluations are what importance
/// sampling saves; log-density evaluations are what the score-function
/// estimator spends.
#[derive(Debug, Default)]
pub struct EvalCounters {
    model_grad: AtomicU64,
    logp: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub model_grad_evals: u64,
    pub logp_evals: u64,
}

impl EvalCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            model_grad_evals: self.model_grad.load(Ordering::Relaxed),
            logp_evals: self.logp.load(Ordering::Relaxed),
        }
    }
}

/// A model bound to its data, with every evaluation counted.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub model: &'a AnyModel,
    pub data: &'a Dataset,
    counters: &'a EvalCounters,
}

impl<'a> Target<'a> {
    pub fn new(model: &'a AnyModel, data: &'a Dataset, counters: &'a EvalCounters) -> Self {
        Self {
            model,
            data,
            counters,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    pub fn log_joint(&self, batch: &MiniBatch, z: &[f64]) -> Result<f64> {
        self.counters.logp.fetch_add(1, Ordering::Relaxed);
        log_joint(self.model, self.data, batch, z)
    }

    pub fn grad_log_joint(&self, batch: &MiniBatch, z: &[f64]) -> Result<Vec<f64>> {
        self.counters.model_grad.fetch_add(1, Ordering::Relaxed);
        grad_log_joint(self.model, self.data, batch, z)
    }

    /// Uncounted evaluation, for monitoring only.
    pub fn log_joint_uncounted(&self, batch: &MiniBatch, z: &[f64]) -> Result<f64> {
        log_joint(self.model, self.data, batch, z)
    }
}
