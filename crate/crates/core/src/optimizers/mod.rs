//! Stochastic optimizers over the approximation parameters.
//!
//! Every run owns its generators, Adam state and caches, and returns the
//! final parameters together with one [`TraceRecord`] per step. The
//! generators are separate streams of the run seed: base samples, batch
//! schedule, reuse decisions and evaluation draws never share a stream.

mod adam;
mod driver;
mod sag;
mod sgd;

use serde::{Deserialize, Serialize};

use crate::approximation::FactorizedApproxParams;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::models::{AnyModel, CounterSnapshot, Dataset};
use crate::trace::{EvalRecord, TraceRecord};

pub use adam::{AdamConfig, AdamState};
pub use sag::{isag_direction, isag_run, sag_run, sra_run, Direction};
pub use sgd::{isgd_run, sgd_run};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ISgdConfig {
    /// Probability `t` of another step on the cached samples.
    pub reuse_probability: f64,
    /// Cap on consecutive reuse steps per cache.
    pub max_reuse_steps: usize,
}

impl Default for ISgdConfig {
    fn default() -> Self {
        Self {
            reuse_probability: 0.9,
            max_reuse_steps: 50,
        }
    }
}

impl ISgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.reuse_probability) {
            return Err(Error::config(
                "reuse_probability",
                format!("must be in [0, 1), got {}", self.reuse_probability),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ISagConfig {
    /// Keep only the most recently visited `K` batches; all when absent.
    pub latest_k: Option<usize>,
    /// Expected number of batches; checked against the partition when set.
    pub batches_per_epoch: Option<usize>,
    /// One I-SGD pass that fills the gradient table before the main loop.
    pub init: Option<ISgdConfig>,
}

impl Default for ISagConfig {
    fn default() -> Self {
        Self {
            latest_k: None,
            batches_per_epoch: None,
            init: Some(ISgdConfig::default()),
        }
    }
}

impl ISagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latest_k == Some(0) {
            return Err(Error::config("latest_k", "must be ≥ 1 when set"));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::config("batches_per_epoch", "must be ≥ 1 when set"));
        }
        if let Some(init) = &self.init {
            init.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SraConfig {
    /// Decay `α` of the running average.
    pub decay: f64,
    /// Optional I-SGD pass before the main loop, as for SAG.
    pub init: Option<ISgdConfig>,
}

impl Default for SraConfig {
    fn default() -> Self {
        Self {
            decay: 0.9,
            init: None,
        }
    }
}

impl SraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("decay", format!("must be in (0, 1), got {}", self.decay)));
        }
        if let Some(init) = &self.init {
            init.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopRule {
    pub max_epochs: usize,
    pub max_steps: Option<u64>,
    pub max_grad_evals: Option<u64>,
    pub max_logp_evals: Option<u64>,
    /// Stop when the per-epoch ELBO improves by a relative `< 1e-4` over
    /// 5 epochs.
    pub plateau: bool,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_epochs: 10,
            max_steps: None,
            max_grad_evals: None,
            max_logp_evals: None,
            plateau: false,
        }
    }
}

pub const PLATEAU_EPOCHS: usize = 5;
pub const PLATEAU_TOLERANCE: f64 = 1e-4;

/// Periodic full-data ELBO at a fixed set of base draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Evaluate after every this many steps; once per epoch when absent.
    pub every_steps: Option<u64>,
    pub num_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            every_steps: None,
            num_samples: 10,
        }
    }
}

/// Settings shared by every optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub estimator: EstimatorKind,
    pub estimator_config: EstimatorConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub stop: StopRule,
    pub seed: u64,
    pub eval: Option<EvalSettings>,
    /// Record elapsed time; when off, `wall_ms` is 0 and traces are
    /// byte-reproducible.
    pub wall_clock: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Reparam,
            estimator_config: EstimatorConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 100,
            stop: StopRule::default(),
            seed: 0,
            eval: None,
            wall_clock: true,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.estimator_config.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be ≥ 1"));
        }
        if let Some(e) = &self.eval {
            if e.num_samples == 0 {
                return Err(Error::config("eval.num_samples", "must be ≥ 1"));
            }
            if e.every_steps == Some(0) {
                return Err(Error::config("eval.every_steps", "must be ≥ 1 when set"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Epochs,
    Steps,
    GradEvals,
    LogpEvals,
    Plateau,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub params: FactorizedApproxParams,
    pub trace: Vec<TraceRecord>,
    pub evals: Vec<EvalRecord>,
    pub counters: CounterSnapshot,
    pub epochs: usize,
    pub stop_reason: StopReason,
}

/// An optimizer and its own settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {},
    Isgd(ISgdConfig),
    Sag(ISagConfig),
    Isag(ISagConfig),
    Sra(SraConfig),
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd {} => "sgd",
            Optimizer::Isgd(_) => "isgd",
            Optimizer::Sag(_) => "sag",
            Optimizer::Isag(_) => "isag",
            Optimizer::Sra(_) => "sra",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Optimizer::Sgd {} => Ok(()),
            Optimizer::Isgd(c) => c.validate(),
            Optimizer::Sag(c) | Optimizer::Isag(c) => c.validate(),
            Optimizer::Sra(c) => c.validate(),
        }
    }

    pub fn run(
        &self,
        model: &AnyModel,
        data: &Dataset,
        init: &FactorizedApproxParams,
        settings: &RunSettings,
    ) -> Result<RunOutput> {
        match self {
            Optimizer::Sgd {} => sgd_run(model, data, init, settings),
            Optimizer::Isgd(c) => isgd_run(model, data, init, c, settings),
            Optimizer::Sag(c) => sag_run(model, data, init, c, settings),
            Optimizer::Isag(c) => isag_run(model, data, init, c, settings),
            Optimizer::Sra(c) => sra_run(model, data, init, c, settings),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reuse_probability_bounds() {
        let bad = ISgdConfig {
            reuse_probability: 1.5,
            ..Default::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("reuse_probability"));
        assert!(ISgdConfig { reuse_probability: 1.0, ..Default::default() }.validate().is_err());
        assert!(ISgdConfig { reuse_probability: 0.0, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn sra_decay_bounds() {
        for bad in [0.0, 1.0, -0.5] {
            assert!(SraConfig { decay: bad, init: None }.validate().is_err());
        }
        assert!(SraConfig { decay: 1e-9, init: None }.validate().is_ok());
    }

    #[test]
    fn latest_k_positive() {
        let c = ISagConfig { latest_k: Some(0), ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn optimizer_from_toml() {
        let o: Optimizer = toml::from_str("kind = \"isgd\"\nreuse_probability = 0.5").unwrap();
        assert_eq!(
            o,
            Optimizer::Isgd(ISgdConfig {
                reuse_probability: 0.5,
                max_reuse_steps: 50
            })
        );
        assert!(toml::from_str::<Optimizer>("kind = \"sgd\"\nbogus = 1").is_err());
    }
}
