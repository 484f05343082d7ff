//! TOML run configuration. Unknown keys anywhere are errors.
//!
//! ```toml
//! seed = 7
//! batch_size = 100
//!
//! [model]
//! kind = "conjugate-normal-known-variance"
//! dim = 2
//!
//! [data]
//! n = 1000
//!
//! [optimizer]
//! kind = "isgd"
//! reuse_probability = 0.9
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::approximation::{FactorPartition, FactorizedApproxParams, DEFAULT_INIT_LOG_SCALE};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::models::{make_synthetic, AnyModel, Dataset, Model, ModelSpec};
use crate::optimizers::{AdamConfig, EvalSettings, Optimizer, RunSettings, StopRule};
use crate::rng::{stream, Stream};

fn yes() -> bool {
    true
}

fn default_batch_size() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required here or on the command line.
    pub seed: Option<u64>,
    /// Output directory; `--out` overrides.
    pub out: Option<PathBuf>,
    /// Record elapsed time in traces; off makes trace files byte-identical
    /// across runs.
    #[serde(default = "yes")]
    pub wall_clock: bool,
    pub model: ModelSpec,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub approximation: ApproxConfig,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub stop: StopRule,
    pub eval: Option<EvalSettings>,
    /// For `fit`.
    pub optimizer: Option<Optimizer>,
    /// For `bench`.
    #[serde(default)]
    pub variants: Vec<Optimizer>,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    /// For `weight-decay`.
    pub weight_decay: Option<WeightDecayConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Synthetic dataset size; ignored when `path` is set.
    pub n: usize,
    /// CSV with columns `x0..x{D-1}` and optionally `y`.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n: 1000, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxConfig {
    /// Coordinates per factor; the last factor may be smaller.
    pub factor_size: usize,
    pub init_location: f64,
    pub init_log_scale: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            factor_size: 1,
            init_location: 0.0,
            init_log_scale: DEFAULT_INIT_LOG_SCALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub kind: EstimatorKind,
    pub num_samples: usize,
    pub weight_floor: f64,
    pub weight_ceiling: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let c = EstimatorConfig::default();
        Self {
            kind: EstimatorKind::Reparam,
            num_samples: c.num_samples,
            weight_floor: c.weight_floor,
            weight_ceiling: c.weight_ceiling,
        }
    }
}

impl EstimatorSection {
    pub fn config(&self) -> EstimatorConfig {
        EstimatorConfig {
            num_samples: self.num_samples,
            weight_floor: self.weight_floor,
            weight_ceiling: self.weight_ceiling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    /// Nats below the reference run's best smoothed ELBO.
    pub nats: f64,
    /// Moving-average window over per-step ELBOs, used when no `[eval]`
    /// section is configured.
    pub window: usize,
    /// Absolute ELBO threshold for `fit`.
    pub elbo: Option<f64>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            nats: 1.0,
            window: 100,
            elbo: None,
        }
    }
}

pub const DEFAULT_FACTOR_SIZES: [usize; 6] = [1, 5, 10, 25, 50, 100];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightDecayConfig {
    pub factor_sizes: Vec<usize>,
    pub replicates: usize,
    /// Parameter updates after the samples are drawn.
    pub reuse_steps: usize,
}

impl Default for WeightDecayConfig {
    fn default() -> Self {
        Self {
            factor_sizes: DEFAULT_FACTOR_SIZES.to_vec(),
            replicates: 100,
            reuse_steps: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string().trim_end()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::config("seed", "a seed is required (in the config or via --seed)"))
    }

    /// Checks everything that does not depend on the command.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.model.build()?;
        self.settings(0)?.validate()?;
        if self.approximation.factor_size == 0 {
            return Err(Error::config("approximation.factor_size", "must be ≥ 1"));
        }
        if !self.approximation.init_location.is_finite() || !self.approximation.init_log_scale.is_finite() {
            return Err(Error::config("approximation", "initial values must be finite"));
        }
        if self.data.path.is_none() && self.data.n == 0 {
            return Err(Error::config("data.n", "must be ≥ 1"));
        }
        if !(self.threshold.nats >= 0.0) {
            return Err(Error::config("threshold.nats", "must be ≥ 0"));
        }
        if self.threshold.window == 0 {
            return Err(Error::config("threshold.window", "must be ≥ 1"));
        }
        if let Some(o) = &self.optimizer {
            o.validate()?;
        }
        for v in &self.variants {
            v.validate()?;
        }
        if let Some(w) = &self.weight_decay {
            if w.factor_sizes.is_empty() || w.factor_sizes.contains(&0) {
                return Err(Error::config("weight_decay.factor_sizes", "need at least one size, all ≥ 1"));
            }
            if w.replicates == 0 {
                return Err(Error::config("weight_decay.replicates", "must be ≥ 1"));
            }
            if w.reuse_steps == 0 {
                return Err(Error::config("weight_decay.reuse_steps", "must be ≥ 1"));
            }
        }
        Ok(())
    }

    pub fn settings(&self, seed: u64) -> Result<RunSettings> {
        let s = RunSettings {
            estimator: self.estimator.kind,
            estimator_config: self.estimator.config(),
            adam: self.adam,
            batch_size: self.batch_size,
            stop: self.stop,
            seed,
            eval: self.eval,
            wall_clock: self.wall_clock,
        };
        s.validate()?;
        Ok(s)
    }

    /// Loads the CSV, or draws a synthetic dataset from the data stream.
    pub fn dataset(&self, model: &AnyModel, seed: u64) -> Result<Dataset> {
        match &self.data.path {
            Some(p) => {
                let data = Dataset::read_csv(std::fs::File::open(p)?)?;
                if data.dim() != model.data_dim() {
                    return Err(Error::config(
                        "data.path",
                        format!("expected {} feature columns, found {}", model.data_dim(), data.dim()),
                    ));
                }
                Ok(data)
            }
            None => make_synthetic(model, &mut stream(seed, Stream::Data), self.data.n),
        }
    }

    pub fn initial_params(&self, model: &AnyModel, factor_size: usize) -> Result<FactorizedApproxParams> {
        let d = model.latent_dim();
        FactorizedApproxParams::with_init(
            model.layout().clone(),
            FactorPartition::chunks(d, factor_size.min(d))?,
            self.approximation.init_location,
            self.approximation.init_log_scale,
        )
    }
}
