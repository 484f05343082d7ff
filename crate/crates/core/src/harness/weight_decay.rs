use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{importance_weights, EstimatorConfig, ReuseOutcome};
use crate::models::{partition_batches, EvalCounters, MiniBatch, Model, Target};
use crate::optimizers::AdamState;
use crate::rng::{replicate, stream, Stream};

use super::{mean_sd, output_dir, write_json, Outcome, RunConfig};

/// Mean factor weight after each parameter update, averaged over replicates.
#[derive(Debug, Clone, Serialize)]
pub struct FactorCurve {
    pub factor_size: usize,
    /// Entry `k − 1` is the mean weight after `k` updates.
    pub mean_weight: Vec<f64>,
    pub std_error: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightDecayReport {
    pub seed: u64,
    pub replicates: usize,
    pub learning_rate: f64,
    pub curves: Vec<FactorCurve>,
}

impl WeightDecayReport {
    pub fn curve(&self, factor_size: usize) -> Option<&FactorCurve> {
        self.curves.iter().find(|c| c.factor_size == factor_size)
    }

    /// Whether, after every number of updates, the mean weight does not
    /// increase with the factor size.
    pub fn non_increasing_in_size(&self) -> bool {
        let mut curves: Vec<&FactorCurve> = self.curves.iter().collect();
        curves.sort_by_key(|c| c.factor_size);
        let steps = curves.first().map_or(0, |c| c.mean_weight.len());
        (0..steps).all(|k| curves.windows(2).all(|w| w[1].mean_weight[k] <= w[0].mean_weight[k]))
    }
}

/// For each factor size and replicate: draw one cache at the initial
/// parameters, take a step with its fresh gradient, then keep stepping with
/// importance-sampled gradients from that same cache, recording the mean
/// factor weight after every update. Replicate `r` uses the same draws for
/// every factor size.
pub fn run_weight_decay(cfg: &RunConfig, seed: u64) -> Result<WeightDecayReport> {
    let wd = cfg.weight_decay.clone().unwrap_or_default();
    let model = cfg.model.build()?;
    let data = cfg.dataset(&model, seed)?;
    let settings = cfg.settings(seed)?;
    let batch = if data.is_empty() {
        MiniBatch::prior_only(0)
    } else if cfg.batch_size >= data.len() {
        MiniBatch::full(data.len())
    } else {
        partition_batches(data.len(), cfg.batch_size, Some(&mut stream(seed, Stream::Schedule)))?
            .swap_remove(0)
    };
    let est_cfg = EstimatorConfig {
        weight_ceiling: f64::INFINITY,
        ..settings.estimator_config
    };
    let d = model.latent_dim();

    let mut curves = Vec::with_capacity(wd.factor_sizes.len());
    for &size in &wd.factor_sizes {
        let per_rep: Vec<Vec<f64>> = (0..wd.replicates)
            .into_par_iter()
            .map(|r| -> Result<Vec<f64>> {
                let counters = EvalCounters::default();
                let target = Target::new(&model, &data, &counters);
                let mut rng = replicate(seed, Stream::Samples, r as u64);
                let mut params = cfg.initial_params(&model, size)?;
                let mut adam = AdamState::new(2 * d, settings.adam);
                let fresh = settings.estimator.fresh(&params, &target, &batch, &est_cfg, &mut rng)?;
                adam.step(&mut params, &fresh.gradient)?;
                let mut weights = Vec::with_capacity(wd.reuse_steps);
                for k in 1..=wd.reuse_steps {
                    weights.push(importance_weights(&fresh.cache, &params)?.0.mean_weight());
                    if k == wd.reuse_steps {
                        break;
                    }
                    match settings.estimator.reuse(&fresh.cache, &params, &est_cfg)? {
                        ReuseOutcome::Accepted(e) if e.gradient.is_finite() => adam.step(&mut params, &e.gradient)?,
                        ReuseOutcome::Accepted(_) => {
                            return Err(Error::NonFinite(format!("reuse gradient, factor size {size}")))
                        }
                        ReuseOutcome::Refused { .. } => unreachable!("ceiling is infinite"),
                    }
                }
                Ok(weights)
            })
            .collect::<Result<_>>()?;
        let (mut mean_weight, mut std_error) = (Vec::new(), Vec::new());
        for k in 0..wd.reuse_steps {
            let col: Vec<f64> = per_rep.iter().map(|w| w[k]).collect();
            let (m, sd) = mean_sd(&col);
            mean_weight.push(m);
            std_error.push(sd / (col.len() as f64).sqrt());
        }
        curves.push(FactorCurve {
            factor_size: size,
            mean_weight,
            std_error,
        });
    }
    Ok(WeightDecayReport {
        seed,
        replicates: wd.replicates,
        learning_rate: cfg.adam.learning_rate,
        curves,
    })
}

#[derive(Serialize)]
struct Row {
    reuse_step: usize,
    mean_weight: f64,
    std_error: f64,
    replicates: usize,
}

/// Writes `weight_decay_size_<s>.csv` per factor size and `summary.json`.
pub fn cmd_weight_decay(cfg: &RunConfig, seed: u64, out: Option<PathBuf>) -> Result<Outcome> {
    let report = run_weight_decay(cfg, seed)?;
    let dir = output_dir(cfg, out, "out/weight-decay")?;
    for c in &report.curves {
        let path = dir.join(format!("weight_decay_size_{}.csv", c.factor_size));
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for (k, (m, se)) in c.mean_weight.iter().zip(&c.std_error).enumerate() {
            w.serialize(Row {
                reuse_step: k + 1,
                mean_weight: *m,
                std_error: *se,
                replicates: report.replicates,
            })?;
        }
        w.flush()?;
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        #[serde(flatten)]
        report: &'a WeightDecayReport,
        non_increasing_in_size: bool,
    }
    write_json(
        &dir.join("summary.json"),
        &Summary {
            report: &report,
            non_increasing_in_size: report.non_increasing_in_size(),
        },
    )?;
    Ok(Outcome::Success)
}
