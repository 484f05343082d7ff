use serde::{Deserialize, Serialize};

use crate::approximation::{FactorizedApproxParams, GradientVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step-size decay: after `t` updates the step size is
    /// `learning_rate · (1 + t / decay_steps)^(−decay_power)`. Constant when
    /// absent.
    pub decay_steps: Option<f64>,
    pub decay_power: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_steps: None,
            decay_power: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("adam.learning_rate", "must be finite and ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("adam.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam.beta2", "must be in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("adam.epsilon", "must be > 0"));
        }
        if self.decay_steps.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::config("adam.decay_steps", "must be finite and > 0 when set"));
        }
        if !(self.decay_power >= 0.0 && self.decay_power.is_finite()) {
            return Err(Error::config("adam.decay_power", "must be finite and ≥ 0"));
        }
        Ok(())
    }

    /// Step size for the update that follows `t` earlier updates.
    pub fn step_size(&self, t: u64) -> f64 {
        match self.decay_steps {
            Some(d) => self.learning_rate * (1.0 + t as f64 / d).powf(-self.decay_power),
            None => self.learning_rate,
        }
    }
}

/// Adam moments for gradient ascent on the ELBO.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            config,
        }
    }

    /// `params += lr · m̂ / (√v̂ + ε)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut FactorizedApproxParams, grad: &GradientVector) -> Result<()> {
        let n = self.first_moment.len();
        if grad.0.len() != n || params.values().len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: grad.0.len().min(params.values().len()),
            });
        }
        let learning_rate = self.config.step_size(self.step_count);
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((theta, g), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(&grad.0)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *theta += learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
        Ok(())
    }
}
