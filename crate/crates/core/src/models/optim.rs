use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer hyperparameters. ADAM defaults are `beta1 = 0.9`,
/// `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub step_size: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(step_size: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            step_size,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(step_size: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..OptimizerConfig::sgd(step_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config("optimizer step size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("ADAM betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("ADAM epsilon must be positive"));
        }
        Ok(())
    }
}

/// Optimizer plus its running moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, len: usize) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            steps: 0,
        })
    }

    /// Descent step on `model`. A non-finite gradient leaves both the model
    /// and the optimizer untouched.
    pub fn step(&mut self, model: &mut ModelState, gradient: &[f64]) -> Result<()> {
        self.step_params(&mut model.params, gradient)
    }

    pub fn step_params(&mut self, params: &mut [f64], gradient: &[f64]) -> Result<()> {
        if gradient.len() != params.len() || params.len() != self.first_moment.len() {
            return Err(Error::input(format!(
                "gradient length {} does not match {} parameters",
                gradient.len(),
                params.len()
            )));
        }
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(
                "gradient contains non-finite entries".into(),
            ));
        }
        let c = self.config;
        self.steps += 1;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(gradient) {
                    *p -= c.step_size * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(gradient)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= c.step_size * m_hat / (v_hat.sqrt() + c.eps);
                }
            }
        }
        Ok(())
    }
}
