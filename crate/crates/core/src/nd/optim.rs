use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::mlp::MlpParams;
use crate::nd::tensor::Tensor2;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, learning_rate }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Optimizer state for one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    moments: Vec<(Tensor2, Tensor2)>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer { config, step: 0, moments: Vec::new() })
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    /// Applies one update in place. Gradient shapes must mirror the parameters.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        if params.layers.len() != grads.layers.len() {
            return Err(Error::dim("optimizer step layers", params.layers.len(), grads.layers.len()));
        }
        for (i, (p, g)) in params.tensors().zip(grads.tensors()).enumerate() {
            if !p.same_shape(g) {
                return Err(Error::dim(
                    format!("optimizer step tensor {i}"),
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().zip(grads.tensors()) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.moments.is_empty() {
                    self.moments = grads
                        .tensors()
                        .map(|g| (Tensor2::zeros(g.rows(), g.cols()), Tensor2::zeros(g.rows(), g.cols())))
                        .collect();
                }
                self.step += 1;
                let bc1 = 1.0 - BETA1.powi(self.step as i32);
                let bc2 = 1.0 - BETA2.powi(self.step as i32);
                for ((p, g), (m, v)) in params.tensors_mut().zip(grads.tensors()).zip(&mut self.moments) {
                    let (pd, gd) = (p.data_mut(), g.data());
                    for (j, &gv) in gd.iter().enumerate() {
                        let mj = &mut m.data_mut()[j];
                        *mj = BETA1 * *mj + (1.0 - BETA1) * gv;
                        let m_hat = *mj / bc1;
                        let vj = &mut v.data_mut()[j];
                        *vj = BETA2 * *vj + (1.0 - BETA2) * gv * gv;
                        let v_hat = *vj / bc2;
                        pd[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
