use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::tape::{Grads, ParamSet};
use crate::error::{Error, Result};

/// Adam hyperparameters; defaults are the usual Keras values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|p| Mat::zeros(p.value.rows(), p.value.cols())).collect();
        AdamState { config, step: 0, first: zeros.clone(), second: zeros }
    }
}

/// One Adam update with bias correction folded into the step size:
/// `lr_t = lr * sqrt(1 - β2^t) / (1 - β1^t)`, `θ -= lr_t * m / (sqrt(v) + ε)`.
pub fn adam_step(params: &mut ParamSet, grads: &Grads, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for (id, g) in params.ids().zip(grads.iter()) {
        if params.get(id).shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter `{}` of shape {:?}",
                g.shape(),
                params.name(id),
                params.get(id).shape()
            )));
        }
    }
    state.step += 1;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let lr_t = learning_rate * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
    for (i, id) in params.ids().enumerate().collect::<Vec<_>>() {
        let g = grads.get(id).data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let theta = params.get_mut(id).data_mut();
        for j in 0..g.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            theta[j] -= lr_t * m[j] / (v[j].sqrt() + epsilon);
        }
    }
    Ok(())
}
