use serde::{Deserialize, Serialize};

use super::grad::Gradients;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected adaptive moment estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub hyper: AdamConfig,
}

impl OptimizerState {
    /// Zeroed accumulators shaped like `params`.
    pub fn new(hyper: AdamConfig, params: &[&[f32]]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            hyper,
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: Vec<&mut [f32]>, grads: &Gradients) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (i, p) in params.into_iter().enumerate() {
            let g = grads.tensor(i);
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape(format!("tensor {i} changed shape")));
            }
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let update = learning_rate * (m[j] / bc1) / ((v[j] / bc2).sqrt() + epsilon);
                p[j] = (p[j] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn optimizer_step(
    params: Vec<&mut [f32]>,
    grads: &Gradients,
    mut state: OptimizerState,
) -> Result<OptimizerState> {
    state.step(params, grads)?;
    Ok(state)
}
