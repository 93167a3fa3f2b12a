use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub amsgrad: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            amsgrad: true,
        }
    }
}

/// Adam with decoupled weight decay and the optional AMSGrad running maximum.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    max_second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect::<Vec<_>>();
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
            max_second_moment: if config.amsgrad { zeros() } else { Vec::new() },
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn max_second_moment(&self) -> &[Vec<f64>] {
        &self.max_second_moment
    }

    /// Applies one update and clears every parameter's gradient.
    ///
    /// All gradients are validated before any parameter is touched, so a
    /// missing gradient leaves the parameters and moments unchanged.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(shape_err(
                "adamw_step",
                format!(
                    "optimizer tracks {} tensors, got {}",
                    self.first_moment.len(),
                    params.len()
                ),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.first_moment[i].len() {
                return Err(shape_err(
                    "adamw_step",
                    format!("parameter {i} changed size to {}", p.numel()),
                ));
            }
            if p.grad().is_none() {
                return Err(Error::Contract(format!(
                    "parameter {i} has no gradient; call backward before stepping"
                )));
            }
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2_sqrt = (1.0 - c.beta2.powi(t)).sqrt();
        let step_size = c.learning_rate / bias1;
        let decay = 1.0 - c.learning_rate * c.weight_decay;

        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().expect("checked above").to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grad[j];
                data[j] *= decay;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let v_used = if c.amsgrad {
                    let vmax = &mut self.max_second_moment[i][j];
                    if v[j] > *vmax {
                        *vmax = v[j];
                    }
                    *vmax
                } else {
                    v[j]
                };
                let denom = v_used.sqrt() / bias2_sqrt + c.epsilon;
                data[j] -= step_size * m[j] / denom;
            }
            p.clear_grad();
        }
        Ok(())
    }
}
