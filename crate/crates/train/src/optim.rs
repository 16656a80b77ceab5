//! Decoupled-weight-decay adaptive moment optimizer.

use expnet_core::Tensor;

use crate::config::TrainConfig;
use crate::error::TrainError;

pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: &TrainConfig, param_sizes: &[usize]) -> Self {
        AdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            step: 0,
            first: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update over all parameters. Moment estimates are bias-corrected;
    /// the decay term applies to the pre-step parameter value, independent of
    /// the gradient.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &[Vec<f64>],
    ) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(TrainError::invalid(format!(
                "optimizer state for {} parameters, got {} params and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((name, tensor), grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(&mut self.second))
        {
            if tensor.numel() != grad.len() {
                return Err(TrainError::invalid(format!(
                    "parameter {name}: {} values but {} gradient entries",
                    tensor.numel(),
                    grad.len()
                )));
            }
            let values = tensor.values_mut();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let old = values[i];
                values[i] =
                    old - self.lr * m_hat / (v_hat.sqrt() + self.eps) - self.lr * self.weight_decay * old;
            }
        }
        Ok(())
    }
}
