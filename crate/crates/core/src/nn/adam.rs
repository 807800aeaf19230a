//! Named trainable parameters and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// A named tensor with Adam state.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.numel();
        Parameter {
            name: name.into(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Truncated-normal init (resample outside two standard deviations).
    pub fn trunc_normal(
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                data.push(z * std);
            }
        }
        Parameter::new(name, Tensor::from_vec(shape, data).expect("counted"))
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Parameter::new(name, Tensor::zeros(shape))
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Parameter::new(name, Tensor::filled(shape, 1.0))
    }

    /// First and second moment vectors (testing hook).
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

/// Adam hyperparameters; defaults follow the usual (0.9, 0.999, 1e-8) with
/// the training learning rate of 1e-4.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// One bias-corrected Adam update over all parameters. `grads[i]` pairs with
/// `params[i]`; a missing gradient is treated as zero (moments still decay).
pub fn adam_step(
    params: &mut [Parameter],
    grads: &[Option<Tensor>],
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "adam_step: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        let zero;
        let g = match g {
            Some(g) => {
                if g.shape != p.value.shape {
                    return Err(Error::shape(format!(
                        "adam_step: gradient shape {:?} != parameter \"{}\" shape {:?}",
                        g.shape, p.name, p.value.shape
                    )));
                }
                g
            }
            None => {
                zero = Tensor::zeros(&p.value.shape);
                &zero
            }
        };
        if !g.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite gradient for parameter \"{}\"",
                p.name
            )));
        }
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..p.value.data.len() {
            let gi = g.data[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            p.value.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Convenience for tests: random gradient-shaped tensor.
pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, range: f64) -> Tensor {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-range..range))
        .collect();
    Tensor::from_vec(shape, data).expect("counted")
}
