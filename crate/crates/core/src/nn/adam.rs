use super::Param;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

/// Adam with bias correction. Moments are created lazily on the first step,
/// in the order the parameters are presented.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update to every parameter from its accumulated gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, &'a mut Param<T>)>,
    {
        let mut params: Vec<(String, &'a mut Param<T>)> = params.into_iter().collect();
        for (name, p) in &params {
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(name, p)| Moments {
                    name: name.clone(),
                    first: Tensor::zeros(p.value.shape()),
                    second: Tensor::zeros(p.value.shape()),
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for ((name, p), m) in params.iter().zip(&self.moments) {
            if *name != m.name || p.value.shape() != m.first.shape() {
                return Err(Error::Shape(format!(
                    "optimizer state for {} does not match parameter {name} {:?}",
                    m.name,
                    p.value.shape()
                )));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - beta2.powi(self.step_count as i32);
        for ((_, p), m) in params.iter_mut().zip(self.moments.iter_mut()) {
            let values = p.value.data_mut();
            let grads = p.grad.data();
            let first = m.first.data_mut();
            let second = m.second.data_mut();
            for i in 0..values.len() {
                let g = grads[i].as_f64();
                let m1 = beta1 * first[i].as_f64() + (1.0 - beta1) * g;
                let m2 = beta2 * second[i].as_f64() + (1.0 - beta2) * g * g;
                first[i] = T::of(m1);
                second[i] = T::of(m2);
                let update = lr * (m1 / bc1) / ((m2 / bc2).sqrt() + epsilon);
                values[i] = T::of(values[i].as_f64() - update);
            }
        }
        Ok(())
    }
}
