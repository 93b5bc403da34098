use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[B, C, L]`, restricted to the first
/// `lengths[b]` steps of each sequence. Padded steps come out as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

/// Batch statistics from one training forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    lengths: Vec<usize>,
    count: usize,
    train: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(
        &self,
        input: &Tensor<T>,
        lengths: &[usize],
        mode: Mode,
    ) -> Result<(Tensor<T>, BatchNormCache<T>, Option<BatchNormStats>)> {
        let [b, c, l] = input.dims::<3>()?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batchnorm has {} channels, input has {c}",
                self.channels()
            )));
        }
        if lengths.len() != b || lengths.iter().any(|&n| n > l) {
            return Err(Error::Shape(format!(
                "batchnorm lengths {lengths:?} do not fit input {:?}",
                input.shape()
            )));
        }
        let count: usize = lengths.iter().sum();
        let x = input.data();
        let eps = BN_EPSILON;

        let (mean, var, stats) = if mode.is_train() {
            if count < 2 {
                return Err(Error::Invalid(format!(
                    "batchnorm in training mode needs more than one value per channel, got {count}"
                )));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut s = 0.0;
                for (bi, &n) in lengths.iter().enumerate() {
                    let row = (bi * c + ch) * l;
                    s += x[row..row + n].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let m = s / count as f64;
                let mut ss = 0.0;
                for (bi, &n) in lengths.iter().enumerate() {
                    let row = (bi * c + ch) * l;
                    ss += x[row..row + n]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = ss / count as f64;
            }
            let stats = BatchNormStats {
                mean: mean.clone(),
                var: var.clone(),
                count,
            };
            (mean, var, Some(stats))
        } else {
            (
                self.running_mean.to_f64_vec(),
                self.running_var.to_f64_vec(),
                None,
            )
        };

        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + eps).sqrt())).collect();
        let mean: Vec<T> = mean.into_iter().map(T::of).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for (bi, &n) in lengths.iter().enumerate() {
            for ch in 0..c {
                let row = (bi * c + ch) * l;
                for i in row..row + n {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
        let cache = BatchNormCache {
            xhat: Tensor::from_vec(input.shape(), xhat)?,
            inv_std,
            lengths: lengths.to_vec(),
            count,
            train: mode.is_train(),
        };
        Ok((Tensor::from_vec(input.shape(), out)?, cache, stats))
    }

    /// Folds batch statistics into the running estimates (unbiased variance).
    pub fn update_running(&mut self, stats: &BatchNormStats) {
        let m = BN_MOMENTUM;
        let correction = stats.count as f64 / (stats.count as f64 - 1.0);
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = T::of((1.0 - m) * r.as_f64() + m * v);
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = T::of((1.0 - m) * r.as_f64() + m * v * correction);
        }
    }

    /// Accumulates scale/shift gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, l] = cache.xhat.dims::<3>()?;
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::Shape("batchnorm gradient shape mismatch".into()));
        }
        let g = grad_out.data();
        let xhat = cache.xhat.data();
        let gamma = self.gamma.value.data().to_vec();
        let mut gx = vec![T::zero(); g.len()];
        let n = T::of(cache.count as f64);
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for (bi, &len) in cache.lengths.iter().enumerate() {
                let row = (bi * c + ch) * l;
                for i in row..row + len {
                    sum_g += g[i];
                    sum_gx += g[i] * xhat[i];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_gx;
            self.beta.grad.data_mut()[ch] += sum_g;
            let scale = gamma[ch] * cache.inv_std[ch];
            for (bi, &len) in cache.lengths.iter().enumerate() {
                let row = (bi * c + ch) * l;
                for i in row..row + len {
                    gx[i] = if cache.train {
                        scale * (g[i] - (sum_g + xhat[i] * sum_gx) / n)
                    } else {
                        scale * g[i]
                    };
                }
            }
        }
        Tensor::from_vec(grad_out.shape(), gx)
    }
}

/// Inverted dropout. Returns the output and, in training mode, the applied
/// mask (already scaled by `1 / (1 - rate)`).
pub fn dropout<T: Scalar>(input: &Tensor<T>, rate: f64, mode: Mode) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    match mode {
        Mode::Eval => Ok((input.clone(), None)),
        Mode::Train { .. } if rate == 0.0 => Ok((input.clone(), None)),
        Mode::Train { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keep = T::of(1.0 / (1.0 - rate));
            let mask: Vec<T> = (0..input.len())
                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect();
            let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
            Ok((Tensor::from_vec(input.shape(), data)?, Some(mask)))
        }
    }
}
