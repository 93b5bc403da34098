use rand::Rng;

use super::Param;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Affine map over the last axis: `[..., F] -> [..., O]` with `weight: [O, F]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, f, o) = linear_dims(input, weight, bias)?;
    let x = input.data();
    let w = weight.data();
    let bvec = bias.data();
    let mut out = Vec::with_capacity(rows * o);
    for r in 0..rows {
        let xr = &x[r * f..(r + 1) * f];
        for oi in 0..o {
            let wr = &w[oi * f..(oi + 1) * f];
            let mut acc = bvec[oi];
            for (&a, &b) in wr.iter().zip(xr) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = o;
    Tensor::from_vec(&shape, out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [o, f] = weight.dims::<2>()?;
    let rows = input.len() / f.max(1);
    if input.shape().last() != Some(&f) || grad_out.len() != rows * o {
        return Err(Error::Shape("linear gradient shape mismatch".into()));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    let mut gb = vec![T::zero(); o];
    for r in 0..rows {
        let xr = &x[r * f..(r + 1) * f];
        let gxr = &mut gx[r * f..(r + 1) * f];
        for oi in 0..o {
            let go = g[r * o + oi];
            gb[oi] += go;
            let wr = &w[oi * f..(oi + 1) * f];
            let gwr = &mut gw[oi * f..(oi + 1) * f];
            for j in 0..f {
                gxr[j] += go * wr[j];
                gwr[j] += go * xr[j];
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), gx)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[o], gb)?,
    ))
}

fn linear_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [o, f] = weight.dims::<2>()?;
    if input.shape().last() != Some(&f) {
        return Err(Error::Shape(format!(
            "linear expects inner dimension {f}, input is {:?}",
            input.shape()
        )));
    }
    if bias.shape() != [o] {
        return Err(Error::Shape(format!(
            "linear bias has shape {:?}, expected [{o}]",
            bias.shape()
        )));
    }
    Ok((input.len() / f.max(1), f, o))
}

/// Fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform init in `±1/sqrt(in_features)`.
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = (0..in_features * out_features)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        let b = (0..out_features)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        Linear {
            weight: Param::new(Tensor::from_vec(&[out_features, in_features], w).unwrap()),
            bias: Param::new(Tensor::from_vec(&[out_features], b).unwrap()),
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        linear(input, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (gx, gw, gb) = linear_backward(input, &self.weight.value, grad_out)?;
        self.weight.grad.add_assign(&gw)?;
        self.bias.grad.add_assign(&gb)?;
        Ok(gx)
    }
}

/// Max-subtracted log-softmax over the last axis.
pub fn log_softmax<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let k = *input
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("log_softmax needs rank >= 1".into()))?;
    if k == 0 {
        return Err(Error::Shape("log_softmax over an empty axis".into()));
    }
    let mut out = input.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Ok(out)
}

/// Gradient of [`log_softmax`] given its output.
pub fn log_softmax_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::Shape("log_softmax gradient shape mismatch".into()));
    }
    let k = *output.shape().last().unwrap();
    let mut gx = grad_out.clone();
    for (row, out) in gx.data_mut().chunks_mut(k).zip(output.data().chunks(k)) {
        let total: T = row.iter().copied().sum();
        for (g, &y) in row.iter_mut().zip(out) {
            *g -= y.exp() * total;
        }
    }
    Ok(gx)
}
