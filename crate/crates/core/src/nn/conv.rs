use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Valid (unpadded) 1-D cross-correlation.
///
/// `input` is `[B, C, Lin]`, `kernel` is `[Cout, C, K]`; the result is
/// `[B, Cout, (Lin - K) / stride + 1]`.
pub fn conv1d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let [b, c, lin] = input.dims::<3>()?;
    let [cout, kc, k] = kernel.dims::<3>()?;
    check_conv(c, kc, lin, k, stride)?;
    let lout = (lin - k) / stride + 1;
    let x = input.data();
    let w = kernel.data();
    let mut out = vec![T::zero(); b * cout * lout];
    for bi in 0..b {
        for o in 0..cout {
            let dst = &mut out[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
            for ci in 0..c {
                let src = &x[(bi * c + ci) * lin..(bi * c + ci + 1) * lin];
                let taps = &w[(o * c + ci) * k..(o * c + ci + 1) * k];
                for (ki, &wk) in taps.iter().enumerate() {
                    if stride == 1 {
                        for (d, &s) in dst.iter_mut().zip(&src[ki..ki + lout]) {
                            *d += wk * s;
                        }
                    } else {
                        for (t, d) in dst.iter_mut().enumerate() {
                            *d += wk * src[t * stride + ki];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, cout, lout], out)
}

/// Gradients of [`conv1d`] with respect to its input and kernel.
pub fn conv1d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [b, c, lin] = input.dims::<3>()?;
    let [cout, kc, k] = kernel.dims::<3>()?;
    check_conv(c, kc, lin, k, stride)?;
    let lout = (lin - k) / stride + 1;
    if grad_out.shape() != [b, cout, lout] {
        return Err(Error::Shape(format!(
            "conv1d gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [b, cout, lout]
        )));
    }
    let x = input.data();
    let w = kernel.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    for bi in 0..b {
        for o in 0..cout {
            let go = &g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
            for ci in 0..c {
                let row = (bi * c + ci) * lin;
                let src = &x[row..row + lin];
                for ki in 0..k {
                    let widx = (o * c + ci) * k + ki;
                    let wk = w[widx];
                    let mut acc = T::zero();
                    if stride == 1 {
                        let dx = &mut gx[row + ki..row + ki + lout];
                        for ((d, &gt), &s) in dx.iter_mut().zip(go).zip(&src[ki..ki + lout]) {
                            *d += wk * gt;
                            acc += gt * s;
                        }
                    } else {
                        for (t, &gt) in go.iter().enumerate() {
                            gx[row + t * stride + ki] += wk * gt;
                            acc += gt * src[t * stride + ki];
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), gx)?,
        Tensor::from_vec(kernel.shape(), gw)?,
    ))
}

/// Kernel gradient of [`conv1d`] alone, for layers whose input needs none.
pub fn conv1d_kernel_grad<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [b, c, lin] = input.dims::<3>()?;
    let [cout, kc, k] = kernel.dims::<3>()?;
    check_conv(c, kc, lin, k, stride)?;
    let lout = (lin - k) / stride + 1;
    if grad_out.shape() != [b, cout, lout] {
        return Err(Error::Shape("conv1d gradient shape mismatch".into()));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut gw = vec![T::zero(); kernel.len()];
    for bi in 0..b {
        for o in 0..cout {
            let go = &g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
            for ci in 0..c {
                let src = &x[(bi * c + ci) * lin..(bi * c + ci + 1) * lin];
                for ki in 0..k {
                    let acc: T = if stride == 1 {
                        go.iter().zip(&src[ki..ki + lout]).map(|(&a, &b)| a * b).sum()
                    } else {
                        go.iter().enumerate().map(|(t, &a)| a * src[t * stride + ki]).sum()
                    };
                    gw[(o * c + ci) * k + ki] += acc;
                }
            }
        }
    }
    Tensor::from_vec(kernel.shape(), gw)
}

fn check_conv(c: usize, kc: usize, lin: usize, k: usize, stride: usize) -> Result<()> {
    if c != kc {
        return Err(Error::Shape(format!(
            "conv1d input has {c} channels, kernel expects {kc}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv1d stride must be at least 1".into()));
    }
    if k == 0 {
        return Err(Error::Config("conv1d kernel must be non-empty".into()));
    }
    if lin < k {
        return Err(Error::TooShort {
            layer: format!("conv1d (kernel {k})"),
            length: lin,
            required: k,
        });
    }
    Ok(())
}

/// Flat input index of the maximum chosen for each pooled output element.
pub type PoolIndices = Vec<usize>;

/// Non-overlapping max pooling over the last axis; the tail that does not
/// fill a whole window is dropped.
pub fn maxpool1d<T: Scalar>(input: &Tensor<T>, window: usize) -> Result<(Tensor<T>, PoolIndices)> {
    let [b, c, l] = input.dims::<3>()?;
    if window == 0 {
        return Err(Error::Config("pool window must be at least 1".into()));
    }
    if l < window {
        return Err(Error::TooShort {
            layer: format!("maxpool1d (window {window})"),
            length: l,
            required: window,
        });
    }
    let lout = l / window;
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * lout);
    let mut idx = Vec::with_capacity(b * c * lout);
    for row in 0..b * c {
        for t in 0..lout {
            let start = row * l + t * window;
            let mut best = start;
            for j in start + 1..start + window {
                // strict comparison keeps the first maximum
                if x[j] > x[best] {
                    best = j;
                }
            }
            out.push(x[best]);
            idx.push(best);
        }
    }
    Ok((Tensor::from_vec(&[b, c, lout], out)?, idx))
}

pub fn maxpool1d_backward<T: Scalar>(
    input_shape: &[usize],
    indices: &PoolIndices,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if indices.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "pool gradient has {} elements, {} indices recorded",
            grad_out.len(),
            indices.len()
        )));
    }
    let mut gx = Tensor::zeros(input_shape);
    let dst = gx.data_mut();
    for (&i, &g) in indices.iter().zip(grad_out.data()) {
        dst[i] += g;
    }
    Ok(gx)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Gradient of [`relu`]; the subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape("relu gradient shape mismatch".into()));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// One convolution in a length chain, optionally followed by pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthStage {
    pub kernel: usize,
    pub stride: usize,
    pub pool: Option<usize>,
}

/// Sequence length after running `input_length` samples through `chain`.
pub fn output_length(input_length: usize, chain: &[LengthStage]) -> Result<usize> {
    let mut len = input_length;
    for (i, stage) in chain.iter().enumerate() {
        if stage.stride == 0 {
            return Err(Error::Config(format!("layer {i}: stride must be at least 1")));
        }
        if len < stage.kernel {
            return Err(Error::TooShort {
                layer: format!("layer {i} (conv kernel {})", stage.kernel),
                length: len,
                required: stage.kernel,
            });
        }
        len = (len - stage.kernel) / stage.stride + 1;
        if let Some(window) = stage.pool {
            if len < window || window == 0 {
                return Err(Error::TooShort {
                    layer: format!("layer {i} (pool {window})"),
                    length: len,
                    required: window.max(1),
                });
            }
            len /= window;
        }
    }
    Ok(len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = t(&[1, 1, 4], &[1., -2., 3., 0.5]);
        let k = t(&[1, 1, 1], &[1.]);
        assert_eq!(conv1d(&x, &k, 1).unwrap(), x);
    }

    #[test]
    fn sum_kernel_counts_taps_and_channels() {
        let x = Tensor::<f64>::full(&[2, 3, 10], 1.0);
        let k = Tensor::<f64>::full(&[4, 3, 5], 1.0);
        let y = conv1d(&x, &k, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 6]);
        assert!(y.data().iter().all(|&v| v == 15.0));
    }

    #[test]
    fn strided_length_rule() {
        let x = Tensor::<f64>::zeros(&[1, 1, 11]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3]);
        assert_eq!(conv1d(&x, &k, 2).unwrap().shape(), &[1, 1, 5]);
        assert_eq!(conv1d(&x, &k, 3).unwrap().shape(), &[1, 1, 3]);
    }

    #[test]
    fn short_input_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3]);
        assert!(matches!(conv1d(&x, &k, 1), Err(Error::TooShort { .. })));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (b, c, cout) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3));
            let k = rng.random_range(1..5);
            let stride = rng.random_range(1..3);
            let lin = k + rng.random_range(0..8);
            let x: Vec<f64> = (0..b * c * lin).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..cout * c * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lout = (lin - k) / stride + 1;
            let r: Vec<f64> = (0..b * cout * lout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |xv: &[f64], wv: &[f64]| {
                let y = conv1d(&t(&[b, c, lin], xv), &t(&[cout, c, k], wv), stride).unwrap();
                y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
            };
            let (gx, gw) =
                conv1d_backward(&t(&[b, c, lin], &x), &t(&[cout, c, k], &w), stride, &t(&[b, cout, lout], &r))
                    .unwrap();
            let gw_only = conv1d_kernel_grad(&t(&[b, c, lin], &x), &t(&[cout, c, k], &w), stride, &t(&[b, cout, lout], &r)).unwrap();
            for (a, b) in gw_only.data().iter().zip(gw.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            let rep = grad_check("conv1d input", &x, gx.data(), |xv| loss(xv, &w), 1e-4);
            assert!(rep.passed, "{rep}");
            let rep = grad_check("conv1d kernel", &w, gw.data(), |wv| loss(&x, wv), 1e-4);
            assert!(rep.passed, "{rep}");
        }
    }

    #[test]
    fn maxpool_picks_window_maximum() {
        let (y, idx) = maxpool1d(&t(&[1, 1, 3], &[1., 3., 2.]), 3).unwrap();
        assert_eq!(y.data(), &[3.]);
        assert_eq!(idx, vec![1]);
        let zeros = Tensor::<f64>::zeros(&[1, 1, 15872]);
        assert_eq!(maxpool1d(&zeros, 3).unwrap().0.shape(), &[1, 1, 5290]);
    }

    #[test]
    fn maxpool_gradient_is_one_hot_per_window() {
        let x = t(&[1, 1, 7], &[0.1, 0.9, 0.3, -1.0, -0.5, -2.0, 4.0]);
        let (y, idx) = maxpool1d(&x, 3).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        let g = maxpool1d_backward(x.shape(), &idx, &t(&[1, 1, 2], &[1., 1.])).unwrap();
        assert_eq!(g.data(), &[0., 1., 0., 0., 1., 0., 0.]);
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = t(&[1, 1, 3], &[2., 2., 2.]);
        let (_, idx) = maxpool1d(&x, 3).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn relu_values_and_gradient() {
        let x = t(&[3], &[-1., 2., 3.]);
        assert_eq!(relu(&x).data(), &[0., 2., 3.]);
        let g = relu_backward(&x, &t(&[3], &[1., 1., 1.])).unwrap();
        assert_eq!(g.data(), &[0., 1., 1.]);
        let z = t(&[1], &[0.]);
        assert_eq!(relu_backward(&z, &t(&[1], &[1.])).unwrap().data(), &[0.]);
    }

    fn default_chain() -> Vec<LengthStage> {
        [129, 3, 3, 3, 3]
            .iter()
            .map(|&kernel| LengthStage { kernel, stride: 1, pool: Some(3) })
            .collect()
    }

    #[test]
    fn default_chain_maps_one_second_to_64_frames() {
        // 16000 -> 15872 -> 5290 -> 5288 -> 1762 -> 1760 -> 586 -> 584 -> 194 -> 192 -> 64
        assert_eq!(output_length(16000, &default_chain()).unwrap(), 64);
    }

    #[test]
    fn unit_kernel_chain_is_identity() {
        let chain = [LengthStage { kernel: 1, stride: 1, pool: None }];
        assert_eq!(output_length(123, &chain).unwrap(), 123);
    }

    #[test]
    fn chain_rejects_short_input() {
        let err = output_length(100, &default_chain()).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        let err = output_length(140, &default_chain()).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn output_length_agrees_with_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let k = rng.random_range(1..6);
            let stride = rng.random_range(1..3);
            let pool = rng.random_range(1..4);
            let lin = rng.random_range(k + pool * stride..60);
            let x = Tensor::<f64>::zeros(&[1, 1, lin]);
            let y = conv1d(&x, &Tensor::zeros(&[1, 1, k]), stride).unwrap();
            if y.shape()[2] < pool {
                continue;
            }
            let (p, _) = maxpool1d(&y, pool).unwrap();
            let chain = [LengthStage { kernel: k, stride, pool: Some(pool) }];
            assert_eq!(output_length(lin, &chain).unwrap(), p.shape()[2]);
        }
    }
}
