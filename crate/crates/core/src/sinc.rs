//! Learnable sinc-convolution filterbank.
//!
//! Each filter is an ideal band-pass (difference of two windowed sinc
//! low-passes) described only by its two cutoff frequencies, so a layer of
//! `F` filters has `2F` trainable scalars regardless of kernel length.
//! Cutoffs are stored in Hz; sinc arguments use `2π·f·n/fs`.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv1d, conv1d_backward, Param};
use crate::tensor::{Scalar, Tensor};

/// Number of frequencies sampled per filter in response dumps.
pub const RESPONSE_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    /// `0.54 - 0.46 cos(2πm / (L-1))`, symmetric about the kernel centre.
    #[default]
    StandardHamming,
    /// `0.54 - 0.46 cos(πm / L)` taken literally for `m = 0..L`.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SincLayerConfig {
    pub num_filters: usize,
    pub kernel_length: usize,
    pub sample_rate: f64,
    #[serde(default)]
    pub window_mode: WindowMode,
}

impl SincLayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_filters == 0 {
            return Err(Error::Config("sinc layer needs at least one filter".into()));
        }
        if self.kernel_length == 0 || self.kernel_length % 2 == 0 {
            return Err(Error::Config(format!(
                "sinc kernel length must be odd, got {}",
                self.kernel_length
            )));
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }
}

/// `sin(x)/x`, equal to 1 at the origin.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

pub fn window_vector(length: usize, mode: WindowMode) -> Result<Vec<f64>> {
    if length == 0 || length % 2 == 0 {
        return Err(Error::Config(format!(
            "window length must be odd, got {length}"
        )));
    }
    if length == 1 {
        return Ok(vec![1.0]);
    }
    let l = length as f64;
    Ok((0..length)
        .map(|m| {
            let m = m as f64;
            match mode {
                WindowMode::StandardHamming => 0.54 - 0.46 * (2.0 * PI * m / (l - 1.0)).cos(),
                WindowMode::PaperLiteral => 0.54 - 0.46 * (PI * m / l).cos(),
            }
        })
        .collect())
}

/// Learnable cutoffs of a sinc layer. The effective band of filter `i` is
/// `f1 = min(|low_hz[i]|, fs/2)`, `f2 = min(f1 + |band_hz[i]|, fs/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SincParams<T> {
    pub low_hz: Param<T>,
    pub band_hz: Param<T>,
}

/// Effective cutoffs and their derivatives with respect to the raw parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Band {
    f1: f64,
    f2: f64,
    df1_dlow: f64,
    df2_dlow: f64,
    df2_dband: f64,
}

fn band(low: f64, width: f64, nyquist: f64) -> Band {
    let (f1, df1_dlow) = if low.abs() >= nyquist {
        (nyquist, 0.0)
    } else {
        (low.abs(), signum0(low))
    };
    let raw_f2 = f1 + width.abs();
    if raw_f2 >= nyquist {
        Band {
            f1,
            f2: nyquist,
            df1_dlow,
            df2_dlow: 0.0,
            df2_dband: 0.0,
        }
    } else {
        Band {
            f1,
            f2: raw_f2,
            df1_dlow,
            df2_dlow: df1_dlow,
            df2_dband: signum0(width),
        }
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<T: Scalar> SincParams<T> {
    pub fn from_cutoffs(cutoffs: &[(f64, f64)]) -> Self {
        let low: Vec<f64> = cutoffs.iter().map(|c| c.0).collect();
        let width: Vec<f64> = cutoffs.iter().map(|c| c.1 - c.0).collect();
        SincParams {
            low_hz: Param::new(Tensor::from_f64(&[low.len()], &low).unwrap()),
            band_hz: Param::new(Tensor::from_f64(&[width.len()], &width).unwrap()),
        }
    }

    pub fn num_filters(&self) -> usize {
        self.low_hz.value.len()
    }

    fn bands(&self, nyquist: f64) -> Vec<Band> {
        self.low_hz
            .value
            .data()
            .iter()
            .zip(self.band_hz.value.data())
            .map(|(&l, &b)| band(l.as_f64(), b.as_f64(), nyquist))
            .collect()
    }

    /// Effective `(f1, f2)` per filter after reparameterization.
    pub fn cutoffs(&self, config: &SincLayerConfig) -> Vec<(f64, f64)> {
        self.bands(config.nyquist())
            .into_iter()
            .map(|b| (b.f1, b.f2))
            .collect()
    }
}

/// Draws each filter's cutoffs uniformly from `[0, fs/2]` (sorted pair).
pub fn init_sinc_params<T: Scalar>(config: &SincLayerConfig, seed: u64) -> Result<SincParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nyq = config.nyquist();
    let cutoffs: Vec<(f64, f64)> = (0..config.num_filters)
        .map(|_| {
            let a = rng.random_range(0.0..=nyq);
            let b = rng.random_range(0.0..=nyq);
            (a.min(b), a.max(b))
        })
        .collect();
    Ok(SincParams::from_cutoffs(&cutoffs))
}

fn tap_offset(m: usize, length: usize) -> f64 {
    m as f64 - ((length - 1) / 2) as f64
}

/// Windowed band-pass kernels, `[num_filters, kernel_length]`, computed in
/// double precision.
pub fn materialize_filters_f64<T: Scalar>(params: &SincParams<T>, config: &SincLayerConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if params.num_filters() != config.num_filters || params.band_hz.value.len() != config.num_filters {
        return Err(Error::Shape(format!(
            "sinc params hold {} filters, layer expects {}",
            params.num_filters(),
            config.num_filters
        )));
    }
    let fs = config.sample_rate;
    let window = window_vector(config.kernel_length, config.window_mode)?;
    Ok(params
        .bands(config.nyquist())
        .iter()
        .map(|b| {
            debug_assert!(0.0 <= b.f1 && b.f1 <= b.f2 && b.f2 <= fs / 2.0);
            window
                .iter()
                .enumerate()
                .map(|(m, &w)| {
                    let n = tap_offset(m, config.kernel_length);
                    let hi = 2.0 * b.f2 / fs * sinc(2.0 * PI * b.f2 * n / fs);
                    let lo = 2.0 * b.f1 / fs * sinc(2.0 * PI * b.f1 * n / fs);
                    (hi - lo) * w
                })
                .collect()
        })
        .collect())
}

pub fn materialize_filters<T: Scalar>(params: &SincParams<T>, config: &SincLayerConfig) -> Result<Tensor<T>> {
    let rows = materialize_filters_f64(params, config)?;
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Tensor::from_f64(&[config.num_filters, config.kernel_length], &data)
}

/// Sinc-convolution layer over `[B, 1, N]` waveforms.
#[derive(Clone, Debug, PartialEq)]
pub struct SincConv<T> {
    pub config: SincLayerConfig,
    pub params: SincParams<T>,
}

/// What the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct SincConvCache<T> {
    input: Tensor<T>,
    kernel: Tensor<T>,
}

impl<T: Scalar> SincConv<T> {
    pub fn new(config: SincLayerConfig, seed: u64) -> Result<Self> {
        let params = init_sinc_params(&config, seed)?;
        Ok(SincConv { config, params })
    }

    pub fn forward(&self, waveforms: &Tensor<T>) -> Result<(Tensor<T>, SincConvCache<T>)> {
        let [_, c, n] = waveforms.dims::<3>()?;
        if c != 1 {
            return Err(Error::Shape(format!(
                "sinc convolution expects mono input, got {c} channels"
            )));
        }
        if n < self.config.kernel_length {
            return Err(Error::TooShort {
                layer: format!("sinc convolution (kernel {})", self.config.kernel_length),
                length: n,
                required: self.config.kernel_length,
            });
        }
        let kernel = materialize_filters(&self.params, &self.config)?
            .reshape(&[self.config.num_filters, 1, self.config.kernel_length])?;
        let out = conv1d(waveforms, &kernel, 1)?;
        Ok((
            out,
            SincConvCache {
                input: waveforms.clone(),
                kernel,
            },
        ))
    }

    /// Accumulates cutoff gradients and returns the waveform gradient.
    pub fn backward(&mut self, cache: &SincConvCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (gx, gk) = conv1d_backward(&cache.input, &cache.kernel, 1, grad_out)?;
        let (g_low, g_band) = self.cutoff_gradients(gk.data())?;
        for (g, d) in self.params.low_hz.grad.data_mut().iter_mut().zip(g_low) {
            *g += T::of(d);
        }
        for (g, d) in self.params.band_hz.grad.data_mut().iter_mut().zip(g_band) {
            *g += T::of(d);
        }
        Ok(gx)
    }

    /// Chains a kernel gradient `[F * L]` through the filter formula to the
    /// raw `(low_hz, band_hz)` parameters.
    fn cutoff_gradients(&self, grad_kernel: &[T]) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = self.config.kernel_length;
        let fs = self.config.sample_rate;
        let window = window_vector(l, self.config.window_mode)?;
        let bands = self.params.bands(self.config.nyquist());
        let mut g_low = Vec::with_capacity(bands.len());
        let mut g_band = Vec::with_capacity(bands.len());
        for (i, b) in bands.iter().enumerate() {
            let gk = &grad_kernel[i * l..(i + 1) * l];
            let (mut d_f1, mut d_f2) = (0.0, 0.0);
            for (m, (&g, &w)) in gk.iter().zip(&window).enumerate() {
                let n = tap_offset(m, l);
                let g = g.as_f64() * w * 2.0 / fs;
                // d/df [2f/fs · sinc(2πfn/fs)] = (2/fs) cos(2πfn/fs)
                d_f2 += g * (2.0 * PI * b.f2 * n / fs).cos();
                d_f1 -= g * (2.0 * PI * b.f1 * n / fs).cos();
            }
            g_low.push(d_f1 * b.df1_dlow + d_f2 * b.df2_dlow);
            g_band.push(d_f2 * b.df2_dband);
        }
        Ok((g_low, g_band))
    }
}

/// Magnitude response of `kernel` at `points` frequencies evenly spaced over
/// `[0, fs/2]`, by direct evaluation of the discrete-time Fourier transform.
pub fn magnitude_response(kernel: &[f64], sample_rate: f64, points: usize) -> Vec<f64> {
    let denom = (points.max(2) - 1) as f64;
    (0..points)
        .map(|j| {
            let f = j as f64 * (sample_rate / 2.0) / denom;
            let omega = 2.0 * PI * f / sample_rate;
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &h) in kernel.iter().enumerate() {
                re += h * (omega * n as f64).cos();
                im -= h * (omega * n as f64).sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Writes one CSV row per filter: index, f1_hz, f2_hz, then the magnitude
/// response at [`RESPONSE_POINTS`] frequencies. Filter indices continue
/// across layers when several are given.
pub fn write_filter_response_csv<T: Scalar, W: Write>(layers: &[&SincConv<T>], mut out: W) -> Result<()> {
    let io = |e| Error::io("filter response csv", e);
    let mut header = String::from("index,f1_hz,f2_hz");
    let fs = layers.first().map_or(0.0, |l| l.config.sample_rate);
    for j in 0..RESPONSE_POINTS {
        let f = j as f64 * (fs / 2.0) / (RESPONSE_POINTS - 1) as f64;
        header.push_str(&format!(",h_{f:.2}hz"));
    }
    writeln!(out, "{header}").map_err(io)?;
    let mut index = 0;
    for layer in layers {
        let kernels = materialize_filters_f64(&layer.params, &layer.config)?;
        for ((f1, f2), kernel) in layer.params.cutoffs(&layer.config).into_iter().zip(kernels) {
            let mags = magnitude_response(&kernel, layer.config.sample_rate, RESPONSE_POINTS);
            let mut row = format!("{index},{f1},{f2}");
            for m in mags {
                row.push_str(&format!(",{m:.6e}"));
            }
            writeln!(out, "{row}").map_err(io)?;
            index += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn config(num_filters: usize, kernel_length: usize) -> SincLayerConfig {
        SincLayerConfig {
            num_filters,
            kernel_length,
            sample_rate: 8000.0,
            window_mode: WindowMode::StandardHamming,
        }
    }

    #[test]
    fn sinc_special_values() {
        assert_eq!(sinc(0.0), 1.0);
        assert!(sinc(PI).abs() < 1e-15);
        for x in [0.3, 1.7, 12.5] {
            assert_eq!(sinc(-x), sinc(x));
        }
    }

    #[test]
    fn hamming_window_shape() {
        let w = window_vector(129, WindowMode::StandardHamming).unwrap();
        assert!((w[64] - 1.0).abs() < 1e-15);
        assert!((w[0] - 0.08).abs() < 1e-15);
        for m in 0..129 {
            assert!((w[m] - w[128 - m]).abs() < 1e-15);
        }
        let p = window_vector(129, WindowMode::PaperLiteral).unwrap();
        assert!((p[0] - 0.08).abs() < 1e-15);
        assert!(window_vector(128, WindowMode::StandardHamming).is_err());
    }

    #[test]
    fn init_respects_nyquist_and_seed() {
        let cfg = config(64, 129);
        let a: SincParams<f64> = init_sinc_params(&cfg, 17).unwrap();
        let b: SincParams<f64> = init_sinc_params(&cfg, 17).unwrap();
        assert_eq!(a, b);
        for (f1, f2) in a.cutoffs(&cfg) {
            assert!(0.0 <= f1 && f1 <= f2 && f2 <= 4000.0);
        }
        let one: SincParams<f64> = init_sinc_params(&config(1, 5), 0).unwrap();
        assert_eq!(one.low_hz.value.len(), 1);
        assert_eq!(one.band_hz.value.len(), 1);
    }

    #[test]
    fn reparameterization_clamps() {
        let cfg = config(3, 5);
        let p = SincParams::<f64>::from_cutoffs(&[(-100.0, 200.0), (3500.0, 9000.0), (5000.0, 6000.0)]);
        let c = p.cutoffs(&cfg);
        // low=-100, band=300 -> f1=100, f2=400
        assert_eq!(c[0], (100.0, 400.0));
        assert_eq!(c[1], (3500.0, 4000.0));
        assert_eq!(c[2], (4000.0, 4000.0));
    }

    #[test]
    fn equal_cutoffs_give_zero_filter() {
        let cfg = config(1, 33);
        let p = SincParams::<f64>::from_cutoffs(&[(1234.0, 1234.0)]);
        let k = materialize_filters(&p, &cfg).unwrap();
        assert!(k.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centre_tap_is_normalized_bandwidth() {
        let cfg = config(1, 65);
        let p = SincParams::<f64>::from_cutoffs(&[(800.0, 2000.0)]);
        let k = materialize_filters(&p, &cfg).unwrap();
        assert!((k.data()[32] - 2.0 * 1200.0 / 8000.0).abs() < 1e-15);
    }

    #[test]
    fn standard_window_filters_are_even() {
        let cfg = config(4, 129);
        let p: SincParams<f64> = init_sinc_params(&cfg, 3).unwrap();
        let k = materialize_filters(&p, &cfg).unwrap();
        for row in k.data().chunks(129) {
            for m in 0..129 {
                assert!((row[m] - row[128 - m]).abs() < 1e-15);
            }
        }
    }

    /// Zero-padded FFT magnitude of the kernel; the FFT route is independent
    /// of `magnitude_response`.
    fn fft_magnitude(kernel: &[f64], size: usize) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(size).process(&mut buf);
        buf[..=size / 2].iter().map(|c| c.norm()).collect()
    }

    #[test]
    fn band_pass_energy_concentration() {
        let cfg = config(1, 129);
        let p = SincParams::<f64>::from_cutoffs(&[(800.0, 1600.0)]);
        let kernel = &materialize_filters_f64(&p, &cfg).unwrap()[0];
        let size = 4096;
        let mags = fft_magnitude(kernel, size);
        let (mut stop, mut ns, mut pass, mut np) = (0.0, 0, 0.0, 0);
        for (bin, &m) in mags.iter().enumerate() {
            let f = bin as f64 / size as f64; // fraction of fs
            if f < 0.05 || f > 0.25 {
                stop += m;
                ns += 1;
            } else if (0.1..=0.2).contains(&f) {
                pass += m;
                np += 1;
            }
        }
        let ratio = (stop / ns as f64) / (pass / np as f64);
        assert!(ratio <= 0.15, "ratio {ratio}");
    }

    #[test]
    fn dtft_matches_fft_at_shared_frequencies() {
        let cfg = config(1, 65);
        let p = SincParams::<f64>::from_cutoffs(&[(300.0, 2500.0)]);
        let kernel = &materialize_filters_f64(&p, &cfg).unwrap()[0];
        // 256 points over [0, fs/2] land on FFT bins when size = 2 * 255
        let direct = magnitude_response(kernel, 8000.0, RESPONSE_POINTS);
        let fft = fft_magnitude(kernel, 510);
        for (a, b) in direct.iter().zip(&fft) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn correlation_peaks_at_alignment() {
        let cfg = config(1, 31);
        let mut layer = SincConv::<f64>::new(cfg, 0).unwrap();
        layer.params = SincParams::from_cutoffs(&[(500.0, 1500.0)]);
        let k = materialize_filters(&layer.params, &cfg).unwrap();
        let mut x = vec![0.0; 100];
        // reversed filter placed at offset 40 (symmetric, so reversal is a no-op)
        for (m, &v) in k.data().iter().rev().enumerate() {
            x[40 + m] = v;
        }
        let (y, _) = layer.forward(&Tensor::from_vec(&[1, 1, 100], x).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 70]);
        let argmax = y
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 40);
    }

    #[test]
    fn short_waveform_names_minimum() {
        let layer = SincConv::<f64>::new(config(2, 129), 0).unwrap();
        let err = layer.forward(&Tensor::zeros(&[1, 1, 100])).unwrap_err();
        assert!(err.to_string().contains("129"), "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let filters = rng.random_range(1..=4);
            let kernel = [5, 9, 17, 33][rng.random_range(0..4)];
            let b = rng.random_range(1..=2);
            let n = rng.random_range(kernel..=200);
            let cfg = config(filters, kernel);
            let mut layer = SincConv::<f64>::new(cfg, seed).unwrap();
            // keep cutoffs away from the clamps
            let cut: Vec<(f64, f64)> = (0..filters)
                .map(|_| {
                    let f1 = rng.random_range(50.0..2500.0);
                    (f1, f1 + rng.random_range(100.0..1200.0))
                })
                .collect();
            layer.params = SincParams::from_cutoffs(&cut);
            let x: Vec<f64> = (0..b * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xt = Tensor::from_vec(&[b, 1, n], x.clone()).unwrap();
            let lout = n - kernel + 1;
            let r: Vec<f64> = (0..b * filters * lout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rt = Tensor::from_vec(&[b, filters, lout], r.clone()).unwrap();
            let (_, cache) = layer.forward(&xt).unwrap();
            let gx = layer.backward(&cache, &rt).unwrap();
            let base = layer.clone();
            let obj = |m: &SincConv<f64>, x: &Tensor<f64>| {
                let (y, _) = m.forward(x).unwrap();
                y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
            };
            let rep = grad_check("sinc input", &x, gx.data(), |v| obj(&base, &Tensor::from_f64(&[b, 1, n], v).unwrap()), 1e-4);
            assert!(rep.passed, "{rep}");
            let low = base.params.low_hz.value.to_f64_vec();
            let rep = grad_check("sinc low_hz", &low, layer.params.low_hz.grad.data(), |v| {
                let mut m = base.clone();
                m.params.low_hz.value = Tensor::from_f64(&[filters], v).unwrap();
                obj(&m, &xt)
            }, 1e-4);
            assert!(rep.passed, "{rep}");
            let band = base.params.band_hz.value.to_f64_vec();
            let rep = grad_check("sinc band_hz", &band, layer.params.band_hz.grad.data(), |v| {
                let mut m = base.clone();
                m.params.band_hz.value = Tensor::from_f64(&[filters], v).unwrap();
                obj(&m, &xt)
            }, 1e-4);
            assert!(rep.passed, "{rep}");
        }
    }

    #[test]
    fn response_csv_has_one_row_per_filter() {
        let layer = SincConv::<f64>::new(config(3, 33), 1).unwrap();
        let mut buf = Vec::new();
        write_filter_response_csv(&[&layer], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        for row in &lines[1..] {
            assert_eq!(row.split(',').count(), 3 + RESPONSE_POINTS);
        }
        assert!(lines[1].starts_with("0,"));
    }
}
