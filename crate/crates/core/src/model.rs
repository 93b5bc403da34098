//! The end-to-end network: a feature block of one or two convolutional paths
//! over the raw waveform, concatenated along channels, followed by stacked
//! bidirectional LSTMs and a per-frame projection to log probabilities.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    conv1d, conv1d_backward, conv1d_kernel_grad, derive_seed, dropout, log_softmax, log_softmax_backward,
    maxpool1d, maxpool1d_backward, output_length, relu, relu_backward, BatchNorm, BatchNormCache,
    BatchNormStats, BiLstm, BiLstmCache, LengthStage, Linear, Mode, Param, PoolIndices,
};
use crate::sinc::{SincConv, SincConvCache, SincLayerConfig, WindowMode};
use crate::tensor::{Scalar, Tensor};

/// Layers per feature path: the wide first layer plus four narrow ones.
pub const PATH_LAYERS: usize = 5;

/// Which feature-learning paths feed the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathStructure {
    /// A single plain convolutional path.
    #[serde(rename = "cnn1")]
    Cnn1,
    /// A single sinc path.
    #[serde(rename = "sinc1")]
    Sinc1,
    /// Two independently parameterized sinc paths.
    #[serde(rename = "sinc2")]
    Sinc2,
    /// A sinc path and a plain convolutional path.
    #[serde(rename = "sinc+cnn")]
    SincCnn,
}

impl PathStructure {
    /// `true` for each path whose first layer is a sinc convolution.
    fn path_kinds(self) -> &'static [bool] {
        match self {
            PathStructure::Cnn1 => &[false],
            PathStructure::Sinc1 => &[true],
            PathStructure::Sinc2 => &[true, true],
            PathStructure::SincCnn => &[true, false],
        }
    }
}

impl fmt::Display for PathStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathStructure::Cnn1 => "cnn1",
            PathStructure::Sinc1 => "sinc1",
            PathStructure::Sinc2 => "sinc2",
            PathStructure::SincCnn => "sinc+cnn",
        })
    }
}

pub const PRESETS: [&str; 6] = [
    "paper-sinc-cnn-129",
    "ablation-k251",
    "ablation-k65",
    "cnn1",
    "sinc1",
    "sinc2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: String,
    pub structure: PathStructure,
    /// Kernel length of the first layer of every path.
    pub kernel_size: usize,
    /// Channels per convolutional layer; also the sinc filter count.
    pub channels: usize,
    pub conv_kernel: usize,
    pub pool: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub sample_rate: f64,
    #[serde(default)]
    pub window_mode: WindowMode,
}

impl ModelConfig {
    pub fn preset(name: &str, vocab_size: usize, sample_rate: f64) -> Result<Self> {
        let (structure, kernel_size) = match name {
            "paper-sinc-cnn-129" => (PathStructure::SincCnn, 129),
            "ablation-k251" => (PathStructure::SincCnn, 251),
            "ablation-k65" => (PathStructure::SincCnn, 65),
            "cnn1" => (PathStructure::Cnn1, 129),
            "sinc1" => (PathStructure::Sinc1, 129),
            "sinc2" => (PathStructure::Sinc2, 129),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(ModelConfig {
            preset: name.to_string(),
            structure,
            kernel_size,
            channels: 64,
            conv_kernel: 3,
            pool: 3,
            lstm_layers: 7,
            lstm_hidden: 256,
            dropout: 0.1,
            vocab_size,
            sample_rate,
            window_mode: WindowMode::StandardHamming,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return bad(format!("first-layer kernel must be odd, got {}", self.kernel_size));
        }
        if self.channels == 0 || self.conv_kernel == 0 || self.pool == 0 {
            return bad("channels, conv kernel and pool must be positive".into());
        }
        if self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return bad("backbone needs at least one LSTM layer of positive width".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocabulary of {} cannot hold blank plus a token", self.vocab_size));
        }
        if !(self.sample_rate > 0.0) {
            return bad(format!("sample rate must be positive, got {}", self.sample_rate));
        }
        Ok(())
    }

    pub fn num_paths(&self) -> usize {
        self.structure.path_kinds().len()
    }

    pub fn feature_width(&self) -> usize {
        self.num_paths() * self.channels
    }

    /// Length arithmetic shared by every path.
    pub fn length_chain(&self) -> Vec<LengthStage> {
        (0..PATH_LAYERS)
            .map(|i| LengthStage {
                kernel: if i == 0 { self.kernel_size } else { self.conv_kernel },
                stride: 1,
                pool: Some(self.pool),
            })
            .collect()
    }

    pub fn frames_for(&self, samples: usize) -> Result<usize> {
        output_length(samples, &self.length_chain())
    }

    /// Fewest samples that still yield one output frame.
    pub fn min_samples(&self) -> usize {
        self.length_chain()
            .iter()
            .rev()
            .fold(1, |len, s| (len * s.pool.unwrap_or(1) - 1) * s.stride + s.kernel)
    }

    pub fn sinc_layer(&self) -> SincLayerConfig {
        SincLayerConfig {
            num_filters: self.channels,
            kernel_length: self.kernel_size,
            sample_rate: self.sample_rate,
            window_mode: self.window_mode,
        }
    }
}

/// First layer of a feature path.
#[derive(Clone, Debug, PartialEq)]
pub enum FrontLayer<T> {
    Sinc(SincConv<T>),
    /// Ordinary convolution, kernel `[C, 1, K1]`.
    Conv(Param<T>),
}

/// conv -> batchnorm -> ReLU -> max-pool, five times.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePath<T> {
    pub front: FrontLayer<T>,
    /// Kernels `[C, C, 3]` of layers 1..5.
    pub convs: Vec<Param<T>>,
    pub norms: Vec<BatchNorm<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub paths: Vec<FeaturePath<T>>,
    pub lstm: Vec<BiLstm<T>>,
    /// Normalization ahead of LSTM layers 1.., one fewer than `lstm`.
    pub lstm_norms: Vec<BatchNorm<T>>,
    pub projection: Linear<T>,
}

fn conv_init<T: Scalar>(shape: [usize; 3], rng: &mut impl Rng) -> Param<T> {
    let bound = 1.0 / ((shape[1] * shape[2]) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
    Param::new(Tensor::from_vec(&shape, data).unwrap())
}

impl<T: Scalar> Model<T> {
    /// Deterministic construction from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let mut paths = Vec::new();
        for (p, &is_sinc) in config.structure.path_kinds().iter().enumerate() {
            let front = if is_sinc {
                FrontLayer::Sinc(SincConv::new(config.sinc_layer(), derive_seed(seed, 1000 + p as u64))?)
            } else {
                FrontLayer::Conv(conv_init([c, 1, config.kernel_size], &mut rng))
            };
            let convs = (1..PATH_LAYERS)
                .map(|_| conv_init([c, c, config.conv_kernel], &mut rng))
                .collect();
            let norms = (0..PATH_LAYERS).map(|_| BatchNorm::new(c)).collect();
            paths.push(FeaturePath { front, convs, norms });
        }
        let mut lstm = Vec::new();
        let mut width = config.feature_width();
        for _ in 0..config.lstm_layers {
            lstm.push(BiLstm::new(width, config.lstm_hidden, &mut rng));
            width = 2 * config.lstm_hidden;
        }
        let lstm_norms = (1..config.lstm_layers).map(|_| BatchNorm::new(width)).collect();
        let projection = Linear::new(width, config.vocab_size, &mut rng);
        Ok(Model {
            config,
            paths,
            lstm,
            lstm_norms,
            projection,
        })
    }

    /// Trainable parameters in a fixed order with stable names.
    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (p, path) in self.paths.iter().enumerate() {
            match &path.front {
                FrontLayer::Sinc(s) => {
                    out.push((format!("path{p}.sinc.low_hz"), &s.params.low_hz));
                    out.push((format!("path{p}.sinc.band_hz"), &s.params.band_hz));
                }
                FrontLayer::Conv(k) => out.push((format!("path{p}.conv0.weight"), k)),
            }
            for (i, k) in path.convs.iter().enumerate() {
                out.push((format!("path{p}.conv{}.weight", i + 1), k));
            }
            for (i, bn) in path.norms.iter().enumerate() {
                out.push((format!("path{p}.bn{i}.gamma"), &bn.gamma));
                out.push((format!("path{p}.bn{i}.beta"), &bn.beta));
            }
        }
        for (l, layer) in self.lstm.iter().enumerate() {
            for (name, p) in layer.params() {
                out.push((format!("lstm{l}.{name}"), p));
            }
        }
        for (l, bn) in self.lstm_norms.iter().enumerate() {
            out.push((format!("lstm_bn{}.gamma", l + 1), &bn.gamma));
            out.push((format!("lstm_bn{}.beta", l + 1), &bn.beta));
        }
        out.push(("proj.weight".into(), &self.projection.weight));
        out.push(("proj.bias".into(), &self.projection.bias));
        out
    }

    /// Same order and names as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (p, path) in self.paths.iter_mut().enumerate() {
            match &mut path.front {
                FrontLayer::Sinc(s) => {
                    out.push((format!("path{p}.sinc.low_hz"), &mut s.params.low_hz));
                    out.push((format!("path{p}.sinc.band_hz"), &mut s.params.band_hz));
                }
                FrontLayer::Conv(k) => out.push((format!("path{p}.conv0.weight"), k)),
            }
            for (i, k) in path.convs.iter_mut().enumerate() {
                out.push((format!("path{p}.conv{}.weight", i + 1), k));
            }
            for (i, bn) in path.norms.iter_mut().enumerate() {
                out.push((format!("path{p}.bn{i}.gamma"), &mut bn.gamma));
                out.push((format!("path{p}.bn{i}.beta"), &mut bn.beta));
            }
        }
        for (l, layer) in self.lstm.iter_mut().enumerate() {
            for (name, p) in layer.params_mut() {
                out.push((format!("lstm{l}.{name}"), p));
            }
        }
        for (l, bn) in self.lstm_norms.iter_mut().enumerate() {
            out.push((format!("lstm_bn{}.gamma", l + 1), &mut bn.gamma));
            out.push((format!("lstm_bn{}.beta", l + 1), &mut bn.beta));
        }
        out.push(("proj.weight".into(), &mut self.projection.weight));
        out.push(("proj.bias".into(), &mut self.projection.bias));
        out
    }

    fn all_norms_mut(&mut self) -> Vec<(String, &mut BatchNorm<T>)> {
        let mut out = Vec::new();
        for (p, path) in self.paths.iter_mut().enumerate() {
            for (i, bn) in path.norms.iter_mut().enumerate() {
                out.push((format!("path{p}.bn{i}"), bn));
            }
        }
        for (l, bn) in self.lstm_norms.iter_mut().enumerate() {
            out.push((format!("lstm_bn{}", l + 1), bn));
        }
        out
    }

    /// Non-trainable state (batchnorm running statistics).
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (name, bn) in self.all_norms_mut() {
            out.push((format!("{name}.running_mean"), &mut bn.running_mean));
            out.push((format!("{name}.running_var"), &mut bn.running_var));
        }
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (p, path) in self.paths.iter().enumerate() {
            for (i, bn) in path.norms.iter().enumerate() {
                out.push((format!("path{p}.bn{i}.running_mean"), &bn.running_mean));
                out.push((format!("path{p}.bn{i}.running_var"), &bn.running_var));
            }
        }
        for (l, bn) in self.lstm_norms.iter().enumerate() {
            out.push((format!("lstm_bn{}.running_mean", l + 1), &bn.running_mean));
            out.push((format!("lstm_bn{}.running_var", l + 1), &bn.running_var));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn sinc_layers(&self) -> Vec<&SincConv<T>> {
        self.paths
            .iter()
            .filter_map(|p| match &p.front {
                FrontLayer::Sinc(s) => Some(s),
                FrontLayer::Conv(_) => None,
            })
            .collect()
    }

    fn check_input(&self, waveforms: &Tensor<T>, lengths: &[usize]) -> Result<Vec<usize>> {
        let [b, c, n] = waveforms.dims::<3>()?;
        if c != 1 {
            return Err(Error::Shape(format!("expected mono waveforms, got {c} channels")));
        }
        if lengths.len() != b || b == 0 {
            return Err(Error::Shape(format!(
                "{} lengths for a batch of {b}",
                lengths.len()
            )));
        }
        let min = self.config.min_samples();
        lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                if len > n {
                    return Err(Error::Shape(format!(
                        "utterance {i}: length {len} exceeds padded width {n}"
                    )));
                }
                if len < min {
                    return Err(Error::TooShort {
                        layer: format!("model input (utterance {i})"),
                        length: len,
                        required: min,
                    });
                }
                self.config.frames_for(len)
            })
            .collect()
    }

    /// Runs only the feature block. Output is `[B, paths * C, T]`, with frames
    /// past each utterance's length set to zero.
    pub fn feature_block_forward(
        &self,
        waveforms: &Tensor<T>,
        lengths: &[usize],
        mode: Mode,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        let frames = self.check_input(waveforms, lengths)?;
        let (features, _, _) = self.features(waveforms, lengths, mode)?;
        Ok((features, frames))
    }

    fn features(
        &self,
        waveforms: &Tensor<T>,
        lengths: &[usize],
        mode: Mode,
    ) -> Result<(Tensor<T>, Vec<PathCache<T>>, Vec<BatchNormStats>)> {
        let mut outputs = Vec::with_capacity(self.paths.len());
        let mut caches = Vec::with_capacity(self.paths.len());
        let mut stats = Vec::new();
        let mut frames = Vec::new();
        for path in &self.paths {
            let (out, cache, lens, st) = path_forward(path, &self.config, waveforms, lengths, mode)?;
            outputs.push(out);
            caches.push(cache);
            stats.extend(st);
            frames = lens;
        }
        let mut features = Tensor::concat_channels(&outputs)?;
        mask_frames(&mut features, &frames)?;
        Ok((features, caches, stats))
    }

    /// Full forward pass. Training-mode batch statistics are returned inside
    /// the pass; apply them with [`Model::update_running_stats`].
    pub fn forward(&self, waveforms: &Tensor<T>, lengths: &[usize], mode: Mode) -> Result<ForwardPass<T>> {
        let frame_lengths = self.check_input(waveforms, lengths)?;
        let (features, path_caches, mut stats) = self.features(waveforms, lengths, mode)?;
        let mut x = features.transpose_last()?; // [B, T, F]
        let mut layers = Vec::with_capacity(self.lstm.len());
        for (l, lstm) in self.lstm.iter().enumerate() {
            let norm = if l > 0 {
                let xt = x.transpose_last()?;
                let (y, cache, st) = self.lstm_norms[l - 1].forward(&xt, &frame_lengths, mode)?;
                stats.extend(st);
                x = y.transpose_last()?;
                Some(cache)
            } else {
                None
            };
            let (h, lstm_cache) = lstm.run(&x, &frame_lengths)?;
            let drop_mode = match mode {
                Mode::Train { seed } => Mode::Train {
                    seed: derive_seed(seed, l as u64),
                },
                Mode::Eval => Mode::Eval,
            };
            let (h, mask) = dropout(&h, self.config.dropout, drop_mode)?;
            layers.push(BackboneCache {
                norm,
                lstm: lstm_cache,
                mask,
            });
            x = h;
        }
        let logits = self.projection.forward(&x)?;
        let log_probs = log_softmax(&logits)?;
        Ok(ForwardPass {
            log_probs: log_probs.clone(),
            frame_lengths,
            cache: ForwardCache {
                paths: path_caches,
                layers,
                proj_input: x,
                log_probs,
                stats,
            },
        })
    }

    /// Inference: eval mode, no cache retained.
    pub fn infer(&self, waveforms: &Tensor<T>, lengths: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let pass = self.forward(waveforms, lengths, Mode::Eval)?;
        Ok((pass.log_probs, pass.frame_lengths))
    }

    pub fn update_running_stats(&mut self, pass: &ForwardPass<T>) {
        if pass.cache.stats.is_empty() {
            return;
        }
        // stats were produced path by path, then backbone layer by layer,
        // which is the order all_norms_mut yields
        for ((_, bn), st) in self.all_norms_mut().into_iter().zip(&pass.cache.stats) {
            bn.update_running(st);
        }
    }

    /// Accumulates parameter gradients given `d loss / d log_probs`.
    pub fn backward(&mut self, pass: &ForwardPass<T>, grad_log_probs: &Tensor<T>) -> Result<()> {
        let cache = &pass.cache;
        let g = log_softmax_backward(&cache.log_probs, grad_log_probs)?;
        let mut g = self.projection.backward(&cache.proj_input, &g)?;
        for l in (0..self.lstm.len()).rev() {
            let layer = &cache.layers[l];
            if let Some(mask) = &layer.mask {
                for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
            }
            g = self.lstm[l].backprop(&layer.lstm, &g)?;
            if let Some(norm_cache) = &layer.norm {
                let gt = g.transpose_last()?;
                g = self.lstm_norms[l - 1].backward(norm_cache, &gt)?.transpose_last()?;
            }
        }
        let g = g.transpose_last()?; // [B, F, T]
        let widths = vec![self.config.channels; self.paths.len()];
        let parts = g.split_channels(&widths)?;
        for ((path, pcache), gp) in self.paths.iter_mut().zip(&cache.paths).zip(parts) {
            path_backward(path, pcache, gp)?;
        }
        Ok(())
    }
}

fn mask_frames<T: Scalar>(x: &mut Tensor<T>, frames: &[usize]) -> Result<()> {
    let [_, c, l] = x.dims::<3>()?;
    let data = x.data_mut();
    for (bi, &n) in frames.iter().enumerate() {
        for ch in 0..c {
            let row = (bi * c + ch) * l;
            data[row + n..row + l].iter_mut().for_each(|v| *v = T::zero());
        }
    }
    Ok(())
}

enum FrontCache<T> {
    Sinc(SincConvCache<T>),
    Conv(Tensor<T>),
}

struct LayerCache<T> {
    /// Input of layers 1.. (layer 0 keeps its input in `FrontCache`).
    input: Option<Tensor<T>>,
    norm: BatchNormCache<T>,
    normalized: Tensor<T>,
    pool: PoolIndices,
}

pub(crate) struct PathCache<T> {
    front: FrontCache<T>,
    layers: Vec<LayerCache<T>>,
}

struct BackboneCache<T> {
    norm: Option<BatchNormCache<T>>,
    lstm: BiLstmCache<T>,
    mask: Option<Vec<T>>,
}

/// Everything a backward pass needs.
pub struct ForwardCache<T> {
    paths: Vec<PathCache<T>>,
    layers: Vec<BackboneCache<T>>,
    proj_input: Tensor<T>,
    log_probs: Tensor<T>,
    stats: Vec<BatchNormStats>,
}

pub struct ForwardPass<T> {
    /// `[B, T, K]`
    pub log_probs: Tensor<T>,
    pub frame_lengths: Vec<usize>,
    pub cache: ForwardCache<T>,
}

impl<T: Scalar> ForwardPass<T> {
    /// ReLU signs and max-pool winners of the feature block. Two inputs with
    /// equal patterns lie on the same smooth piece of the network.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for path in &self.cache.paths {
            for layer in &path.layers {
                out.extend(layer.normalized.data().iter().map(|&v| usize::from(v > T::zero())));
                out.extend(&layer.pool);
            }
        }
        out
    }
}

type PathOutput<T> = (Tensor<T>, PathCache<T>, Vec<usize>, Vec<BatchNormStats>);

fn path_forward<T: Scalar>(
    path: &FeaturePath<T>,
    config: &ModelConfig,
    waveforms: &Tensor<T>,
    lengths: &[usize],
    mode: Mode,
) -> Result<PathOutput<T>> {
    let mut lens = lengths.to_vec();
    let mut stats = Vec::new();
    let mut layers = Vec::with_capacity(PATH_LAYERS);
    let (mut x, front) = match &path.front {
        FrontLayer::Sinc(s) => {
            let (y, c) = s.forward(waveforms)?;
            (y, FrontCache::Sinc(c))
        }
        FrontLayer::Conv(k) => (conv1d(waveforms, &k.value, 1)?, FrontCache::Conv(waveforms.clone())),
    };
    for i in 0..PATH_LAYERS {
        let input = if i == 0 {
            None
        } else {
            let inp = x;
            x = conv1d(&inp, &path.convs[i - 1].value, 1)?;
            Some(inp)
        };
        let kernel = if i == 0 { config.kernel_size } else { config.conv_kernel };
        for n in lens.iter_mut() {
            *n = *n + 1 - kernel;
        }
        let (normalized, norm, st) = path.norms[i].forward(&x, &lens, mode)?;
        stats.extend(st);
        let activated = relu(&normalized);
        let (pooled, pool) = maxpool1d(&activated, config.pool)?;
        for n in lens.iter_mut() {
            *n /= config.pool;
        }
        layers.push(LayerCache {
            input,
            norm,
            normalized,
            pool,
        });
        x = pooled;
    }
    Ok((x, PathCache { front, layers }, lens, stats))
}

fn path_backward<T: Scalar>(path: &mut FeaturePath<T>, cache: &PathCache<T>, grad: Tensor<T>) -> Result<()> {
    let mut g = grad;
    for i in (0..PATH_LAYERS).rev() {
        let lc = &cache.layers[i];
        g = maxpool1d_backward(lc.normalized.shape(), &lc.pool, &g)?;
        g = relu_backward(&lc.normalized, &g)?;
        g = path.norms[i].backward(&lc.norm, &g)?;
        if i > 0 {
            let input = lc.input.as_ref().expect("inner layers cache their input");
            let kernel = &mut path.convs[i - 1];
            let (gx, gk) = conv1d_backward(input, &kernel.value, 1, &g)?;
            kernel.grad.add_assign(&gk)?;
            g = gx;
        }
    }
    match (&mut path.front, &cache.front) {
        (FrontLayer::Sinc(s), FrontCache::Sinc(c)) => {
            s.backward(c, &g)?;
        }
        (FrontLayer::Conv(k), FrontCache::Conv(input)) => {
            let gk = conv1d_kernel_grad(input, &k.value, 1, &g)?;
            k.grad.add_assign(&gk)?;
        }
        _ => unreachable!("front cache kind follows the layer kind"),
    }
    Ok(())
}
