//! Audio and manifest ingestion, batching, and the synthetic tone corpus.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::vocab::{normalize_text, TokenVocabulary};

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Allowed disagreement between a manifest duration and the WAV header.
pub const DURATION_TOLERANCE: f64 = 0.010;

const PCM_SCALE: f64 = 32768.0;

/// Samples in `[-1, 1)` and the file's sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    check_spec(path, spec)?;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Ok((samples, spec.sample_rate))
}

/// Duration in seconds from the header alone.
pub fn wav_duration(path: impl AsRef<Path>) -> Result<f64> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    check_spec(path, spec)?;
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

/// Writes 16-bit mono PCM, clamping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in samples {
        writer.write_sample(quantize(s)).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Nearest 16-bit PCM value.
pub fn quantize(sample: f64) -> i16 {
    (sample * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

fn check_spec(path: &Path, spec: hound::WavSpec) -> Result<()> {
    let fail = |reason: String| {
        Err(Error::Audio {
            path: path.to_path_buf(),
            reason,
        })
    };
    if spec.sample_format != hound::SampleFormat::Int {
        return fail("floating-point WAV is not supported; expected 16-bit PCM".into());
    }
    if spec.bits_per_sample != 16 {
        return fail(format!("{}-bit PCM is not supported; expected 16-bit", spec.bits_per_sample));
    }
    if spec.channels != 1 {
        return fail(format!("{} channels; expected mono", spec.channels));
    }
    Ok(())
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// Resolved path of the WAV file.
    pub audio: PathBuf,
    /// Normalized transcript.
    pub text: String,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    audio: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration: Option<f64>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn transcripts(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.text.as_str()).collect()
    }

    /// Reads every referenced file.
    pub fn load_audio(&self) -> Result<Vec<AudioClip>> {
        self.utterances
            .iter()
            .map(|u| {
                let (samples, sample_rate) = read_wav(&u.audio)?;
                Ok(AudioClip {
                    samples,
                    sample_rate,
                    text: u.text.clone(),
                })
            })
            .collect()
    }

    /// Writes JSON lines with audio paths relative to `path`'s directory when
    /// possible.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = Vec::new();
        for u in &self.utterances {
            let audio = u.audio.strip_prefix(base).unwrap_or(&u.audio);
            let line = ManifestLine {
                audio: audio.to_string_lossy().into_owned(),
                text: u.text.clone(),
                duration: Some(u.duration),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Parses a JSON-lines manifest. Relative audio paths resolve against the
/// manifest's directory; blank lines are ignored.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut utterances = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let at = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let line = line.map_err(|e| at(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestLine = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let text = normalize_text(&entry.text);
        if text.is_empty() {
            return Err(at("empty transcript".into()));
        }
        let audio = base.join(&entry.audio);
        if !audio.is_file() {
            return Err(at(format!("audio file {} not found", audio.display())));
        }
        let actual = wav_duration(&audio).map_err(|e| at(e.to_string()))?;
        if let Some(stated) = entry.duration {
            if !((stated - actual).abs() <= DURATION_TOLERANCE) {
                return Err(at(format!(
                    "duration {stated} s disagrees with the WAV header ({actual} s)"
                )));
            }
        }
        utterances.push(Utterance {
            audio,
            text,
            duration: actual,
        });
    }
    Ok(Manifest { utterances })
}

/// Utterance indices per batch. Epoch 0 runs longest first (ties keep
/// manifest order); later epochs use a permutation seeded by `seed ^ epoch`.
pub fn make_batches(manifest: &Manifest, batch_size: usize, epoch: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if manifest.is_empty() {
        return Err(Error::Invalid("cannot batch an empty manifest".into()));
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    if epoch == 0 {
        order.sort_by(|&a, &b| {
            manifest.utterances[b]
                .duration
                .total_cmp(&manifest.utterances[a].duration)
        });
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch as u64);
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Decoded audio with its transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `[B, 1, Nmax]`, zero-padded.
    pub waveforms: Tensor<T>,
    pub lengths: Vec<usize>,
    pub labels: Vec<Vec<usize>>,
    pub label_lengths: Vec<usize>,
}

pub fn pad_batch<T: Scalar>(clips: &[&AudioClip], vocab: &TokenVocabulary) -> Result<Batch<T>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Invalid("cannot pad an empty batch".into()))?;
    if let Some(other) = clips.iter().find(|c| c.sample_rate != first.sample_rate) {
        return Err(Error::Invalid(format!(
            "mixed sample rates in one batch: {} Hz and {} Hz",
            first.sample_rate, other.sample_rate
        )));
    }
    let width = clips.iter().map(|c| c.samples.len()).max().unwrap_or(0);
    let mut data = vec![T::zero(); clips.len() * width];
    for (row, clip) in data.chunks_mut(width.max(1)).zip(clips) {
        for (d, &s) in row.iter_mut().zip(&clip.samples) {
            *d = T::of(s);
        }
    }
    let labels: Vec<Vec<usize>> = clips.iter().map(|c| vocab.tokenize(&c.text)).collect();
    Ok(Batch {
        waveforms: Tensor::from_vec(&[clips.len(), 1, width], data)?,
        lengths: clips.iter().map(|c| c.samples.len()).collect(),
        label_lengths: labels.iter().map(Vec::len).collect(),
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_utterances: usize,
    /// Single-character tokens; token `i` is a tone at `300 + 80 i` Hz.
    pub tokens: Vec<String>,
    pub sample_rate: u32,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_utterances: 30,
            tokens: ["A", "B", "C", "D", "E", "F"].map(String::from).to_vec(),
            sample_rate: 8000,
            noise: 0.01,
            min_tokens: 2,
            max_tokens: 8,
        }
    }
}

pub const TONE_SECONDS: f64 = 0.1;
pub const TONE_AMPLITUDE: f64 = 0.5;

pub fn tone_frequency(index: usize) -> f64 {
    300.0 + 80.0 * index as f64
}

/// Files written by [`synth_corpus`].
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest_path: PathBuf,
    pub vocab_path: PathBuf,
    pub manifest: Manifest,
    pub vocab: TokenVocabulary,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tokens.len() < 2 {
            return bad(format!("need at least 2 tokens, got {}", self.tokens.len()));
        }
        for t in &self.tokens {
            if t.chars().count() != 1 || normalize_text(t) != *t || t == " " {
                return bad(format!("token {t:?} is not a single normalized character"));
            }
        }
        let top = tone_frequency(self.tokens.len() - 1);
        if top >= self.sample_rate as f64 / 2.0 {
            return bad(format!(
                "{} tokens need a {top} Hz tone, at or above Nyquist for {} Hz",
                self.tokens.len(),
                self.sample_rate
            ));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad(format!("bad token count range {}..={}", self.min_tokens, self.max_tokens));
        }
        if self.n_utterances == 0 {
            return bad("n_utterances must be positive".into());
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        Ok(())
    }

    /// The generated token strings and waveforms, without touching disk.
    pub fn generate(&self) -> Result<Vec<(Vec<usize>, Vec<f64>)>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise).map_err(|e| Error::Config(e.to_string()))?;
        let fs = self.sample_rate as f64;
        let tone_len = (TONE_SECONDS * fs).round() as usize;
        let mut out = Vec::with_capacity(self.n_utterances);
        for _ in 0..self.n_utterances {
            let n = rng.random_range(self.min_tokens..=self.max_tokens);
            let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.tokens.len())).collect();
            let mut samples = Vec::with_capacity(n * tone_len);
            for &id in &ids {
                let w = 2.0 * std::f64::consts::PI * tone_frequency(id) / fs;
                samples.extend((0..tone_len).map(|k| TONE_AMPLITUDE * (w * k as f64).sin()));
            }
            if self.noise > 0.0 {
                for s in samples.iter_mut() {
                    *s += noise.sample(&mut rng);
                }
            }
            out.push((ids, samples));
        }
        Ok(out)
    }
}

/// Writes `wav/uttNNNN.wav`, `manifest.jsonl` and `vocab.txt` under `out_dir`.
pub fn synth_corpus(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthCorpus> {
    let out_dir = out_dir.as_ref();
    let utterances = config.generate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut manifest = Manifest::default();
    for (i, (ids, samples)) in utterances.iter().enumerate() {
        let audio = wav_dir.join(format!("utt{i:04}.wav"));
        write_wav(&audio, samples, config.sample_rate)?;
        manifest.utterances.push(Utterance {
            audio,
            text: ids.iter().map(|&id| config.tokens[id].as_str()).collect(),
            duration: samples.len() as f64 / config.sample_rate as f64,
        });
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    manifest.save(&manifest_path)?;
    let vocab = TokenVocabulary::build(&config.tokens)?;
    let vocab_path = out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;
    Ok(SynthCorpus {
        manifest_path,
        vocab_path,
        manifest,
        vocab,
    })
}
