//! Training loop, greedy evaluation and character error rate.

use std::ops::ControlFlow;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::ctc::{ctc_loss_and_grad, greedy_decode, min_frames};
use crate::data::{make_batches, pad_batch, AudioClip, Manifest, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{derive_seed, AdamConfig, AdamState, Mode};
use crate::tensor::{Precision, Scalar};
use crate::vocab::TokenVocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Where per-epoch checkpoints go; none are written when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate dev CER every this many epochs; 0 disables it.
    pub eval_interval: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: 10,
            seed: 0,
            checkpoint_dir: None,
            eval_interval: 1,
            precision: Precision::Single,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// A manifest with its audio already decoded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub clips: Vec<AudioClip>,
}

impl Dataset {
    pub fn load(manifest: Manifest) -> Result<Self> {
        let clips = manifest.load_audio()?;
        Ok(Dataset { manifest, clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    /// Mean per-utterance loss over the epoch.
    pub mean_loss: f64,
    pub dev_cer: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,mean_loss,dev_cer,seconds";

    pub fn csv_line(&self) -> String {
        let cer = self.dev_cer.map(|c| format!("{c:.6}")).unwrap_or_default();
        format!("{},{:.9},{},{:.3}", self.epoch, self.mean_loss, cer, self.seconds)
    }
}

/// Indices of utterances the model can process and CTC can align.
fn feasible_indices<T: Scalar>(model: &Model<T>, data: &Dataset, vocab: &TokenVocabulary) -> Vec<bool> {
    data.clips
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            let label = vocab.tokenize(&clip.text);
            let frames = match model.config.frames_for(clip.samples.len()) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("skipping utterance {i} ({}): {e}", data.manifest.utterances[i].audio.display());
                    return false;
                }
            };
            if clip.sample_rate as f64 != model.config.sample_rate {
                log::warn!(
                    "skipping utterance {i}: sample rate {} Hz, model expects {} Hz",
                    clip.sample_rate,
                    model.config.sample_rate
                );
                return false;
            }
            if label.is_empty() || min_frames(&label) > frames {
                log::warn!(
                    "skipping utterance {i}: {frames} frames cannot align {} labels",
                    label.len()
                );
                return false;
            }
            true
        })
        .collect()
}

/// Trains epochs `start_epoch + 1 ..= config.max_epochs`, so a resumed run
/// finishes the schedule it was started with. `on_epoch` sees the model and each record as soon as the
/// epoch is over and may stop training early.
#[allow(clippy::too_many_arguments)]
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    optimizer: &mut AdamState<T>,
    train_set: &Dataset,
    dev_set: Option<&Dataset>,
    vocab: &TokenVocabulary,
    config: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&Model<T>, &EpochRecord) -> Result<ControlFlow<()>>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens, model emits {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let usable = feasible_indices(model, train_set, vocab);
    if !usable.iter().any(|&u| u) {
        return Err(Error::Invalid("no training utterance is usable".into()));
    }
    let mut records = Vec::new();
    for epoch in start_epoch + 1..=config.max_epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        let batches = make_batches(&train_set.manifest, config.batch_size, epoch - 1, config.seed)?;
        for (b, batch) in batches.iter().enumerate() {
            let members: Vec<usize> = batch.iter().copied().filter(|&i| usable[i]).collect();
            if members.is_empty() {
                continue;
            }
            let clips: Vec<&AudioClip> = members.iter().map(|&i| &train_set.clips[i]).collect();
            let padded = pad_batch::<T>(&clips, vocab)?;
            let mode = Mode::Train {
                seed: derive_seed(config.seed, ((epoch as u64) << 32) | b as u64),
            };
            let pass = model.forward(&padded.waveforms, &padded.lengths, mode)?;
            let (loss, grad) = ctc_loss_and_grad(&pass.log_probs, &padded.labels, &pass.frame_lengths)
                .map_err(|e| batch_error(epoch, b, &members, e))?;
            if !loss.is_finite() {
                return Err(batch_error(epoch, b, &members, Error::NonFinite(format!("loss ({loss})"))));
            }
            model.zero_grad();
            model.backward(&pass, &grad)?;
            model.update_running_stats(&pass);
            optimizer
                .step(model.params_mut())
                .map_err(|e| batch_error(epoch, b, &members, e))?;
            loss_sum += loss * members.len() as f64;
            count += members.len();
        }
        let mean_loss = loss_sum / count as f64;
        let dev_cer = match dev_set {
            Some(dev) if config.eval_interval > 0 && epoch % config.eval_interval == 0 => {
                Some(evaluate_cer(model, dev, vocab)?)
            }
            _ => None,
        };
        if let Some(dir) = &config.checkpoint_dir {
            save_checkpoint(dir.join(checkpoint_name(epoch)), model, Some(optimizer), vocab, epoch)?;
        }
        let record = EpochRecord {
            epoch,
            mean_loss,
            dev_cer,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("{}", record.csv_line());
        records.push(record);
        if on_epoch(model, &record)?.is_break() {
            break;
        }
    }
    Ok(records)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}.ckpt")
}

fn batch_error(epoch: usize, batch: usize, members: &[usize], e: Error) -> Error {
    Error::Invalid(format!(
        "epoch {epoch}, batch {batch} (utterances {members:?}): {e}"
    ))
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance<A: PartialEq>(reference: &[A], hypothesis: &[A]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Corpus-level CER: total edits over total reference tokens.
pub fn corpus_cer<A: PartialEq>(references: &[Vec<A>], hypotheses: &[Vec<A>]) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::Invalid(format!(
            "{} references but {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    let total: usize = references.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Invalid("references contain no tokens".into()));
    }
    let edits: usize = references
        .iter()
        .zip(hypotheses)
        .map(|(r, h)| edit_distance(r, h))
        .sum();
    Ok(edits as f64 / total as f64)
}

/// Greedy hypotheses in eval mode, one per clip. Clips too short for the
/// network yield an empty hypothesis.
pub fn decode_clips<T: Scalar>(
    model: &Model<T>,
    clips: &[&AudioClip],
    vocab: &TokenVocabulary,
) -> Result<Vec<Vec<usize>>> {
    const CHUNK: usize = 16;
    let min = model.config.min_samples();
    let mut out = vec![Vec::new(); clips.len()];
    let runnable: Vec<usize> = (0..clips.len())
        .filter(|&i| {
            let ok = clips[i].samples.len() >= min;
            if !ok {
                log::warn!("utterance {i} is shorter than {min} samples; hypothesis left empty");
            }
            ok
        })
        .collect();
    for chunk in runnable.chunks(CHUNK) {
        let members: Vec<&AudioClip> = chunk.iter().map(|&i| clips[i]).collect();
        let batch = pad_batch::<T>(&members, vocab)?;
        let (log_probs, frames) = model.infer(&batch.waveforms, &batch.lengths)?;
        for (&i, hyp) in chunk.iter().zip(greedy_decode(&log_probs, &frames)?) {
            out[i] = hyp;
        }
    }
    Ok(out)
}

/// Transcribes one waveform.
pub fn transcribe<T: Scalar>(model: &Model<T>, samples: &[f64], sample_rate: u32, vocab: &TokenVocabulary) -> Result<String> {
    if sample_rate as f64 != model.config.sample_rate {
        return Err(Error::Invalid(format!(
            "audio is {sample_rate} Hz but the model expects {} Hz",
            model.config.sample_rate
        )));
    }
    let clip = AudioClip {
        samples: samples.to_vec(),
        sample_rate,
        text: String::new(),
    };
    let batch = pad_batch::<T>(&[&clip], vocab)?;
    let (log_probs, frames) = model.infer(&batch.waveforms, &batch.lengths)?;
    let ids = greedy_decode(&log_probs, &frames)?.remove(0);
    vocab.detokenize(&ids)
}

/// Micro-averaged CER of greedy hypotheses against the dataset transcripts.
pub fn evaluate_cer<T: Scalar>(model: &Model<T>, data: &Dataset, vocab: &TokenVocabulary) -> Result<f64> {
    let clips: Vec<&AudioClip> = data.clips.iter().collect();
    let hyps = decode_clips(model, &clips, vocab)?;
    let refs: Vec<Vec<usize>> = data.clips.iter().map(|c| vocab.tokenize(&c.text)).collect();
    corpus_cer(&refs, &hyps)
}
