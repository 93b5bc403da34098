//! Binary checkpoints: `SWA1` magic, a length-prefixed JSON header, then a
//! table of named little-endian tensors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{AdamConfig, AdamState, Moments};
use crate::tensor::{Precision, Scalar, Tensor};
use crate::vocab::TokenVocabulary;

pub const MAGIC: &[u8; 4] = b"SWA1";
pub const FORMAT_VERSION: u32 = 1;

const FIRST_MOMENT_PREFIX: &str = "adam.m.";
const SECOND_MOMENT_PREFIX: &str = "adam.v.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: AdamConfig,
    pub step_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub vocab_digest: String,
    /// Token list in id order, so a checkpoint can decode on its own.
    pub vocab: Vec<String>,
    pub epoch: usize,
    pub precision: Precision,
    pub optimizer: Option<OptimizerMeta>,
}

impl CheckpointMeta {
    pub fn vocabulary(&self) -> Result<TokenVocabulary> {
        let vocab = TokenVocabulary::from_list(self.vocab.clone())?;
        if vocab.digest() != self.vocab_digest {
            return Err(Error::Checkpoint("vocabulary does not match its recorded digest".into()));
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub model: Model<T>,
    pub optimizer: Option<AdamState<T>>,
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<T>,
    optimizer: Option<&AdamState<T>>,
    vocab: &TokenVocabulary,
    epoch: usize,
) -> Result<()> {
    let path = path.as_ref();
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens but the model emits {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        model: model.config.clone(),
        vocab_digest: vocab.digest(),
        vocab: vocab.tokens().to_vec(),
        epoch,
        precision: T::PRECISION,
        optimizer: optimizer.map(|o| OptimizerMeta {
            config: o.config,
            step_count: o.step_count,
        }),
    };
    let mut tensors: Vec<(String, &Tensor<T>)> = Vec::new();
    for (name, p) in model.params() {
        tensors.push((name, &p.value));
    }
    tensors.extend(model.buffers());
    if let Some(opt) = optimizer {
        for m in &opt.moments {
            tensors.push((format!("{FIRST_MOMENT_PREFIX}{}", m.name), &m.first));
            tensors.push((format!("{SECOND_MOMENT_PREFIX}{}", m.name), &m.second));
        }
    }

    let header = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::PRECISION.dtype_code());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_header(bytes: &[u8]) -> Result<(CheckpointMeta, Cursor<'_>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}; not a checkpoint file",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = cur.u32("metadata length")? as usize;
    let header = cur.take(len, "metadata")?;
    let meta: CheckpointMeta = serde_json::from_slice(header)
        .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    Ok((meta, cur))
}

/// Reads only the metadata, e.g. to learn the stored precision.
pub fn read_checkpoint_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(read_header(&bytes)?.0)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (meta, mut cur) = read_header(&bytes)?;
    if meta.precision != T::PRECISION {
        return Err(Error::Checkpoint(format!(
            "stored as {:?} precision, requested {:?}",
            meta.precision,
            T::PRECISION
        )));
    }
    meta.vocabulary()?;

    let mut tensors: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    while !cur.done() {
        let name_len = cur.u32("tensor name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let dtype = cur.take(1, "dtype")?[0];
        match Precision::from_dtype_code(dtype) {
            Some(p) if p == T::PRECISION => {}
            Some(p) => {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has dtype {p:?}, file declares {:?}",
                    T::PRECISION
                )))
            }
            None => return Err(Error::Checkpoint(format!("tensor {name} has unknown dtype code {dtype}"))),
        }
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("dimension")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} has an overflowing shape")))?;
        let raw = cur.take(count.saturating_mul(T::BYTES), &format!("data of {name}"))?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }

    let mut take = |name: &str, like: &[usize]| -> Result<Tensor<T>> {
        let t = tensors
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != like {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, model expects {like:?}",
                t.shape()
            )));
        }
        Ok(t)
    };

    let mut model: Model<T> = Model::build(meta.model.clone(), 0)?;
    let mut param_names = Vec::new();
    for (name, p) in model.params_mut() {
        p.value = take(&name, p.value.shape())?;
        param_names.push((name, p.value.shape().to_vec()));
    }
    for (name, b) in model.buffers_mut() {
        *b = take(&name, b.shape())?;
    }
    let optimizer = match meta.optimizer {
        None => None,
        Some(om) => {
            let mut state = AdamState::new(om.config);
            state.step_count = om.step_count;
            if om.step_count > 0 {
                for (name, shape) in &param_names {
                    state.moments.push(Moments {
                        name: name.clone(),
                        first: take(&format!("{FIRST_MOMENT_PREFIX}{name}"), shape)?,
                        second: take(&format!("{SECOND_MOMENT_PREFIX}{name}"), shape)?,
                    });
                }
            }
            Some(state)
        }
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint { meta, model, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PathStructure;
    use crate::nn::Mode;
    use crate::sinc::WindowMode;

    fn small_config(vocab: usize) -> ModelConfig {
        ModelConfig {
            preset: "test".into(),
            structure: PathStructure::SincCnn,
            kernel_size: 65,
            channels: 3,
            conv_kernel: 3,
            pool: 3,
            lstm_layers: 2,
            lstm_hidden: 4,
            dropout: 0.1,
            vocab_size: vocab,
            sample_rate: 8000.0,
            window_mode: WindowMode::StandardHamming,
        }
    }

    fn trained_state<T: Scalar>() -> (Model<T>, AdamState<T>, TokenVocabulary) {
        let vocab = TokenVocabulary::build(&["ABC"]).unwrap();
        let mut model: Model<T> = Model::build(small_config(vocab.len()), 3).unwrap();
        let mut adam = AdamState::new(AdamConfig::default());
        for (i, (_, p)) in model.params_mut().into_iter().enumerate() {
            p.grad = p.value.map(|v| v * T::of(0.5) + T::of(i as f64 * 1e-3));
        }
        adam.step(model.params_mut()).unwrap();
        model.zero_grad();
        let x = Tensor::from_vec(&[2, 1, 900], (0..1800).map(|i| T::of((i as f64 * 0.37).sin())).collect()).unwrap();
        let pass = model.forward(&x, &[900, 800], Mode::Train { seed: 1 }).unwrap();
        model.update_running_stats(&pass);
        (model, adam, vocab)
    }

    fn bits<T: Scalar>(t: &Tensor<T>) -> Vec<u64> {
        t.data().iter().map(|v| v.as_f64().to_bits()).collect()
    }

    fn round_trip<T: Scalar>() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let (model, adam, vocab) = trained_state::<T>();
        save_checkpoint(&path, &model, Some(&adam), &vocab, 7).unwrap();
        let ck: Checkpoint<T> = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta.epoch, 7);
        assert_eq!(ck.meta.vocabulary().unwrap(), vocab);
        assert_eq!(ck.model, model);
        assert_eq!(ck.optimizer.as_ref(), Some(&adam));
        for ((_, a), (_, b)) in model.params().iter().zip(ck.model.params()) {
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        for (a, b) in adam.moments.iter().zip(&ck.optimizer.unwrap().moments) {
            assert_eq!(bits(&a.first), bits(&b.first));
            assert_eq!(bits(&a.second), bits(&b.second));
        }
        let x = Tensor::from_vec(&[1, 1, 1000], (0..1000).map(|i| T::of((i as f64 * 0.11).cos())).collect()).unwrap();
        let (a, _) = model.infer(&x, &[1000]).unwrap();
        let (b, _) = ck.model.infer(&x, &[1000]).unwrap();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn round_trip_is_bitwise_f32() {
        round_trip::<f32>();
    }

    #[test]
    fn round_trip_is_bitwise_f64() {
        round_trip::<f64>();
    }

    #[test]
    fn fresh_optimizer_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let vocab = TokenVocabulary::build(&["AB"]).unwrap();
        let model: Model<f64> = Model::build(small_config(vocab.len()), 0).unwrap();
        let adam = AdamState::new(AdamConfig::default());
        save_checkpoint(&path, &model, Some(&adam), &vocab, 0).unwrap();
        let ck: Checkpoint<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(ck.optimizer, Some(adam));
        save_checkpoint(&path, &model, None, &vocab, 0).unwrap();
        assert!(load_checkpoint::<f64>(&path).unwrap().optimizer.is_none());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (model, adam, vocab) = trained_state::<f32>();
        save_checkpoint(&path, &model, Some(&adam), &vocab, 1).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        fs::write(&path, &good[..10]).unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());

        fs::write(&path, &good).unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("precision"), "{err}");

        let header_len = u32::from_le_bytes(good[4..8].try_into().unwrap()) as usize;
        let dtype_at = 8 + header_len + 4 + u32::from_le_bytes(good[8 + header_len..12 + header_len].try_into().unwrap()) as usize;
        let mut bad = good.clone();
        bad[dtype_at] = 1;
        fs::write(&path, &bad).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("dtype"), "{err}");
    }

    #[test]
    fn vocabulary_size_must_match_model() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = TokenVocabulary::build(&["AB"]).unwrap();
        let model: Model<f64> = Model::build(small_config(vocab.len() + 1), 0).unwrap();
        assert!(save_checkpoint(dir.path().join("x"), &model, None, &vocab, 0).is_err());
    }
}
