//! C ABI over the recognizer: load a checkpoint, transcribe audio, free what
//! was returned. Every fallible call returns an [`SaStatus`]; the message for
//! the most recent failure on the calling thread is available from
//! [`sa_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sinc_asr::checkpoint::{load_checkpoint, read_checkpoint_meta};
use sinc_asr::data::read_wav;
use sinc_asr::model::Model;
use sinc_asr::trainer::{edit_distance, transcribe};
use sinc_asr::vocab::{normalize_text, TokenVocabulary};
use sinc_asr::{Error, Precision};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Checkpoint = 5,
    Audio = 6,
    InputTooShort = 7,
    Internal = 8,
}

enum Weights {
    Single(Model<f32>),
    Double(Model<f64>),
}

/// A loaded checkpoint ready to transcribe. Not safe to share between
/// threads without external locking.
pub struct SaRecognizer {
    weights: Weights,
    vocab: TokenVocabulary,
}

impl SaRecognizer {
    fn open(path: PathBuf) -> sinc_asr::Result<Self> {
        let meta = read_checkpoint_meta(&path)?;
        let vocab = meta.vocabulary()?;
        let weights = match meta.precision {
            Precision::Single => Weights::Single(load_checkpoint::<f32>(&path)?.model),
            Precision::Double => Weights::Double(load_checkpoint::<f64>(&path)?.model),
        };
        Ok(SaRecognizer { weights, vocab })
    }

    fn config(&self) -> &sinc_asr::model::ModelConfig {
        match &self.weights {
            Weights::Single(m) => &m.config,
            Weights::Double(m) => &m.config,
        }
    }

    fn transcribe(&self, samples: &[f64], sample_rate: u32) -> sinc_asr::Result<String> {
        match &self.weights {
            Weights::Single(m) => transcribe(m, samples, sample_rate, &self.vocab),
            Weights::Double(m) => transcribe(m, samples, sample_rate, &self.vocab),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

struct Failure(SaStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let status = match &err {
            Error::Io { .. } => SaStatus::Io,
            Error::Checkpoint(_) | Error::Json(_) => SaStatus::Checkpoint,
            Error::Audio { .. } => SaStatus::Audio,
            Error::TooShort { .. } => SaStatus::InputTooShort,
            Error::Shape(_) | Error::NonFinite(_) | Error::InfeasibleAlignment { .. } => SaStatus::Internal,
            _ => SaStatus::InvalidArgument,
        };
        Failure(status, err.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(SaStatus::NullArgument, format!("{name} is null"))
}

/// Runs `body`, recording any error or panic as the thread's last error.
fn guarded(body: impl FnOnce() -> Result<(), Failure>) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SaStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {message}"));
            SaStatus::Internal
        }
    }
}

unsafe fn c_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Failure(SaStatus::InvalidUtf8, format!("{name} is not UTF-8: {e}")))
}

fn into_c_string(text: String) -> Result<*mut c_char, Failure> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| Failure(SaStatus::Internal, "transcript contains a NUL byte".into()))
}

/// Message for the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sa_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint of either precision. On success `*out` owns a handle
/// that must be released with [`sa_recognizer_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sa_recognizer_open(path: *const c_char, out: *mut *mut SaRecognizer) -> SaStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let recognizer = SaRecognizer::open(PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(recognizer));
        Ok(())
    })
}

/// # Safety
/// `recognizer` must be null or a handle from [`sa_recognizer_open`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn sa_recognizer_free(recognizer: *mut SaRecognizer) {
    if !recognizer.is_null() {
        drop(Box::from_raw(recognizer));
    }
}

/// Sample rate the model was trained at, or 0 for a null handle.
///
/// # Safety
/// `recognizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_recognizer_sample_rate(recognizer: *const SaRecognizer) -> u32 {
    recognizer.as_ref().map_or(0, |r| r.config().sample_rate as u32)
}

/// Shortest input, in samples, that yields at least one output frame.
///
/// # Safety
/// `recognizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_recognizer_min_samples(recognizer: *const SaRecognizer) -> usize {
    recognizer.as_ref().map_or(0, |r| r.config().min_samples())
}

/// Number of output classes, counting the blank.
///
/// # Safety
/// `recognizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_recognizer_vocab_size(recognizer: *const SaRecognizer) -> usize {
    recognizer.as_ref().map_or(0, |r| r.vocab.len())
}

/// Greedy transcript of mono samples in [-1, 1]. On success `*out` owns a
/// string that must be released with [`sa_string_free`].
///
/// # Safety
/// `samples` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_recognizer_transcribe(
    recognizer: *const SaRecognizer,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut c_char,
) -> SaStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let recognizer = recognizer.as_ref().ok_or_else(|| null("recognizer"))?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        let samples: Vec<f64> = std::slice::from_raw_parts(samples, len).iter().map(|&s| s as f64).collect();
        *out = into_c_string(recognizer.transcribe(&samples, sample_rate)?)?;
        Ok(())
    })
}

/// Greedy transcript of a 16-bit PCM mono WAV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_recognizer_transcribe_wav(
    recognizer: *const SaRecognizer,
    path: *const c_char,
    out: *mut *mut c_char,
) -> SaStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let recognizer = recognizer.as_ref().ok_or_else(|| null("recognizer"))?;
        let (samples, sample_rate) = read_wav(c_str(path, "path")?)?;
        *out = into_c_string(recognizer.transcribe(&samples, sample_rate)?)?;
        Ok(())
    })
}

/// # Safety
/// `text` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sa_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// Levenshtein distance between two transcripts, counted in characters after
/// the same normalization the recognizer applies to training text.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_edit_distance(
    reference: *const c_char,
    hypothesis: *const c_char,
    out: *mut usize,
) -> SaStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let reference: Vec<char> = normalize_text(c_str(reference, "reference")?).chars().collect();
        let hypothesis: Vec<char> = normalize_text(c_str(hypothesis, "hypothesis")?).chars().collect();
        *out = edit_distance(&reference, &hypothesis);
        Ok(())
    })
}
