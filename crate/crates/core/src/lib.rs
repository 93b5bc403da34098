//! Raw-waveform speech recognition.
//!
//! A learnable sinc-filterbank path and a plain convolutional path read the
//! waveform directly; their feature maps are concatenated and fed through a
//! stack of bidirectional LSTMs trained with CTC. Decoding is greedy.

pub mod checkpoint;
pub mod cli;
pub mod ctc;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod sinc;
pub mod tensor;
pub mod trainer;
pub mod verify;
pub mod vocab;

pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Tensor};
