//! Differentiable layers with hand-written backward passes.
//!
//! Every operation comes as a forward function plus a matching backward
//! function that consumes whatever the forward cached. There is no tape:
//! the model wires the calls together in reverse order itself.

mod adam;
mod conv;
pub mod gradcheck;
mod linear;
mod lstm;
mod norm;
mod param;

pub use adam::{AdamConfig, AdamState, Moments};
pub use conv::{
    conv1d, conv1d_backward, conv1d_kernel_grad, maxpool1d, maxpool1d_backward, output_length, relu, relu_backward,
    LengthStage, PoolIndices,
};
pub use gradcheck::{grad_check, grad_check_piecewise, GradCheckReport, FD_STEP, MAX_SKIPPED_FRACTION, REFINEMENTS};
pub use linear::{linear, linear_backward, log_softmax, log_softmax_backward, Linear};
pub use lstm::{BiLstm, BiLstmCache, LstmCache, LstmCell};
pub use norm::{dropout, BatchNorm, BatchNormCache, BatchNormStats, BN_EPSILON, BN_MOMENTUM};
pub use param::Param;

/// Whether a forward pass is part of training or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active. The seed drives every dropout mask.
    Train { seed: u64 },
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Deterministic sub-seed for a layer, so masks do not repeat across layers.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
