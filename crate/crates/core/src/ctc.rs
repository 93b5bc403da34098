//! Connectionist temporal classification.
//!
//! Paths are frame-level token sequences over an alphabet whose index 0 is
//! the blank. A path maps to a label by merging runs of equal tokens and then
//! deleting blanks; the label probability sums over every path that maps to
//! it. The forward-backward recursion runs in log space.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BLANK: usize = 0;

/// Refuse brute-force enumeration beyond this many paths.
pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

/// Merges repeated tokens, then drops blanks.
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &tok in path {
        if Some(tok) != prev && tok != BLANK {
            out.push(tok);
        }
        prev = Some(tok);
    }
    out
}

/// Fewest frames able to emit `label`: one per token plus a blank between
/// each pair of equal neighbours.
pub fn min_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Forward/backward variables of one utterance on the blank-extended label.
struct Lattice {
    ext: Vec<usize>,
    /// `alpha[t * S + s]`: log prob of prefixes ending in state `s` at `t`,
    /// including frame `t`.
    alpha: Vec<f64>,
    /// `beta[t * S + s]`: log prob of completing from `s` at `t`, excluding
    /// frame `t`.
    beta: Vec<f64>,
    log_p: f64,
}

impl Lattice {
    /// `lp` is row-major `[frames, k]`.
    fn build(lp: &[f64], frames: usize, k: usize, label: &[usize]) -> Lattice {
        let mut ext = Vec::with_capacity(2 * label.len() + 1);
        ext.push(BLANK);
        for &l in label {
            ext.push(l);
            ext.push(BLANK);
        }
        let s_len = ext.len();
        let ninf = f64::NEG_INFINITY;
        let mut alpha = vec![ninf; frames * s_len];
        let mut beta = vec![ninf; frames * s_len];
        if frames == 0 {
            let log_p = if label.is_empty() { 0.0 } else { ninf };
            return Lattice { ext, alpha, beta, log_p };
        }
        let skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

        alpha[0] = lp[ext[0]];
        if s_len > 1 {
            alpha[1] = lp[ext[1]];
        }
        for t in 1..frames {
            let (prev, cur) = alpha.split_at_mut(t * s_len);
            let prev = &prev[(t - 1) * s_len..];
            for s in 0..s_len {
                let mut a = prev[s];
                if s >= 1 {
                    a = log_add(a, prev[s - 1]);
                }
                if skip(s) {
                    a = log_add(a, prev[s - 2]);
                }
                cur[s] = a + lp[t * k + ext[s]];
            }
        }

        let last = (frames - 1) * s_len;
        beta[last + s_len - 1] = 0.0;
        if s_len > 1 {
            beta[last + s_len - 2] = 0.0;
        }
        for t in (0..frames - 1).rev() {
            let (cur, next) = beta.split_at_mut((t + 1) * s_len);
            let cur = &mut cur[t * s_len..];
            let emit = |s: usize| next[s] + lp[(t + 1) * k + ext[s]];
            for s in 0..s_len {
                let mut b = emit(s);
                if s + 1 < s_len {
                    b = log_add(b, emit(s + 1));
                }
                if s + 2 < s_len && skip(s + 2) {
                    b = log_add(b, emit(s + 2));
                }
                cur[s] = b;
            }
        }

        let mut log_p = alpha[last + s_len - 1];
        if s_len > 1 {
            log_p = log_add(log_p, alpha[last + s_len - 2]);
        }
        Lattice { ext, alpha, beta, log_p }
    }
}

/// `log p(label | X)` for a single `[T, K]` matrix of log probabilities.
/// Infeasible labels give negative infinity.
pub fn log_likelihood<T: Scalar>(log_probs: &Tensor<T>, label: &[usize]) -> Result<f64> {
    let [frames, k] = log_probs.dims::<2>()?;
    check_label(label, k, 0)?;
    let lp = log_probs.to_f64_vec();
    Ok(Lattice::build(&lp, frames, k, label).log_p)
}

fn check_label(label: &[usize], k: usize, index: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Shape(format!(
            "alphabet must hold the blank and at least one token, got {k}"
        )));
    }
    if let Some(&bad) = label.iter().find(|&&l| l == BLANK || l >= k) {
        return Err(Error::Invalid(format!(
            "utterance {index}: label id {bad} outside 1..{k}"
        )));
    }
    Ok(())
}

/// Mean CTC loss over the batch and its exact gradient with respect to
/// `log_probs` (`[B, T, K]`). Frames past `frame_lengths[b]` get zero gradient.
pub fn ctc_loss_and_grad<T: Scalar>(
    log_probs: &Tensor<T>,
    labels: &[Vec<usize>],
    frame_lengths: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let [b, t_max, k] = log_probs.dims::<3>()?;
    if labels.len() != b || frame_lengths.len() != b {
        return Err(Error::Shape(format!(
            "batch of {b} with {} labels and {} frame lengths",
            labels.len(),
            frame_lengths.len()
        )));
    }
    if b == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    if !log_probs.all_finite() {
        return Err(Error::NonFinite("CTC log probabilities".into()));
    }
    for (i, (label, &frames)) in labels.iter().zip(frame_lengths).enumerate() {
        check_label(label, k, i)?;
        if frames > t_max {
            return Err(Error::Shape(format!(
                "utterance {i}: {frames} frames exceed the {t_max} available"
            )));
        }
        let need = min_frames(label);
        if frames < need {
            return Err(Error::InfeasibleAlignment {
                index: i,
                frames,
                label_len: label.len(),
                repeats: need - label.len(),
            });
        }
    }

    let lp = log_probs.to_f64_vec();
    let mut grad = vec![0.0f64; lp.len()];
    let mut total = 0.0;
    let scale = 1.0 / b as f64;
    for (i, (label, &frames)) in labels.iter().zip(frame_lengths).enumerate() {
        let base = i * t_max * k;
        let lat = Lattice::build(&lp[base..base + frames * k], frames, k, label);
        total -= lat.log_p;
        let s_len = lat.ext.len();
        for t in 0..frames {
            for s in 0..s_len {
                let occ = lat.alpha[t * s_len + s] + lat.beta[t * s_len + s] - lat.log_p;
                if occ > f64::NEG_INFINITY {
                    grad[base + t * k + lat.ext[s]] -= occ.exp() * scale;
                }
            }
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("CTC loss".into()));
    }
    Ok((loss, Tensor::from_f64(log_probs.shape(), &grad)?))
}

/// Sums the probability of every path that collapses to `label`, by explicit
/// enumeration of all `K^T` paths. Returns a probability, not a log.
pub fn brute_force_ctc<T: Scalar>(log_probs: &Tensor<T>, label: &[usize]) -> Result<f64> {
    let [frames, k] = log_probs.dims::<2>()?;
    let count = (k as u128).checked_pow(frames as u32).unwrap_or(u128::MAX);
    if count > BRUTE_FORCE_LIMIT as u128 {
        return Err(Error::Invalid(format!(
            "{k}^{frames} paths exceed the enumeration limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    let lp = log_probs.to_f64_vec();
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    for _ in 0..count {
        if collapse_path(&path) == label {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &tok)| lp[t * k + tok])
                .sum::<f64>()
                .exp();
        }
        // odometer increment
        for digit in path.iter_mut().rev() {
            *digit += 1;
            if *digit < k {
                break;
            }
            *digit = 0;
        }
    }
    Ok(total)
}

/// Per-frame argmax (lowest index on ties) followed by [`collapse_path`].
pub fn greedy_decode<T: Scalar>(log_probs: &Tensor<T>, frame_lengths: &[usize]) -> Result<Vec<Vec<usize>>> {
    let [b, t_max, k] = log_probs.dims::<3>()?;
    if frame_lengths.len() != b || frame_lengths.iter().any(|&n| n > t_max) {
        return Err(Error::Shape(format!(
            "frame lengths {frame_lengths:?} do not fit {:?}",
            log_probs.shape()
        )));
    }
    let data = log_probs.data();
    Ok(frame_lengths
        .iter()
        .enumerate()
        .map(|(i, &frames)| {
            let path: Vec<usize> = (0..frames)
                .map(|t| {
                    let row = &data[(i * t_max + t) * k..(i * t_max + t + 1) * k];
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate().skip(1) {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            collapse_path(&path)
        })
        .collect())
}
