//! Training objectives: continued pre-training cross-entropy, the pairwise
//! hinge for teacher fine-tuning, and the three distillation losses.
//!
//! Teacher scores enter the distillation losses as plain floats, so no
//! gradient can flow back into the teacher by construction. All losses are
//! scalar tape tensors; batches average them with `Tape::mean_scalars`.

use crate::numerics::{Prng, Result as NumResult, Tape, TensorId};
use crate::textmodel::tokenizer::{encode_pair, query_span_end};
use crate::textmodel::{Leased, ModelError, ModelParams, QueryDoc};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("document has neither title nor summary; no target positions")]
    EmptyDocument,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

/// Next-token targets and loss mask for one encoded pair.
///
/// Step i predicts token i+1. Steps whose target falls inside the query span
/// are masked out: the query conditions the prediction but is never itself
/// predicted. Both separators, the document bytes, and the end token are
/// targets. The final step (input = end token) has no successor and is
/// masked.
pub fn cpt_targets(doc: &QueryDoc, seq: &[u16]) -> (Vec<u16>, Vec<f32>) {
    let t = seq.len();
    let span = query_span_end(doc);
    let mut targets = vec![0u16; t];
    let mut mask = vec![0.0f32; t];
    for i in 0..t - 1 {
        targets[i] = seq[i + 1];
        if i + 1 >= span {
            mask[i] = 1.0;
        }
    }
    (targets, mask)
}

/// Continued pre-training loss: mean next-token cross-entropy over the
/// document portion of `<s> query : title : summary </s>`.
pub fn cpt_loss(
    model: &ModelParams,
    tape: &mut Tape,
    lease: &Leased,
    doc: &QueryDoc,
    max_len: usize,
) -> Result<TensorId, ObjectiveError> {
    if doc.title.is_empty() && doc.summary.is_empty() {
        return Err(ObjectiveError::EmptyDocument);
    }
    let seq = encode_pair(doc, max_len)?;
    let logits = model.lm_logits_graph(tape, lease, &seq)?;
    let (targets, mask) = cpt_targets(doc, &seq);
    Ok(tape.cross_entropy(logits, &targets, &mask)?)
}

/// Pairwise hinge: max(0, margin - (pos - neg)).
///
/// Zero exactly when the relevant document outscores the non-relevant one by
/// at least `margin`; linear in the shortfall otherwise.
pub fn hinge_loss(
    tape: &mut Tape,
    pos: TensorId,
    neg: TensorId,
    margin: f32,
) -> NumResult<TensorId> {
    let shape = tape.shape(pos).to_vec();
    let m = tape.leaf(vec![margin; 1], &shape, false)?;
    let neg_pos = tape.scale(pos, -1.0)?;
    let gap = tape.add(m, neg_pos)?;
    let gap = tape.add(gap, neg)?;
    tape.relu(gap)
}

fn constant_like(tape: &mut Tape, like: TensorId, value: f32) -> NumResult<TensorId> {
    let shape = tape.shape(like).to_vec();
    tape.leaf(vec![value; 1], &shape, false)
}

/// Point-wise distillation: (t_pos - s_pos)^2 + (t_neg - s_neg)^2.
pub fn point_mse_loss(
    tape: &mut Tape,
    t_pos: f32,
    t_neg: f32,
    s_pos: TensorId,
    s_neg: TensorId,
) -> NumResult<TensorId> {
    let tp = constant_like(tape, s_pos, t_pos)?;
    let tn = constant_like(tape, s_neg, t_neg)?;
    let lp = tape.mse(s_pos, tp)?;
    let ln = tape.mse(s_neg, tn)?;
    tape.add(lp, ln)
}

/// Margin distillation: ((t_pos - t_neg) - (s_pos - s_neg))^2.
pub fn margin_mse_loss(
    tape: &mut Tape,
    t_pos: f32,
    t_neg: f32,
    s_pos: TensorId,
    s_neg: TensorId,
) -> NumResult<TensorId> {
    let neg_s_neg = tape.scale(s_neg, -1.0)?;
    let s_gap = tape.add(s_pos, neg_s_neg)?;
    let t_gap = constant_like(tape, s_gap, t_pos - t_neg)?;
    tape.mse(s_gap, t_gap)
}

/// Hybrid distillation: point + weight * margin.
///
/// With weight 0 this is bit-identical to the point loss: the margin term is
/// scaled to exactly +0.0 and adding it changes nothing.
pub fn hybrid_loss(
    tape: &mut Tape,
    t_pos: f32,
    t_neg: f32,
    s_pos: TensorId,
    s_neg: TensorId,
    weight: f32,
) -> NumResult<TensorId> {
    let point = point_mse_loss(tape, t_pos, t_neg, s_pos, s_neg)?;
    let margin = margin_mse_loss(tape, t_pos, t_neg, s_pos, s_neg)?;
    let weighted = tape.scale(margin, weight)?;
    tape.add(point, weighted)
}

/// A mined (positive, negative) pair, as indices into one query's documents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIdx {
    pub pos: usize,
    pub neg: usize,
}

fn cap_pairs(pairs: Vec<PairIdx>, cap: usize, rng: &mut Prng) -> Vec<PairIdx> {
    if pairs.len() <= cap {
        return pairs;
    }
    let keep = rng.sample_distinct(pairs.len(), cap);
    keep.into_iter().map(|i| pairs[i]).collect()
}

/// All (pos, neg) pairs within one labeled group where label(pos) >
/// label(neg), uniformly subsampled to at most `cap`.
pub fn mine_label_pairs(labels: &[u8], cap: usize, rng: &mut Prng) -> Vec<PairIdx> {
    let mut pairs = Vec::new();
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] > labels[j] {
                pairs.push(PairIdx { pos: i, neg: j });
            }
        }
    }
    cap_pairs(pairs, cap, rng)
}

/// All (pos, neg) pairs within one scored group, the higher teacher score as
/// positive; tied scores yield no pair. Subsampled to at most `cap`.
pub fn mine_score_pairs(scores: &[f32], cap: usize, rng: &mut Prng) -> Vec<PairIdx> {
    let mut pairs = Vec::new();
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if scores[i] > scores[j] {
                pairs.push(PairIdx { pos: i, neg: j });
            }
        }
    }
    cap_pairs(pairs, cap, rng)
}
