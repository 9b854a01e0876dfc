//! Task-specific output layers: pointer-style span scoring, span decoding,
//! multi-label relation classification, and binary cross entropy.

use crate::corpus::Task;
use crate::encoding::EncoderOutput;
use crate::error::{data, runtime};
use anyhow::Result;
use ndarray::{Array1, Array2};
use std::ops::Range;

/// Span head weights: one scoring vector plus bias per boundary side.
#[derive(Debug, Clone)]
pub struct SpanHeadParams {
    pub w_start: Array1<f64>,
    pub b_start: f64,
    pub w_end: Array1<f64>,
    pub b_end: f64,
}

/// Relation head weights: `(hidden, c)` matrix and `c` biases.
#[derive(Debug, Clone)]
pub struct RelationHeadParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Per-position start/end probabilities, zeroed outside the sentence segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanProbabilities {
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub segment: Range<usize>,
}

/// Per-label relation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationProbabilities {
    pub p: Vec<f64>,
}

impl RelationProbabilities {
    /// Labels above the threshold (default 0.5).
    pub fn predicted(&self, threshold: f64) -> Vec<usize> {
        self.p
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > threshold)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Independent per-position sigmoid scores for start and end boundaries.
/// Positions outside `segment` are masked to exactly 0.
pub fn span_probabilities(
    enc: &EncoderOutput,
    task: Task,
    params: &SpanHeadParams,
    segment: Range<usize>,
) -> Result<SpanProbabilities> {
    if task == Task::Relation {
        return Err(data("span_probabilities called with the relation task"));
    }
    if params.w_start.len() != enc.hidden_size() || params.w_end.len() != enc.hidden_size() {
        return Err(data(format!(
            "span head dimension {} does not match encoder hidden size {}",
            params.w_start.len(),
            enc.hidden_size()
        )));
    }
    let n = enc.len();
    let mut p_start = vec![0.0; n];
    let mut p_end = vec![0.0; n];
    for i in segment.clone() {
        let h = enc.hidden.row(i);
        p_start[i] = sigmoid(h.dot(&params.w_start) + params.b_start);
        p_end[i] = sigmoid(h.dot(&params.w_end) + params.b_end);
    }
    Ok(SpanProbabilities {
        p_start,
        p_end,
        segment,
    })
}

/// Sigmoid scores over relation labels from the classification-marker vector.
pub fn relation_probabilities(
    enc: &EncoderOutput,
    params: &RelationHeadParams,
) -> Result<RelationProbabilities> {
    if params.w.nrows() != enc.hidden_size() {
        return Err(data(format!(
            "relation head dimension {} does not match encoder hidden size {}",
            params.w.nrows(),
            enc.hidden_size()
        )));
    }
    let cls = enc.cls_vector();
    let z = cls.dot(&params.w) + &params.b;
    Ok(RelationProbabilities {
        p: z.iter().map(|&v| sigmoid(v)).collect(),
    })
}

/// Default decoder: starts are positions with `p_start > alpha`; the j-th
/// start's end is the argmax of `p_end` over `[start_j, start_{j+1})`, the
/// last start scanning to the end of the vector. Argmax ties break to the
/// smallest index.
pub fn decode_spans(sp: &SpanProbabilities, alpha: f64) -> Result<Vec<(usize, usize)>> {
    check_alpha(alpha)?;
    let starts: Vec<usize> = (0..sp.p_start.len())
        .filter(|&i| sp.p_start[i] > alpha)
        .collect();
    let mut spans = Vec::with_capacity(starts.len());
    for (j, &start) in starts.iter().enumerate() {
        let window_end = starts.get(j + 1).copied().unwrap_or(sp.p_end.len());
        let mut best = start;
        for i in start..window_end {
            if sp.p_end[i] > sp.p_end[best] {
                best = i;
            }
        }
        spans.push((start, best));
    }
    Ok(spans)
}

/// Ablation decoder: both boundaries thresholded independently; each start is
/// paired with the nearest subsequent above-threshold end, starts with no
/// such end are dropped.
pub fn decode_spans_threshold(sp: &SpanProbabilities, alpha: f64) -> Result<Vec<(usize, usize)>> {
    check_alpha(alpha)?;
    let mut spans = Vec::new();
    for start in (0..sp.p_start.len()).filter(|&i| sp.p_start[i] > alpha) {
        if let Some(end) = (start..sp.p_end.len()).find(|&i| sp.p_end[i] > alpha) {
            spans.push((start, end));
        }
    }
    Ok(spans)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha <= 0.0 || alpha >= 1.0 {
        Err(data(format!("threshold must lie in (0, 1), got {alpha}")))
    } else {
        Ok(())
    }
}

/// Loss reduction over positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Binary cross entropy on probabilities, returning the loss and its gradient
/// with respect to the predictions. Predictions are clamped away from 0/1.
pub fn bce_loss(
    predictions: &[f64],
    targets: &[f64],
    reduction: Reduction,
) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != targets.len() {
        return Err(data(format!(
            "bce length mismatch: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(data("bce targets must be 0 or 1"));
    }
    if predictions.is_empty() {
        return Err(data("bce on empty vectors"));
    }
    const EPS: f64 = 1e-12;
    let denom = match reduction {
        Reduction::Mean => predictions.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; predictions.len()];
    for (i, (&p, &t)) in predictions.iter().zip(targets.iter()).enumerate() {
        let p = p.clamp(EPS, 1.0 - EPS);
        loss += -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        grad[i] = ((p - t) / (p * (1.0 - p))) / denom;
    }
    loss /= denom;
    if !loss.is_finite() {
        return Err(runtime("non-finite bce loss"));
    }
    Ok((loss, grad))
}
