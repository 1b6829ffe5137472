//! Composite functions assembled from tape primitives.
//!
//! Everything here stays differentiable to arbitrary order because it only
//! chains primitives whose backward rules are themselves tape operations.

use std::rc::Rc;

use super::kernels;
use super::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Exponential linear unit: `x` for `x > 0`, `exp(x) − 1` otherwise.
///
/// The negative branch is evaluated as `exp(min(x, 0)) − 1` so the
/// exponential never overflows, and branch selection uses constant masks, so
/// the curvature of the negative branch survives double differentiation.
pub fn elu(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    let shape = tape.shape(x).to_vec();
    let pos_mask = kernels::map1(tape.value(x), |v| if v > 0.0 { 1.0 } else { 0.0 })?;
    let neg_mask = kernels::map1(&pos_mask, |m| 1.0 - m)?;
    let pos_mask = tape.constant(pos_mask);
    let neg_mask = tape.constant(neg_mask);

    let clamped = tape.min_zero(x)?;
    let e = tape.exp(clamped)?;
    let ones = tape.constant(Tensor::filled(shape, 1.0)?);
    let neg_branch = tape.sub(e, ones)?;

    let pos_part = tape.mul(x, pos_mask)?;
    let neg_part = tape.mul(neg_branch, neg_mask)?;
    tape.add(pos_part, neg_part)
}

/// Softmax within segments of a column vector.
///
/// `segments[e]` assigns entry `e` to one of `n_segments` groups; within each
/// group the outputs are `exp(s − max)/Σ exp(s − max)`. The per-segment max is
/// a detached constant: softmax is invariant to per-segment shifts, so the
/// gradient is exact everywhere.
pub fn segment_softmax(
    tape: &mut Tape,
    scores: NodeId,
    segments: Rc<Vec<usize>>,
    n_segments: usize,
) -> Result<NodeId> {
    let v = tape.value(scores);
    if v.shape().len() != 2 || v.cols() != 1 || v.rows() != segments.len() {
        return Err(Error::Dimension(format!(
            "segment_softmax expects [{}, 1] scores, got {:?}",
            segments.len(),
            v.shape()
        )));
    }
    let mut seen = vec![false; n_segments];
    for &s in segments.iter() {
        if s >= n_segments {
            return Err(Error::Contract(format!(
                "segment id {} out of range ({} segments)",
                s, n_segments
            )));
        }
        seen[s] = true;
    }
    if let Some(empty) = seen.iter().position(|&s| !s) {
        return Err(Error::Contract(format!("segment {} is empty", empty)));
    }

    let maxes = kernels::segment_max(tape.value(scores), &segments, n_segments)?;
    let per_entry: Vec<f64> = segments.iter().map(|&s| maxes[s]).collect();
    let shift = tape.constant(Tensor::column(per_entry)?);

    let centered = tape.sub(scores, shift)?;
    let expd = tape.exp(centered)?;
    let denom_per_segment = tape.scatter_add_rows(expd, segments.clone(), n_segments)?;
    let denom = tape.gather_rows(denom_per_segment, segments)?;
    tape.div(expd, denom)
}
