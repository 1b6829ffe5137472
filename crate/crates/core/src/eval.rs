//! Evaluation utilities: accuracy, attention-coefficient statistics,
//! histograms, and the feature-similarity edge filter used by the
//! preprocessing baseline.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::{Graph, PerturbationSet};
use crate::losses::{dist_loss, perturb_attention_sum};
use crate::model::{
    model_forward, AttentionRecord, MessageEdges, ModelConfig, ModelParams, ParamNodeIds,
};
use crate::autodiff::Tape;
use crate::tensor::Tensor;

/// Inference forward pass: logits, attention records, directed edges.
pub fn forward_inference(
    params: &ModelParams,
    config: &ModelConfig,
    graph: &Graph,
) -> Result<(Tensor, Vec<AttentionRecord>, Rc<MessageEdges>)> {
    let mut tape = Tape::new();
    let ids = ParamNodeIds::constants(&mut tape, params);
    let edges = Rc::new(MessageEdges::build(graph));
    let out = model_forward(&mut tape, &ids, config, graph, edges.clone())?;
    Ok((tape.value(out.logits).clone(), out.records, edges))
}

/// Fraction of `node_set` whose argmax class matches the label. Ties resolve
/// to the lowest class index.
pub fn accuracy(
    params: &ModelParams,
    config: &ModelConfig,
    graph: &Graph,
    node_set: &[usize],
) -> Result<f64> {
    if node_set.is_empty() {
        return Err(Error::Contract("accuracy over an empty node set".into()));
    }
    let (logits, _, _) = forward_inference(params, config, graph)?;
    let mut correct = 0usize;
    for &v in node_set {
        let label = graph
            .label(v)
            .ok_or_else(|| Error::Contract(format!("node {} is unlabeled", v)))?;
        let row = logits.row(v);
        let mut arg = 0usize;
        for (c, &score) in row.iter().enumerate() {
            if score > row[arg] {
                arg = c;
            }
        }
        if arg == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / node_set.len() as f64)
}

/// Per-class accuracy over `node_set`; classes missing from the set get NaN-free
/// `None`.
pub fn per_class_accuracy(
    params: &ModelParams,
    config: &ModelConfig,
    graph: &Graph,
    node_set: &[usize],
) -> Result<Vec<Option<f64>>> {
    let (logits, _, _) = forward_inference(params, config, graph)?;
    let mut correct = vec![0usize; graph.n_classes()];
    let mut total = vec![0usize; graph.n_classes()];
    for &v in node_set {
        let label = graph
            .label(v)
            .ok_or_else(|| Error::Contract(format!("node {} is unlabeled", v)))?;
        total[label] += 1;
        let row = logits.row(v);
        let mut arg = 0usize;
        for (c, &score) in row.iter().enumerate() {
            if score > row[arg] {
                arg = c;
            }
        }
        if arg == label {
            correct[label] += 1;
        }
    }
    Ok(correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t == 0 { None } else { Some(c as f64 / t as f64) })
        .collect())
}

/// Mean unnormalized coefficients over the normal and perturbed pools, the
/// attention sum over perturbed edges, and the distance-loss value.
#[derive(Clone, Copy, Debug)]
pub struct AttentionStats {
    pub normal_mean: f64,
    pub perturbed_mean: f64,
    pub perturb_attention_sum: f64,
    pub dist_loss: f64,
    pub normal_directed_count: usize,
    pub perturbed_directed_count: usize,
}

pub fn attention_stats(
    params: &ModelParams,
    config: &ModelConfig,
    graph: &Graph,
    perturbed: &PerturbationSet,
    eta: f64,
) -> Result<AttentionStats> {
    let (_, records, edges) = forward_inference(params, config, graph)?;
    let (normal_idx, ptb_idx) = edges.coefficient_pools(graph, perturbed);
    let mean_over = |idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for record in &records {
            for head in &record.unnormalized {
                for &e in idx {
                    sum += head[e];
                }
                count += idx.len();
            }
        }
        sum / count as f64
    };
    Ok(AttentionStats {
        normal_mean: mean_over(&normal_idx),
        perturbed_mean: mean_over(&ptb_idx),
        perturb_attention_sum: perturb_attention_sum(&records, &edges, graph, perturbed),
        dist_loss: dist_loss(&records, &edges, graph, perturbed, eta)?,
        normal_directed_count: normal_idx.len(),
        perturbed_directed_count: ptb_idx.len(),
    })
}

/// Histograms of unnormalized coefficients over normal and perturbed directed
/// edges, pooled across layers and heads, with shared bin edges.
#[derive(Clone, Debug)]
pub struct AttentionHistogram {
    pub bin_edges: Vec<f64>,
    pub normal_counts: Vec<usize>,
    pub perturbed_counts: Vec<usize>,
}

pub fn attention_histogram(
    params: &ModelParams,
    config: &ModelConfig,
    graph: &Graph,
    perturbed: &PerturbationSet,
    n_bins: usize,
) -> Result<AttentionHistogram> {
    if n_bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    let (_, records, edges) = forward_inference(params, config, graph)?;
    let (normal_idx, ptb_idx) = edges.coefficient_pools(graph, perturbed);

    let collect = |idx: &[usize]| -> Vec<f64> {
        let mut vals = Vec::new();
        for record in &records {
            for head in &record.unnormalized {
                vals.extend(idx.iter().map(|&e| head[e]));
            }
        }
        vals
    };
    let normal_vals = collect(&normal_idx);
    let ptb_vals = collect(&ptb_idx);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in normal_vals.iter().chain(&ptb_vals) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        // no pooled coefficients at all; degenerate single range around zero
        lo = 0.0;
        hi = 0.0;
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();

    let bucket = |vals: &[f64]| -> Vec<usize> {
        let mut counts = vec![0usize; n_bins];
        for &v in vals {
            let mut b = ((v - lo) / width) as usize;
            if b >= n_bins {
                b = n_bins - 1;
            }
            counts[b] += 1;
        }
        counts
    };
    Ok(AttentionHistogram {
        bin_edges,
        normal_counts: bucket(&normal_vals),
        perturbed_counts: bucket(&ptb_vals),
    })
}

/// Cosine similarity of feature rows; zero vectors have similarity 0.
pub fn feature_cosine(graph: &Graph, u: usize, v: usize) -> f64 {
    let a = graph.features().row(u);
    let b = graph.features().row(v);
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Preprocessing defense: drop edges whose endpoint features have cosine
/// similarity below `threshold`.
pub fn filter_low_similarity_edges(graph: &Graph, threshold: f64) -> Result<Graph> {
    let kept: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .filter(|&&(u, v)| feature_cosine(graph, u, v) >= threshold)
        .copied()
        .collect();
    graph.with_edges(kept)
}
