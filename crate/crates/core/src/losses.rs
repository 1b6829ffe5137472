//! Training objectives: semi-supervised cross-entropy, the perturbed-edge
//! attention sum, the margin-hinged distance loss, and their combination.
//!
//! The distance loss operates on *unnormalized* coefficients and pushes the
//! empirical mean over perturbed edges below the mean over normal edges until
//! a margin of `eta` separates them. The attention sum over perturbed edges
//! is a diagnostic metric only; minimizing it directly destabilizes the
//! coefficients, so it never enters the objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::graph::{Graph, PerturbationSet};
use crate::model::{AttentionRecord, ForwardOutput, MessageEdges};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the distance loss in the combined objective.
    pub lambda: f64,
    /// Margin at which the distance-loss hinge saturates.
    pub eta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            eta: 100.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Parameter(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::Parameter(format!("eta {} must be >= 0", self.eta)));
        }
        Ok(())
    }
}

/// Components of one evaluation of the combined objective.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub classification: f64,
    pub distance: f64,
    pub perturb_attention_sum: f64,
    pub total: f64,
}

/// Mean negative log-likelihood of the true classes over `node_set`.
///
/// Averaging (rather than summing) keeps `lambda`'s scale independent of the
/// split size.
pub fn cross_entropy_node(
    tape: &mut Tape,
    logits: NodeId,
    graph: &Graph,
    node_set: &[usize],
) -> Result<NodeId> {
    if node_set.is_empty() {
        return Err(Error::Contract("cross-entropy over an empty node set".into()));
    }
    let n_classes = tape.shape(logits)[1];
    let mut mask_rows = Vec::with_capacity(node_set.len());
    for &v in node_set {
        let label = graph
            .label(v)
            .ok_or_else(|| Error::Contract(format!("node {} in loss set is unlabeled", v)))?;
        let mut row = vec![0.0; n_classes];
        row[label] = 1.0;
        mask_rows.push(row);
    }

    let rows = tape.gather_rows(logits, std::rc::Rc::new(node_set.to_vec()))?;
    // Row max is a detached shift: log-softmax is shift-invariant, so the
    // gradient stays exact while exp() stays bounded.
    let shift_vals: Vec<f64> = (0..node_set.len())
        .map(|i| {
            tape.value(rows).row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let shift_wide = {
        let mut vals = Vec::with_capacity(node_set.len() * n_classes);
        for &s in &shift_vals {
            vals.extend(std::iter::repeat(s).take(n_classes));
        }
        tape.constant(Tensor::new(vec![node_set.len(), n_classes], vals)?)
    };
    let centered = tape.sub(rows, shift_wide)?;
    let expd = tape.exp(centered)?;
    let row_sums = tape.sum_cols(expd)?;
    let log_sums = tape.log(row_sums)?;
    let ones = tape.constant(Tensor::filled(vec![1, n_classes], 1.0)?);
    let lse_wide = tape.matmul(log_sums, ones)?;
    let log_softmax = tape.sub(centered, lse_wide)?;

    let mask = tape.constant(Tensor::from_rows(&mask_rows)?);
    let picked = tape.mul(log_softmax, mask)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / node_set.len() as f64)
}

/// Sum of unnormalized coefficients over perturbed edges, across all layers,
/// heads, and both directions of each pair. Diagnostic only.
pub fn perturb_attention_sum(
    records: &[AttentionRecord],
    edges: &MessageEdges,
    graph: &Graph,
    perturbed: &PerturbationSet,
) -> f64 {
    let (_, ptb_idx) = edges.coefficient_pools(graph, perturbed);
    let mut total = 0.0;
    for record in records {
        for head in &record.unnormalized {
            for &e in &ptb_idx {
                total += head[e];
            }
        }
    }
    total
}

fn pooled_mean(records: &[AttentionRecord], idx: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for record in records {
        for head in &record.unnormalized {
            for &e in idx {
                sum += head[e];
            }
            count += idx.len();
        }
    }
    sum / count as f64
}

/// Value-level distance loss: `−min(eta, mean_normal − mean_perturbed)` over
/// all (layer, head, directed edge) tuples; 0 when nothing is perturbed.
pub fn dist_loss(
    records: &[AttentionRecord],
    edges: &MessageEdges,
    graph: &Graph,
    perturbed: &PerturbationSet,
    eta: f64,
) -> Result<f64> {
    let (normal_idx, ptb_idx) = edges.coefficient_pools(graph, perturbed);
    if ptb_idx.is_empty() {
        return Ok(0.0);
    }
    if normal_idx.is_empty() {
        return Err(Error::Contract("no normal edges to anchor the distance loss".into()));
    }
    let gap = pooled_mean(records, &normal_idx) - pooled_mean(records, &ptb_idx);
    Ok(-gap.min(eta))
}

/// Tape-resident distance loss over the forward pass's raw coefficient nodes.
fn dist_loss_node(
    tape: &mut Tape,
    scores: &[Vec<NodeId>],
    normal_idx: std::rc::Rc<Vec<usize>>,
    ptb_idx: std::rc::Rc<Vec<usize>>,
    eta: f64,
) -> Result<NodeId> {
    if normal_idx.is_empty() {
        return Err(Error::Contract("no normal edges to anchor the distance loss".into()));
    }
    let sum_over = |idx: std::rc::Rc<Vec<usize>>, tape: &mut Tape| -> Result<(NodeId, usize)> {
        let mut acc: Option<NodeId> = None;
        let mut tuples = 0usize;
        for layer in scores {
            for &head in layer {
                let picked = tape.gather_rows(head, idx.clone())?;
                let s = tape.sum(picked)?;
                acc = Some(match acc {
                    Some(prev) => tape.add(prev, s)?,
                    None => s,
                });
                tuples += idx.len();
            }
        }
        Ok((acc.expect("at least one layer"), tuples))
    };

    let (normal_sum, normal_tuples) = sum_over(normal_idx, tape)?;
    let (ptb_sum, ptb_tuples) = sum_over(ptb_idx, tape)?;
    let mean_normal = tape.scale(normal_sum, 1.0 / normal_tuples as f64)?;
    let mean_ptb = tape.scale(ptb_sum, 1.0 / ptb_tuples as f64)?;
    let gap = tape.sub(mean_normal, mean_ptb)?;

    // min(eta, gap) = eta + min(gap − eta, 0)
    let eta_node = tape.constant_scalar(eta)?;
    let shifted = tape.sub(gap, eta_node)?;
    let clamped = tape.min_zero(shifted)?;
    let hinged = tape.add(clamped, eta_node)?;
    tape.neg(hinged)
}

/// Assemble the combined objective on the tape so gradients flow through both
/// terms. With `lambda = 0` or an empty perturbation set the returned node is
/// exactly the cross-entropy node.
pub fn total_loss(
    tape: &mut Tape,
    forward: &ForwardOutput,
    graph: &Graph,
    node_set: &[usize],
    perturbed: &PerturbationSet,
    config: &LossConfig,
) -> Result<(NodeId, LossBreakdown)> {
    config.validate()?;
    let ce = cross_entropy_node(tape, forward.logits, graph, node_set)?;
    let classification = tape.value(ce).item()?;

    let s_p = perturb_attention_sum(&forward.records, &forward.edges, graph, perturbed);
    let distance_value = dist_loss(&forward.records, &forward.edges, graph, perturbed, config.eta)?;

    let total_node = if config.lambda == 0.0 || perturbed.is_empty() {
        ce
    } else {
        let (normal_idx, ptb_idx) = forward.edges.coefficient_pools(graph, perturbed);
        let dist = dist_loss_node(
            tape,
            &forward.scores,
            std::rc::Rc::new(normal_idx),
            std::rc::Rc::new(ptb_idx),
            config.eta,
        )?;
        let weighted = tape.scale(dist, config.lambda)?;
        tape.add(ce, weighted)?
    };

    let breakdown = LossBreakdown {
        classification,
        distance: distance_value,
        perturb_attention_sum: s_p,
        total: classification + config.lambda * distance_value,
    };
    Ok((total_node, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::graph::sbm_generate;
    use crate::model::{init_params, model_forward, Activation, ModelConfig, ParamNodeIds};
    use std::rc::Rc;

    fn record_from(unnormalized: Vec<Vec<f64>>) -> AttentionRecord {
        let normalized = unnormalized.clone();
        AttentionRecord {
            layer: 0,
            unnormalized,
            normalized,
        }
    }

    fn two_edge_graph() -> (Graph, MessageEdges) {
        let g = Graph::new(
            3,
            2,
            Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
            vec![(0, 1), (1, 2)],
            vec![Some(0), Some(1), Some(0)],
        )
        .unwrap();
        let e = MessageEdges::build(&g);
        (g, e)
    }

    #[test]
    fn uniform_logits_cost_ln_c() {
        let g = sbm_generate(12, 4, 0.5, 0.1, 3, 0.2, 0).unwrap();
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(vec![12, 4]));
        let set: Vec<usize> = (0..12).collect();
        let ce = cross_entropy_node(&mut tape, logits, &g, &set).unwrap();
        let v = tape.value(ce).item().unwrap();
        assert!((v - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let g = sbm_generate(8, 2, 0.5, 0.1, 3, 0.2, 1).unwrap();
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 80.0] {
            let mut rows = Vec::new();
            for i in 0..8 {
                let mut row = vec![0.0, 0.0];
                row[g.label(i).unwrap()] = margin;
                rows.push(row);
            }
            let mut tape = Tape::new();
            let logits = tape.leaf(Tensor::from_rows(&rows).unwrap());
            let set: Vec<usize> = (0..8).collect();
            let ce = cross_entropy_node(&mut tape, logits, &g, &set).unwrap();
            let v = tape.value(ce).item().unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-10);
    }

    // Independent straight-line evaluation of the averaged cross-entropy.
    #[test]
    fn cross_entropy_matches_independent_evaluation() {
        let g = Graph::new(
            5,
            3,
            Tensor::zeros(vec![5, 1]),
            vec![],
            vec![Some(0), Some(2), Some(1), Some(2), Some(0)],
        )
        .unwrap();
        let logits_rows = vec![
            vec![0.3, -1.2, 0.8],
            vec![2.0, 0.1, -0.4],
            vec![-0.9, 0.5, 1.4],
            vec![0.0, 0.0, 0.0],
            vec![1.1, -2.2, 3.3],
        ];
        let mut expected = 0.0;
        for (i, row) in logits_rows.iter().enumerate() {
            let y = g.label(i).unwrap();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            expected += lse - row[y];
        }
        expected /= 5.0;

        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&logits_rows).unwrap());
        let set: Vec<usize> = (0..5).collect();
        let ce = cross_entropy_node(&mut tape, logits, &g, &set).unwrap();
        assert!((tape.value(ce).item().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_empty_and_unlabeled() {
        let g = Graph::new(
            2,
            2,
            Tensor::zeros(vec![2, 1]),
            vec![],
            vec![Some(0), None],
        )
        .unwrap();
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(vec![2, 2]));
        assert!(cross_entropy_node(&mut tape, logits, &g, &[]).is_err());
        assert!(cross_entropy_node(&mut tape, logits, &g, &[1]).is_err());
    }

    #[test]
    fn attention_sum_empty_set_is_zero() {
        let (g, e) = two_edge_graph();
        let rec = vec![record_from(vec![vec![1.0; e.len()]])];
        assert_eq!(
            perturb_attention_sum(&rec, &e, &g, &PerturbationSet::empty()),
            0.0
        );
    }

    #[test]
    fn attention_sum_all_edges_is_total_over_pairs() {
        let (g, e) = two_edge_graph();
        // one layer, one head; directed entries 0..3 are the pair directions
        let coeffs: Vec<f64> = (0..e.len()).map(|i| i as f64 + 1.0).collect();
        let rec = vec![record_from(vec![coeffs.clone()])];
        let all = PerturbationSet::new(g.edges().iter().copied(), &g).unwrap();
        let expected: f64 = (0..e.len())
            .filter(|&i| !e.is_self_loop(i))
            .map(|i| coeffs[i])
            .sum();
        assert_eq!(perturb_attention_sum(&rec, &e, &g, &all), expected);
    }

    #[test]
    fn hand_summed_two_edge_perturbation() {
        let (g, e) = two_edge_graph();
        // two layers, two heads each
        let l0 = record_from(vec![
            (0..e.len()).map(|i| 0.1 * i as f64).collect(),
            (0..e.len()).map(|i| 0.2 * i as f64).collect(),
        ]);
        let l1 = record_from(vec![
            (0..e.len()).map(|i| 0.3 * i as f64).collect(),
            (0..e.len()).map(|i| 0.4 * i as f64).collect(),
        ]);
        let recs = vec![l0, l1];
        let ptb = PerturbationSet::new([(0, 1), (1, 2)], &g).unwrap();
        let mut by_hand = 0.0;
        for scale in [0.1, 0.2, 0.3, 0.4] {
            for e_idx in 0..e.len() {
                if !e.is_self_loop(e_idx) {
                    by_hand += scale * e_idx as f64;
                }
            }
        }
        assert!((perturb_attention_sum(&recs, &e, &g, &ptb) - by_hand).abs() < 1e-12);
    }

    #[test]
    fn dist_loss_hinge_cases() {
        let (g, e) = two_edge_graph();
        let ptb = PerturbationSet::new([(1, 2)], &g).unwrap();
        // directed entries: 0,1 belong to pair (0,1); 2,3 to pair (1,2)
        let make = |normal: f64, perturbed: f64| {
            let mut coeffs = vec![0.0; e.len()];
            coeffs[0] = normal;
            coeffs[1] = normal;
            coeffs[2] = perturbed;
            coeffs[3] = perturbed;
            vec![record_from(vec![coeffs])]
        };
        // gap 2 with eta 100 → −2
        assert_eq!(dist_loss(&make(5.0, 3.0), &e, &g, &ptb, 100.0).unwrap(), -2.0);
        // gap 150 saturates at −100
        assert_eq!(dist_loss(&make(150.0, 0.0), &e, &g, &ptb, 100.0).unwrap(), -100.0);
        // equal means → 0
        assert_eq!(dist_loss(&make(4.0, 4.0), &e, &g, &ptb, 100.0).unwrap(), 0.0);
        // empty perturbation set → 0
        assert_eq!(
            dist_loss(&make(4.0, 1.0), &e, &g, &PerturbationSet::empty(), 100.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn dist_loss_requires_normal_edges() {
        let (g, e) = two_edge_graph();
        let all = PerturbationSet::new(g.edges().iter().copied(), &g).unwrap();
        let rec = vec![record_from(vec![vec![1.0; e.len()]])];
        assert!(dist_loss(&rec, &e, &g, &all, 10.0).is_err());
    }

    fn forward_fixture(
        lambda: f64,
    ) -> (Tape, ForwardOutput, Graph, PerturbationSet, LossConfig) {
        let g = sbm_generate(14, 2, 0.4, 0.1, 4, 0.6, 21).unwrap();
        let ptb = PerturbationSet::new([g.edges()[0], g.edges()[1]], &g).unwrap();
        let cfg = ModelConfig {
            n_layers: 2,
            hidden_total: 4,
            n_heads: 2,
            activation: Activation::Elu,
            leaky_slope: 0.2,
        };
        let params = init_params(&cfg, 4, 2, 3).unwrap();
        let mut tape = Tape::new();
        let ids = ParamNodeIds::leaves(&mut tape, &params);
        let edges = Rc::new(MessageEdges::build(&g));
        let out = model_forward(&mut tape, &ids, &cfg, &g, edges).unwrap();
        (
            tape,
            out,
            g,
            ptb,
            LossConfig {
                lambda,
                eta: 100.0,
            },
        )
    }

    #[test]
    fn breakdown_identity_holds() {
        let (mut tape, out, g, ptb, cfg) = forward_fixture(1.7);
        let set: Vec<usize> = (0..g.n_nodes()).collect();
        let (node, breakdown) = total_loss(&mut tape, &out, &g, &set, &ptb, &cfg).unwrap();
        assert!(
            (breakdown.total - (breakdown.classification + cfg.lambda * breakdown.distance)).abs()
                < 1e-12
        );
        assert!((tape.value(node).item().unwrap() - breakdown.total).abs() < 1e-9);
    }

    #[test]
    fn lambda_zero_reduces_to_cross_entropy() {
        let (mut tape, out, g, ptb, cfg) = forward_fixture(0.0);
        let set: Vec<usize> = (0..g.n_nodes()).collect();
        let (node, breakdown) = total_loss(&mut tape, &out, &g, &set, &ptb, &cfg).unwrap();
        let ce = cross_entropy_node(&mut tape, out.logits, &g, &set).unwrap();
        assert_eq!(
            tape.value(node).item().unwrap().to_bits(),
            tape.value(ce).item().unwrap().to_bits()
        );
        assert_eq!(breakdown.total, breakdown.classification);
    }

    // Unsaturated hinge: raising a perturbed coefficient raises the loss,
    // raising a normal coefficient lowers it.
    #[test]
    fn dist_gradient_signs() {
        let (g, e) = two_edge_graph();
        let ptb = PerturbationSet::new([(1, 2)], &g).unwrap();
        let (normal_idx, ptb_idx) = e.coefficient_pools(&g, &ptb);
        let mut tape = Tape::new();
        let scores = tape.leaf(Tensor::column(vec![2.0, 2.1, 0.4, 0.5, 0.0, 0.0, 0.0]).unwrap());
        let dist = dist_loss_node(
            &mut tape,
            &[vec![scores]],
            Rc::new(normal_idx.clone()),
            Rc::new(ptb_idx.clone()),
            100.0,
        )
        .unwrap();
        let grads = tape.backward(dist).unwrap();
        let grad = grads.get(scores).unwrap();
        for &i in &ptb_idx {
            assert!(grad.values()[i] > 0.0);
        }
        for &i in &normal_idx {
            assert!(grad.values()[i] < 0.0);
        }
    }

    #[test]
    fn total_loss_gradient_passes_finite_differences() {
        let g = sbm_generate(6, 2, 0.6, 0.2, 3, 0.5, 5).unwrap();
        let ptb = PerturbationSet::new([g.edges()[0]], &g).unwrap();
        let cfg = ModelConfig {
            n_layers: 2,
            hidden_total: 4,
            n_heads: 2,
            activation: Activation::Elu,
            leaky_slope: 0.2,
        };
        let params = init_params(&cfg, 3, 2, 8).unwrap();
        let flat = params.flatten();
        let set: Vec<usize> = g.labeled_nodes();
        let loss_cfg = LossConfig {
            lambda: 1.0,
            eta: 100.0,
        };
        let err = finite_diff_check(
            |tape, ids| {
                let ids_struct = ParamNodeIds::from_flat(&params, ids)?;
                let edges = Rc::new(MessageEdges::build(&g));
                let out = model_forward(tape, &ids_struct, &cfg, &g, edges)?;
                let (node, _) = total_loss(tape, &out, &g, &set, &ptb, &loss_cfg)?;
                Ok(node)
            },
            &flat,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {}", err);
    }
}
