//! Multi-head attention GNN.
//!
//! Per layer and head, an edge (i←j) receives the unnormalized coefficient
//! `a_ij = LeakyReLU(aᵀ [W hᵢ ⊕ W hⱼ])`, normalized by softmax over i's
//! in-neighborhood (self-loop included, so isolated nodes keep their own
//! features and normalization never divides by zero). Node updates aggregate
//! `Σⱼ α_ij W hⱼ`; hidden layers concatenate heads and apply the configured
//! activation, the output layer averages heads and emits raw class scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{elu, segment_softmax, NodeId, Tape};
use crate::error::{Error, Result};
use crate::graph::{Graph, PerturbationSet};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
}

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    /// Total feature width of a hidden layer, summed over heads.
    pub hidden_total: usize,
    /// Heads on hidden layers; the output layer always uses a single head.
    pub n_heads: usize,
    pub activation: Activation,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 2,
            hidden_total: 64,
            n_heads: 8,
            activation: Activation::Elu,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Parameter("n_layers must be at least 1".into()));
        }
        if self.n_heads == 0 || self.hidden_total % self.n_heads != 0 {
            return Err(Error::Parameter(format!(
                "hidden_total {} must divide evenly into {} heads",
                self.hidden_total, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) || self.leaky_slope == 0.0 {
            return Err(Error::Parameter(format!(
                "leaky_slope {} must lie in (0,1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Per-layer (input dim, per-head output dim, head count).
    pub fn layer_dims(&self, input_dim: usize, n_classes: usize) -> Vec<(usize, usize, usize)> {
        let mut dims = Vec::with_capacity(self.n_layers);
        let mut in_dim = input_dim;
        for l in 0..self.n_layers {
            if l + 1 == self.n_layers {
                dims.push((in_dim, n_classes, 1));
            } else {
                dims.push((in_dim, self.hidden_total / self.n_heads, self.n_heads));
                in_dim = self.hidden_total;
            }
        }
        dims
    }
}

/// Weight matrix and attention vector of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `[d_in, d_out]`
    pub weight: Tensor,
    /// `[2·d_out, 1]`; first half pairs with the receiving node, second half
    /// with the sender.
    pub attn: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Vec<HeadParams>>,
}

impl ModelParams {
    /// Flat tensor list (layer-major, weight before attention vector).
    pub fn flatten(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for head in layer {
                out.push(head.weight.clone());
                out.push(head.attn.clone());
            }
        }
        out
    }

    /// Rebuild from a flat tensor list with this parameter set's structure.
    pub fn like(&self, tensors: Vec<Tensor>) -> Result<ModelParams> {
        let expected: usize = self.layers.iter().map(|l| l.len() * 2).sum();
        if tensors.len() != expected {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                expected,
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut heads = Vec::with_capacity(layer.len());
            for head in layer {
                let weight = it.next().unwrap();
                let attn = it.next().unwrap();
                if weight.shape() != head.weight.shape() || attn.shape() != head.attn.shape() {
                    return Err(Error::Dimension("parameter shape drift".into()));
                }
                heads.push(HeadParams { weight, attn });
            }
            layers.push(heads);
        }
        Ok(ModelParams { layers })
    }
}

/// Glorot-uniform initialization, deterministic per seed.
pub fn init_params(
    config: &ModelConfig,
    input_dim: usize,
    n_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let glorot = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| -> Result<Tensor> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Tensor::new(vec![rows, cols], values)
    };
    let mut layers = Vec::new();
    for (d_in, d_out, heads) in config.layer_dims(input_dim, n_classes) {
        let mut head_params = Vec::with_capacity(heads);
        for _ in 0..heads {
            let weight = glorot(d_in, d_out, &mut rng)?;
            let attn = glorot(2 * d_out, 1, &mut rng)?;
            head_params.push(HeadParams { weight, attn });
        }
        layers.push(head_params);
    }
    Ok(ModelParams { layers })
}

// ── directed message edges ───────────────────────────────────────────

/// Directed message edges derived from an undirected graph: both directions
/// of every stored pair plus one self-loop per node.
#[derive(Clone, Debug)]
pub struct MessageEdges {
    dst: Rc<Vec<usize>>,
    src: Rc<Vec<usize>>,
    /// Index into the graph's undirected edge list; `None` for self-loops.
    pair_of: Vec<Option<usize>>,
    n_nodes: usize,
}

impl MessageEdges {
    pub fn build(graph: &Graph) -> Self {
        let mut dst = Vec::with_capacity(2 * graph.n_edges() + graph.n_nodes());
        let mut src = Vec::with_capacity(dst.capacity());
        let mut pair_of = Vec::with_capacity(dst.capacity());
        for (i, &(u, v)) in graph.edges().iter().enumerate() {
            dst.push(u);
            src.push(v);
            pair_of.push(Some(i));
            dst.push(v);
            src.push(u);
            pair_of.push(Some(i));
        }
        for n in 0..graph.n_nodes() {
            dst.push(n);
            src.push(n);
            pair_of.push(None);
        }
        MessageEdges {
            dst: Rc::new(dst),
            src: Rc::new(src),
            pair_of,
            n_nodes: graph.n_nodes(),
        }
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dst(&self) -> &Rc<Vec<usize>> {
        &self.dst
    }

    pub fn src(&self) -> &Rc<Vec<usize>> {
        &self.src
    }

    pub fn is_self_loop(&self, e: usize) -> bool {
        self.pair_of[e].is_none()
    }

    /// Directed indices of normal and perturbed edges. Self-loops belong to
    /// neither pool; a perturbed undirected pair contributes both directions.
    pub fn coefficient_pools(
        &self,
        graph: &Graph,
        perturbed: &PerturbationSet,
    ) -> (Vec<usize>, Vec<usize>) {
        let mut normal = Vec::new();
        let mut ptb = Vec::new();
        for (e, pair) in self.pair_of.iter().enumerate() {
            if let Some(p) = pair {
                let (u, v) = graph.edges()[*p];
                if perturbed.contains(u, v) {
                    ptb.push(e);
                } else {
                    normal.push(e);
                }
            }
        }
        (normal, ptb)
    }
}

// ── attention records ────────────────────────────────────────────────

/// Coefficients captured during one layer's forward pass, indexed
/// `[head][directed edge]`.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub layer: usize,
    pub unnormalized: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
}

// ── tape-resident parameters ─────────────────────────────────────────

/// Tape node ids mirroring a [`ModelParams`] structure.
#[derive(Clone, Debug)]
pub struct ParamNodeIds {
    pub layers: Vec<Vec<(NodeId, NodeId)>>,
}

impl ParamNodeIds {
    /// Insert parameters as differentiable leaves.
    pub fn leaves(tape: &mut Tape, params: &ModelParams) -> Self {
        Self::insert(tape, params, true)
    }

    /// Insert parameters as constants (inference only).
    pub fn constants(tape: &mut Tape, params: &ModelParams) -> Self {
        Self::insert(tape, params, false)
    }

    fn insert(tape: &mut Tape, params: &ModelParams, differentiable: bool) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|head| {
                        let w = if differentiable {
                            tape.leaf(head.weight.clone())
                        } else {
                            tape.constant(head.weight.clone())
                        };
                        let a = if differentiable {
                            tape.leaf(head.attn.clone())
                        } else {
                            tape.constant(head.attn.clone())
                        };
                        (w, a)
                    })
                    .collect()
            })
            .collect();
        ParamNodeIds { layers }
    }

    pub fn flat(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for &(w, a) in layer {
                out.push(w);
                out.push(a);
            }
        }
        out
    }

    /// Group a flat id list into the structure of `params` (inverse of
    /// `flat` given matching order).
    pub fn from_flat(params: &ModelParams, ids: &[NodeId]) -> Result<Self> {
        let expected: usize = params.layers.iter().map(|l| l.len() * 2).sum();
        if ids.len() != expected {
            return Err(Error::Contract(format!(
                "expected {} parameter ids, got {}",
                expected,
                ids.len()
            )));
        }
        let mut it = ids.iter().copied();
        let layers = params
            .layers
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|_| (it.next().unwrap(), it.next().unwrap()))
                    .collect()
            })
            .collect();
        Ok(ParamNodeIds { layers })
    }
}

// ── forward pass ─────────────────────────────────────────────────────

pub struct ForwardOutput {
    /// `[N, C]` class scores; softmax lives in the loss.
    pub logits: NodeId,
    /// Raw coefficient nodes `[E, 1]`, indexed `[layer][head]`.
    pub scores: Vec<Vec<NodeId>>,
    pub records: Vec<AttentionRecord>,
    pub edges: Rc<MessageEdges>,
}

/// Unnormalized attention coefficients of one head on the current features.
pub fn attention_coefficients(
    tape: &mut Tape,
    weight: NodeId,
    attn: NodeId,
    h: NodeId,
    edges: &MessageEdges,
    leaky_slope: f64,
) -> Result<NodeId> {
    let d_out = tape.shape(weight)[1];
    if tape.shape(attn) != [2 * d_out, 1] {
        return Err(Error::Dimension(format!(
            "attention vector shape {:?} does not match 2·{}",
            tape.shape(attn),
            d_out
        )));
    }
    let hw = tape.matmul(h, weight)?;
    let a_recv = tape.narrow(attn, 0, 0, d_out)?;
    let a_send = tape.narrow(attn, 0, d_out, d_out)?;
    let recv_score = tape.matmul(hw, a_recv)?;
    let send_score = tape.matmul(hw, a_send)?;
    let at_dst = tape.gather_rows(recv_score, edges.dst().clone())?;
    let at_src = tape.gather_rows(send_score, edges.src().clone())?;
    let pre = tape.add(at_dst, at_src)?;
    tape.leaky_relu(pre, leaky_slope)
}

/// Softmax of raw coefficients over each receiving node's in-neighborhood.
pub fn normalize_attention(
    tape: &mut Tape,
    scores: NodeId,
    edges: &MessageEdges,
) -> Result<NodeId> {
    segment_softmax(tape, scores, edges.dst().clone(), edges.n_nodes())
}

enum HeadCombine {
    Concat,
    Average,
}

struct LayerOutput {
    h_next: NodeId,
    scores: Vec<NodeId>,
    record: AttentionRecord,
}

fn layer_forward_inner(
    tape: &mut Tape,
    heads: &[(NodeId, NodeId)],
    h: NodeId,
    edges: &MessageEdges,
    layer_index: usize,
    leaky_slope: f64,
    activation: Option<Activation>,
    combine: HeadCombine,
) -> Result<LayerOutput> {
    let n = edges.n_nodes();
    let mut per_head_agg = Vec::with_capacity(heads.len());
    let mut scores = Vec::with_capacity(heads.len());
    let mut unnormalized = Vec::with_capacity(heads.len());
    let mut normalized = Vec::with_capacity(heads.len());

    for &(w, a) in heads {
        let hw = tape.matmul(h, w)?;
        let d_out = tape.shape(w)[1];
        let a_recv = tape.narrow(a, 0, 0, d_out)?;
        let a_send = tape.narrow(a, 0, d_out, d_out)?;
        let recv_score = tape.matmul(hw, a_recv)?;
        let send_score = tape.matmul(hw, a_send)?;
        let at_dst = tape.gather_rows(recv_score, edges.dst().clone())?;
        let at_src = tape.gather_rows(send_score, edges.src().clone())?;
        let pre = tape.add(at_dst, at_src)?;
        let raw = tape.leaky_relu(pre, leaky_slope)?;
        let alpha = segment_softmax(tape, raw, edges.dst().clone(), n)?;

        let msg = tape.gather_rows(hw, edges.src().clone())?;
        let ones = tape.constant(Tensor::filled(vec![1, d_out], 1.0)?);
        let alpha_wide = tape.matmul(alpha, ones)?;
        let weighted = tape.mul(msg, alpha_wide)?;
        let agg = tape.scatter_add_rows(weighted, edges.dst().clone(), n)?;

        unnormalized.push(tape.value(raw).values().to_vec());
        normalized.push(tape.value(alpha).values().to_vec());
        per_head_agg.push(agg);
        scores.push(raw);
    }

    let combined = match combine {
        HeadCombine::Concat => {
            let d_out = tape.shape(per_head_agg[0])[1];
            let total = d_out * per_head_agg.len();
            let mut acc: Option<NodeId> = None;
            for (k, &agg) in per_head_agg.iter().enumerate() {
                let padded = tape.pad(agg, 1, k * d_out, total)?;
                acc = Some(match acc {
                    Some(prev) => tape.add(prev, padded)?,
                    None => padded,
                });
            }
            acc.unwrap()
        }
        HeadCombine::Average => {
            let mut acc = per_head_agg[0];
            for &agg in &per_head_agg[1..] {
                acc = tape.add(acc, agg)?;
            }
            tape.scale(acc, 1.0 / per_head_agg.len() as f64)?
        }
    };

    let h_next = match activation {
        Some(Activation::Elu) => elu(tape, combined)?,
        Some(Activation::Relu) => tape.relu(combined)?,
        None => combined,
    };

    Ok(LayerOutput {
        h_next,
        scores,
        record: AttentionRecord {
            layer: layer_index,
            unnormalized,
            normalized,
        },
    })
}

/// One layer: attention, normalization, aggregation, head combination.
pub fn layer_forward(
    tape: &mut Tape,
    heads: &[(NodeId, NodeId)],
    h: NodeId,
    edges: &MessageEdges,
    config: &ModelConfig,
    layer_index: usize,
    is_output: bool,
) -> Result<(NodeId, Vec<NodeId>, AttentionRecord)> {
    let out = layer_forward_inner(
        tape,
        heads,
        h,
        edges,
        layer_index,
        config.leaky_slope,
        if is_output { None } else { Some(config.activation) },
        if is_output { HeadCombine::Average } else { HeadCombine::Concat },
    )?;
    Ok((out.h_next, out.scores, out.record))
}

/// Full forward pass from graph features to class scores, collecting
/// attention records for every layer.
pub fn model_forward(
    tape: &mut Tape,
    params: &ParamNodeIds,
    config: &ModelConfig,
    graph: &Graph,
    edges: Rc<MessageEdges>,
) -> Result<ForwardOutput> {
    let n_layers = params.layers.len();
    if n_layers == 0 {
        return Err(Error::Contract("model has no layers".into()));
    }
    let mut h = tape.constant(graph.features().clone());
    let mut scores = Vec::with_capacity(n_layers);
    let mut records = Vec::with_capacity(n_layers);
    for (l, heads) in params.layers.iter().enumerate() {
        let is_output = l + 1 == n_layers;
        let (h_next, layer_scores, record) =
            layer_forward(tape, heads, h, &edges, config, l, is_output)?;
        h = h_next;
        scores.push(layer_scores);
        records.push(record);
    }
    Ok(ForwardOutput {
        logits: h,
        scores,
        records,
        edges,
    })
}

// ── checkpoints ──────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Save parameters as a map from `layer{l}/head{k}/{weight|attn}` to flat
/// arrays with shape metadata. Round-trips exactly.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut map = BTreeMap::new();
    for (l, layer) in params.layers.iter().enumerate() {
        for (k, head) in layer.iter().enumerate() {
            map.insert(
                format!("layer{}/head{}/weight", l, k),
                TensorEntry {
                    shape: head.weight.shape().to_vec(),
                    values: head.weight.values().to_vec(),
                },
            );
            map.insert(
                format!("layer{}/head{}/attn", l, k),
                TensorEntry {
                    shape: head.attn.shape().to_vec(),
                    values: head.attn.values().to_vec(),
                },
            );
        }
    }
    let text = serde_json::to_string_pretty(&map)
        .map_err(|e| Error::Load(format!("serialize checkpoint: {}", e)))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("{}: {}", path.display(), e)))?;
    let map: BTreeMap<String, TensorEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Load(format!("{}: {}", path.display(), e)))?;

    let mut layers: Vec<Vec<Option<HeadParams>>> = Vec::new();
    let mut pending: BTreeMap<(usize, usize), (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
    for (name, entry) in map {
        let parts: Vec<&str> = name.split('/').collect();
        let parse = || -> Option<(usize, usize, bool)> {
            if parts.len() != 3 {
                return None;
            }
            let l = parts[0].strip_prefix("layer")?.parse().ok()?;
            let k = parts[1].strip_prefix("head")?.parse().ok()?;
            let is_weight = match parts[2] {
                "weight" => true,
                "attn" => false,
                _ => return None,
            };
            Some((l, k, is_weight))
        };
        let (l, k, is_weight) = parse()
            .ok_or_else(|| Error::Load(format!("{}: bad checkpoint key {}", path.display(), name)))?;
        let tensor = Tensor::new(entry.shape, entry.values)
            .map_err(|e| Error::Load(format!("{}: {}: {}", path.display(), name, e)))?;
        let slot = pending.entry((l, k)).or_insert((None, None));
        if is_weight {
            slot.0 = Some(tensor);
        } else {
            slot.1 = Some(tensor);
        }
    }
    for ((l, k), (w, a)) in pending {
        let (w, a) = match (w, a) {
            (Some(w), Some(a)) => (w, a),
            _ => {
                return Err(Error::Load(format!(
                    "{}: layer{}/head{} is missing a tensor",
                    path.display(),
                    l,
                    k
                )))
            }
        };
        if layers.len() <= l {
            layers.resize_with(l + 1, Vec::new);
        }
        if layers[l].len() <= k {
            layers[l].resize_with(k + 1, || None);
        }
        layers[l][k] = Some(HeadParams { weight: w, attn: a });
    }
    let layers: Vec<Vec<HeadParams>> = layers
        .into_iter()
        .enumerate()
        .map(|(l, heads)| {
            heads
                .into_iter()
                .enumerate()
                .map(|(k, h)| {
                    h.ok_or_else(|| {
                        Error::Load(format!("{}: layer{}/head{} absent", path.display(), l, k))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if layers.is_empty() {
        return Err(Error::Load(format!("{}: empty checkpoint", path.display())));
    }
    Ok(ModelParams { layers })
}

#[cfg(test)]
mod tests;
