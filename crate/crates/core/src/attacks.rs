//! Poisoning-attack generators.
//!
//! Three generators share one output contract so externally produced
//! perturbations can be swapped in through the graph file format:
//! - `random_attack` flips the connectivity of uniformly sampled node pairs;
//! - `greedy_gradient_attack` inserts the edges a linear-aggregation
//!   surrogate's training-loss gradient scores highest;
//! - `targeted_attack` wires chosen victims to dissimilar nodes of other
//!   classes.
//!
//! All attacks touch edges only — features and labels pass through unchanged.
//! Perturbation sets record insertions (a deleted edge has no attention
//! coefficient to penalize); random-attack deletions are reported separately.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::eval::feature_cosine;
use crate::graph::{Graph, PerturbationSet};
use crate::losses::cross_entropy_node;
use crate::tensor::Tensor;

/// Attack size: a fraction of the existing edge count, or an absolute number
/// of pairs.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum AttackBudget {
    Rate(f64),
    Count(usize),
}

impl AttackBudget {
    pub fn rate(r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Parameter(format!("rate {} out of [0,1]", r)));
        }
        Ok(AttackBudget::Rate(r))
    }

    pub fn count(k: usize) -> Self {
        AttackBudget::Count(k)
    }

    /// Number of pairs this budget allows against `n_edges` existing edges.
    pub fn resolve(&self, n_edges: usize) -> usize {
        match *self {
            AttackBudget::Rate(r) => (r * n_edges as f64).round() as usize,
            AttackBudget::Count(k) => k,
        }
    }
}

/// One attack decision: the inserted edge and the score that selected it.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackDecision {
    pub edge: (usize, usize),
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub poisoned: Graph,
    pub perturbations: PerturbationSet,
    /// Ordered insertion decisions; one entry per perturbed edge.
    pub log: Vec<AttackDecision>,
    /// Edges a random attack deleted (empty for insertion-only attacks).
    pub removals: Vec<(usize, usize)>,
}

impl AttackResult {
    fn identity(graph: &Graph) -> Self {
        AttackResult {
            poisoned: graph.clone(),
            perturbations: PerturbationSet::empty(),
            log: Vec::new(),
            removals: Vec::new(),
        }
    }

    /// Sidecar CSV of insertion decisions: `step,u,v,score`.
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,u,v,score\n");
        for (step, d) in self.log.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", step, d.edge.0, d.edge.1, d.score));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in u + 1..n {
            pairs.push((u, v));
        }
    }
    pairs
}

/// Flip the connectivity of uniformly sampled node pairs (without
/// replacement): existing edges are removed, absent ones inserted. Only the
/// insertions form the perturbation set.
pub fn random_attack(graph: &Graph, budget: AttackBudget, seed: u64) -> Result<AttackResult> {
    let n_flips = budget.resolve(graph.n_edges());
    if n_flips == 0 {
        return Ok(AttackResult::identity(graph));
    }
    let pairs = all_pairs(graph.n_nodes());
    if n_flips > pairs.len() {
        return Err(Error::Infeasible(format!(
            "{} flips requested but only {} node pairs exist",
            n_flips,
            pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<(usize, usize)> = sample(&mut rng, pairs.len(), n_flips)
        .into_iter()
        .map(|i| pairs[i])
        .collect();
    chosen.sort_unstable();

    let mut edges: Vec<(usize, usize)> = graph.edges().to_vec();
    let mut log = Vec::new();
    let mut removals = Vec::new();
    for pair in chosen {
        if let Ok(pos) = edges.binary_search(&pair) {
            edges.remove(pos);
            removals.push(pair);
        } else {
            let pos = edges.binary_search(&pair).unwrap_err();
            edges.insert(pos, pair);
            log.push(AttackDecision {
                edge: pair,
                score: 0.0,
            });
        }
    }
    let poisoned = graph.with_edges(edges)?;
    let perturbations = PerturbationSet::new(log.iter().map(|d| d.edge), &poisoned)?;
    Ok(AttackResult {
        poisoned,
        perturbations,
        log,
        removals,
    })
}

// ── gradient-guided attack ───────────────────────────────────────────

/// Fixed-coefficient two-hop propagation matrix `c·(A + I)` with
/// `c = 1/(mean degree + 1)`, linear in the adjacency.
struct LinearSurrogate {
    scale: f64,
    weight: Tensor,
}

fn propagation_matrix(edges: &[(usize, usize)], n: usize, scale: f64) -> Tensor {
    let mut vals = vec![0.0; n * n];
    for i in 0..n {
        vals[i * n + i] = scale;
    }
    for &(u, v) in edges {
        vals[u * n + v] = scale;
        vals[v * n + u] = scale;
    }
    Tensor::new(vec![n, n], vals).expect("finite propagation matrix")
}

fn train_surrogate(graph: &Graph, steps: usize, lr: f64, seed: u64) -> Result<LinearSurrogate> {
    let train = graph.labeled_nodes();
    if train.is_empty() {
        return Err(Error::Contract("surrogate training needs labeled nodes".into()));
    }
    let n = graph.n_nodes();
    let scale = 1.0 / (2.0 * graph.n_edges() as f64 / n as f64 + 1.0);
    let prop = propagation_matrix(graph.edges(), n, scale);

    // Two-hop smoothed features, fixed during weight training.
    let mut tmp = Tape::new();
    let p = tmp.constant(prop.clone());
    let x = tmp.constant(graph.features().clone());
    let h1 = tmp.matmul(p, x)?;
    let h2 = tmp.matmul(p, h1)?;
    let smoothed = tmp.value(h2).clone();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = graph.feature_dim();
    let c = graph.n_classes();
    let mut weight = Tensor::new(
        vec![d, c],
        (0..d * c).map(|_| rng.gen_range(-0.01..0.01)).collect(),
    )?;
    for _ in 0..steps {
        let mut tape = Tape::new();
        let w = tape.leaf(weight.clone());
        let feats = tape.constant(smoothed.clone());
        let logits = tape.matmul(feats, w)?;
        let loss = cross_entropy_node(&mut tape, logits, graph, &train)?;
        let grads = tape.backward(loss)?;
        if let Some(g) = grads.get(w) {
            let updated: Vec<f64> = weight
                .values()
                .iter()
                .zip(g.values())
                .map(|(p, gv)| p - lr * gv)
                .collect();
            weight = Tensor::new(weight.shape().to_vec(), updated)?;
        }
    }
    Ok(LinearSurrogate { scale, weight })
}

fn surrogate_adjacency_gradient(
    graph_edges: &[(usize, usize)],
    base: &Graph,
    surrogate: &LinearSurrogate,
    train: &[usize],
) -> Result<Tensor> {
    let n = base.n_nodes();
    let prop = propagation_matrix(graph_edges, n, surrogate.scale);
    let mut tape = Tape::new();
    let p = tape.leaf(prop);
    let x = tape.constant(base.features().clone());
    let w = tape.constant(surrogate.weight.clone());
    let h1 = tape.matmul(p, x)?;
    let h2 = tape.matmul(p, h1)?;
    let logits = tape.matmul(h2, w)?;
    let loss = cross_entropy_node(&mut tape, logits, base, train)?;
    let grads = tape.backward(loss)?;
    grads
        .get(p)
        .cloned()
        .ok_or_else(|| Error::Contract("propagation matrix received no gradient".into()))
}

/// Insert the edges whose presence most increases a frozen linear surrogate's
/// training loss: train the surrogate on the clean graph, then repeatedly add
/// the non-adjacent pair with the largest positive loss gradient, preferring
/// cross-class pairs, until the budget is spent.
pub fn greedy_gradient_attack(
    graph: &Graph,
    budget: AttackBudget,
    surrogate_steps: usize,
    seed: u64,
) -> Result<AttackResult> {
    let n_inserts = budget.resolve(graph.n_edges());
    if n_inserts == 0 {
        return Ok(AttackResult::identity(graph));
    }
    let train = graph.labeled_nodes();
    if train.is_empty() {
        return Err(Error::Contract(
            "gradient attack needs labeled training nodes".into(),
        ));
    }
    let surrogate = train_surrogate(graph, surrogate_steps, 0.5, seed)?;

    let mut edges: Vec<(usize, usize)> = graph.edges().to_vec();
    let mut log = Vec::with_capacity(n_inserts);
    for _ in 0..n_inserts {
        let grad = surrogate_adjacency_gradient(&edges, graph, &surrogate, &train)?;
        let n = graph.n_nodes();
        let mut best: Option<((usize, usize), f64, bool)> = None;
        for u in 0..n {
            for v in u + 1..n {
                if edges.binary_search(&(u, v)).is_ok() {
                    continue;
                }
                let cross = match (graph.label(u), graph.label(v)) {
                    (Some(a), Some(b)) => a != b,
                    _ => false,
                };
                let score = grad.at(u, v) + grad.at(v, u);
                let better = match &best {
                    None => true,
                    Some((_, best_score, best_cross)) => {
                        // cross-class candidates outrank same-class ones
                        (cross, score) > (*best_cross, *best_score)
                    }
                };
                if better {
                    best = Some(((u, v), score, cross));
                }
            }
        }
        let (pair, score, _) = best.ok_or_else(|| {
            Error::Infeasible(format!(
                "candidate pairs exhausted after {} of {} insertions",
                log.len(),
                n_inserts
            ))
        })?;
        let pos = edges.binary_search(&pair).unwrap_err();
        edges.insert(pos, pair);
        log.push(AttackDecision { edge: pair, score });
    }

    let poisoned = graph.with_edges(edges)?;
    let perturbations = PerturbationSet::new(log.iter().map(|d| d.edge), &poisoned)?;
    Ok(AttackResult {
        poisoned,
        perturbations,
        log,
        removals: Vec::new(),
    })
}

/// Uniform sample of labeled nodes.
pub fn pick_targets(graph: &Graph, count: usize, seed: u64) -> Result<Vec<usize>> {
    let labeled = graph.labeled_nodes();
    if count > labeled.len() {
        return Err(Error::Infeasible(format!(
            "{} targets requested but only {} labeled nodes exist",
            count,
            labeled.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, labeled.len(), count)
        .into_iter()
        .map(|i| labeled[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// For each target, insert edges to the `per_target_budget` non-adjacent
/// nodes of a different class with the lowest feature cosine similarity.
pub fn targeted_attack(
    graph: &Graph,
    targets: &[usize],
    per_target_budget: usize,
    _seed: u64,
) -> Result<AttackResult> {
    let mut edges: Vec<(usize, usize)> = graph.edges().to_vec();
    let mut log = Vec::new();
    let mut sorted_targets = targets.to_vec();
    sorted_targets.sort_unstable();
    for &t in &sorted_targets {
        let t_label = graph
            .label(t)
            .ok_or_else(|| Error::Contract(format!("target {} is unlabeled", t)))?;
        let mut candidates: Vec<(usize, f64)> = (0..graph.n_nodes())
            .filter(|&u| u != t)
            .filter(|&u| graph.label(u).map_or(false, |l| l != t_label))
            .filter(|&u| {
                edges
                    .binary_search(&(t.min(u), t.max(u)))
                    .is_err()
            })
            .map(|u| (u, feature_cosine(graph, t, u)))
            .collect();
        if candidates.len() < per_target_budget {
            return Err(Error::Infeasible(format!(
                "target {}: {} eligible counterparts for budget {}",
                t,
                candidates.len(),
                per_target_budget
            )));
        }
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        for &(u, cos) in candidates.iter().take(per_target_budget) {
            let pair = (t.min(u), t.max(u));
            let pos = edges.binary_search(&pair).unwrap_err();
            edges.insert(pos, pair);
            log.push(AttackDecision {
                edge: pair,
                score: -cos,
            });
        }
    }
    let poisoned = graph.with_edges(edges)?;
    let perturbations = PerturbationSet::new(log.iter().map(|d| d.edge), &poisoned)?;
    Ok(AttackResult {
        poisoned,
        perturbations,
        log,
        removals: Vec::new(),
    })
}
