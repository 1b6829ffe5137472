//! Graph representation, dataset-construction protocols, and file I/O.
//!
//! Graphs are undirected, stored once per edge as `(min, max)` pairs in
//! sorted order. Labels are per-node class ids with `None` marking unlabeled
//! nodes.

mod io;
mod sbm;

pub use io::{load_graph, save_graph};
pub use sbm::sbm_generate;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    n_classes: usize,
    features: Tensor,
    edges: Vec<(usize, usize)>,
    labels: Vec<Option<usize>>,
}

impl Graph {
    /// Build a graph, normalizing edges to sorted unique `(min, max)` pairs.
    /// Self-pairs and out-of-range endpoints or labels are rejected.
    pub fn new(
        n_nodes: usize,
        n_classes: usize,
        features: Tensor,
        edges: Vec<(usize, usize)>,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != n_nodes {
            return Err(Error::Dimension(format!(
                "features shape {:?} does not match {} nodes",
                features.shape(),
                n_nodes
            )));
        }
        if labels.len() != n_nodes {
            return Err(Error::Dimension(format!(
                "{} labels for {} nodes",
                labels.len(),
                n_nodes
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                if *c >= n_classes {
                    return Err(Error::Contract(format!(
                        "node {} has label {} but only {} classes exist",
                        i, c, n_classes
                    )));
                }
            }
        }
        let mut set = BTreeSet::new();
        for &(u, v) in &edges {
            if u == v {
                return Err(Error::Contract(format!("self-pair ({}, {})", u, v)));
            }
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Contract(format!(
                    "edge ({}, {}) out of range for {} nodes",
                    u, v, n_nodes
                )));
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(Graph {
            n_nodes,
            n_classes,
            features,
            edges: set.into_iter().collect(),
            labels,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Sorted `(min, max)` pairs, one per undirected edge.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels[node]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search(&key).is_ok()
    }

    /// Sorted ids of labeled nodes.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// Same graph with a different edge set (features and labels untouched).
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Graph> {
        Graph::new(
            self.n_nodes,
            self.n_classes,
            self.features.clone(),
            edges,
            self.labels.clone(),
        )
    }
}

/// Edges known to be adversarial insertions; a subset of the graph they
/// poison.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerturbationSet {
    edges: BTreeSet<(usize, usize)>,
}

impl PerturbationSet {
    pub fn empty() -> Self {
        PerturbationSet::default()
    }

    /// Normalizes pairs to `(min, max)` and verifies they exist in `graph`.
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>, graph: &Graph) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for (u, v) in pairs {
            let key = (u.min(v), u.max(v));
            if !graph.has_edge(key.0, key.1) {
                return Err(Error::Contract(format!(
                    "perturbed edge ({}, {}) is not present in the graph",
                    key.0, key.1
                )));
            }
            edges.insert(key);
        }
        Ok(PerturbationSet { edges })
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.edges.iter()
    }
}

/// Train/validation/test node ids, all labeled, pairwise disjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Support/query halves of a task's labeled pool.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportQuerySplit {
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

/// Partition nodes uniformly at random into `k` parts of near-equal size and
/// keep only internal edges; node ids are relabeled contiguously (sorted
/// original order within each part).
pub fn split_into_subgraphs(graph: &Graph, k: usize, seed: u64) -> Result<Vec<Graph>> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k >= 2 && graph.n_nodes() < k * 10 {
        return Err(Error::Parameter(format!(
            "{} nodes is too few for {} subgraphs",
            graph.n_nodes(),
            k
        )));
    }
    let mut order: Vec<usize> = (0..graph.n_nodes()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // Part sizes differ by at most one; earlier parts take the remainder.
    let base = graph.n_nodes() / k;
    let extra = graph.n_nodes() % k;
    let mut parts: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut cursor = 0;
    for p in 0..k {
        let size = base + usize::from(p < extra);
        let mut part: Vec<usize> = order[cursor..cursor + size].to_vec();
        part.sort_unstable();
        parts.push(part);
        cursor += size;
    }

    let mut out = Vec::with_capacity(k);
    for part in &parts {
        let mut local = vec![usize::MAX; graph.n_nodes()];
        for (new, &old) in part.iter().enumerate() {
            local[old] = new;
        }
        let rows: Vec<Vec<f64>> = part.iter().map(|&i| graph.features().row(i).to_vec()).collect();
        let labels: Vec<Option<usize>> = part.iter().map(|&i| graph.label(i)).collect();
        let edges: Vec<(usize, usize)> = graph
            .edges()
            .iter()
            .filter(|(u, v)| local[*u] != usize::MAX && local[*v] != usize::MAX)
            .map(|&(u, v)| (local[u], local[v]))
            .collect();
        out.push(Graph::new(
            part.len(),
            graph.n_classes(),
            Tensor::from_rows(&rows)?,
            edges,
            labels,
        )?);
    }
    Ok(out)
}

/// Random disjoint train/validation/test sets over the labeled nodes with
/// floor-rounded proportions; the remainder goes to test.
pub fn make_label_splits(
    graph: &Graph,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<NodeSplit> {
    if !(0.0..=1.0).contains(&train_frac)
        || !(0.0..=1.0).contains(&val_frac)
        || train_frac + val_frac >= 1.0
    {
        return Err(Error::Parameter(format!(
            "fractions train={} val={} must be non-negative and sum below 1",
            train_frac, val_frac
        )));
    }
    let mut pool = graph.labeled_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let n = pool.len();
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = (val_frac * n as f64).floor() as usize;
    let mut train = pool[..n_train].to_vec();
    let mut validation = pool[n_train..n_train + n_val].to_vec();
    let mut test = pool[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplit {
        train,
        validation,
        test,
    })
}

/// Fresh 50/50 split of a labeled pool; sizes differ by at most one (support
/// takes the larger half).
pub fn support_query_split(pool: &[usize], seed: u64) -> Result<SupportQuerySplit> {
    if pool.len() < 2 {
        return Err(Error::Contract(format!(
            "support/query split needs at least 2 nodes, got {}",
            pool.len()
        )));
    }
    let mut shuffled = pool.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let half = (shuffled.len() + 1) / 2;
    let mut support = shuffled[..half].to_vec();
    let mut query = shuffled[half..].to_vec();
    support.sort_unstable();
    query.sort_unstable();
    Ok(SupportQuerySplit { support, query })
}

/// Uniform sample (without replacement) of `frac` of all nodes, used to build
/// the labeled pool of a clean-graph task.
pub fn sample_labeled_pool(graph: &Graph, frac: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::Parameter(format!("fraction {} out of [0,1]", frac)));
    }
    let mut pool = graph.labeled_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let n = (frac * pool.len() as f64).floor() as usize;
    let mut out = pool[..n].to_vec();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_graph(n: usize) -> Graph {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, 1.0]).collect();
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let labels = (0..n).map(|i| Some(i % 2)).collect();
        Graph::new(n, 2, Tensor::from_rows(&rows).unwrap(), edges, labels).unwrap()
    }

    #[test]
    fn rejects_self_pairs_and_bad_labels() {
        let f = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(Graph::new(2, 2, f.clone(), vec![(0, 0)], vec![None, None]).is_err());
        assert!(Graph::new(2, 2, f, vec![], vec![Some(5), None]).is_err());
    }

    #[test]
    fn deduplicates_reversed_edges() {
        let f = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let g = Graph::new(3, 1, f, vec![(1, 0), (0, 1), (2, 1)], vec![None, None, None]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn subgraph_split_partitions_nodes() {
        let g = toy_graph(103);
        let parts = split_into_subgraphs(&g, 5, 7).unwrap();
        let total: usize = parts.iter().map(|p| p.n_nodes()).sum();
        assert_eq!(total, 103);
        let sizes: Vec<usize> = parts.iter().map(|p| p.n_nodes()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let edge_total: usize = parts.iter().map(|p| p.n_edges()).sum();
        assert!(edge_total <= g.n_edges());
    }

    #[test]
    fn subgraph_split_k1_is_identity() {
        let g = toy_graph(20);
        let parts = split_into_subgraphs(&g, 1, 3).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], g);
    }

    #[test]
    fn subgraph_split_exact_division() {
        let g = toy_graph(1000);
        let parts = split_into_subgraphs(&g, 5, 11).unwrap();
        assert!(parts.iter().all(|p| p.n_nodes() == 200));
    }

    #[test]
    fn subgraph_split_too_few_nodes() {
        let g = toy_graph(15);
        assert!(split_into_subgraphs(&g, 2, 0).is_err());
    }

    #[test]
    fn label_split_proportions() {
        let g = toy_graph(100);
        let s = make_label_splits(&g, 0.1, 0.2, 42).unwrap();
        assert_eq!(s.train.len(), 10);
        assert_eq!(s.validation.len(), 20);
        assert_eq!(s.test.len(), 70);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn label_split_rejects_bad_fractions() {
        let g = toy_graph(30);
        assert!(make_label_splits(&g, 0.6, 0.5, 0).is_err());
    }

    #[test]
    fn support_query_sizes_differ_by_at_most_one() {
        let pool: Vec<usize> = (0..11).collect();
        let s = support_query_split(&pool, 5).unwrap();
        assert_eq!(s.support.len() + s.query.len(), 11);
        assert!(s.support.len().abs_diff(s.query.len()) <= 1);
    }

    #[test]
    fn support_query_reshuffles_across_seeds() {
        let pool: Vec<usize> = (0..10).collect();
        let mut distinct = 0;
        for seed in 0..100u64 {
            let a = support_query_split(&pool, seed).unwrap();
            let b = support_query_split(&pool, seed + 1).unwrap();
            if a != b {
                distinct += 1;
            }
        }
        assert!(distinct >= 99, "only {} of 100 adjacent seeds differed", distinct);
    }

    #[test]
    fn support_query_rejects_tiny_pool() {
        assert!(support_query_split(&[3], 0).is_err());
    }

    #[test]
    fn perturbation_set_must_be_subset() {
        let g = toy_graph(4);
        assert!(PerturbationSet::new([(0, 3)], &g).is_err());
        let p = PerturbationSet::new([(1, 0)], &g).unwrap();
        assert!(p.contains(0, 1));
    }
}
