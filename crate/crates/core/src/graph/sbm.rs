//! Planted-partition (stochastic block model) graph generation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Generate a fully labeled planted-partition graph.
///
/// Nodes are assigned to `n_classes` contiguous blocks of near-equal size.
/// Each intra-class pair is connected with probability `p_in`, each
/// inter-class pair with `p_out`. Features are a random unit-norm class mean
/// plus per-coordinate Gaussian noise of standard deviation `feature_noise`;
/// random unit vectors in moderate dimension are nearly orthogonal, giving
/// attacks a feature signal to exploit.
pub fn sbm_generate(
    n_nodes: usize,
    n_classes: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    feature_noise: f64,
    seed: u64,
) -> Result<Graph> {
    if n_classes == 0 || n_nodes < n_classes {
        return Err(Error::Parameter(format!(
            "{} nodes cannot host {} classes",
            n_nodes, n_classes
        )));
    }
    if !(0.0..=1.0).contains(&p_out) || !(0.0..=1.0).contains(&p_in) || p_out >= p_in {
        return Err(Error::Parameter(format!(
            "require 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
            p_in, p_out
        )));
    }
    if feature_dim == 0 || feature_noise < 0.0 {
        return Err(Error::Parameter(format!(
            "feature_dim={} feature_noise={} out of range",
            feature_dim, feature_noise
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;

    // Block sizes differ by at most one; earlier classes take the remainder.
    let base = n_nodes / n_classes;
    let extra = n_nodes % n_classes;
    let mut class_of = Vec::with_capacity(n_nodes);
    for c in 0..n_classes {
        let size = base + usize::from(c < extra);
        class_of.extend(std::iter::repeat(c).take(size));
    }

    let mut means = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let mut m: Vec<f64> = (0..feature_dim).map(|_| normal.sample(&mut rng)).collect();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        m.iter_mut().for_each(|v| *v /= norm);
        means.push(m);
    }

    let mut rows = Vec::with_capacity(n_nodes);
    for &c in &class_of {
        let row: Vec<f64> = means[c]
            .iter()
            .map(|&m| m + feature_noise * normal.sample(&mut rng))
            .collect();
        rows.push(row);
    }

    let mut edges = Vec::new();
    for u in 0..n_nodes {
        for v in u + 1..n_nodes {
            let p = if class_of[u] == class_of[v] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let labels = class_of.iter().map(|&c| Some(c)).collect();
    Graph::new(n_nodes, n_classes, Tensor::from_rows(&rows)?, edges, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_out_zero_forbids_cross_class_edges() {
        let g = sbm_generate(60, 3, 0.3, 0.0, 4, 0.5, 1).unwrap();
        for &(u, v) in g.edges() {
            assert_eq!(g.label(u), g.label(v));
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = sbm_generate(50, 2, 0.2, 0.05, 6, 1.0, 33).unwrap();
        let b = sbm_generate(50, 2, 0.2, 0.05, 6, 1.0, 33).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn intra_class_edge_count_near_binomial_expectation() {
        // 4 classes of 50 nodes: 4·(50·49/2) = 4900 intra pairs at p = 0.1,
        // expectation 490, std ≈ 21. Check within 4σ.
        let g = sbm_generate(200, 4, 0.1, 0.01, 8, 0.5, 7).unwrap();
        let intra = g
            .edges()
            .iter()
            .filter(|&&(u, v)| g.label(u) == g.label(v))
            .count() as f64;
        let n_pairs: f64 = 4.0 * (50.0 * 49.0 / 2.0);
        let expect = n_pairs * 0.1;
        let sigma = (n_pairs * 0.1 * 0.9).sqrt();
        assert!(
            (intra - expect).abs() < 4.0 * sigma,
            "intra edge count {} outside 4σ of {}",
            intra,
            expect
        );
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(sbm_generate(20, 2, 0.1, 0.1, 4, 0.5, 0).is_err());
        assert!(sbm_generate(20, 2, 1.2, 0.1, 4, 0.5, 0).is_err());
    }

    #[test]
    fn all_nodes_labeled() {
        let g = sbm_generate(35, 5, 0.5, 0.1, 3, 0.2, 2).unwrap();
        assert!(g.labels().iter().all(|l| l.is_some()));
    }
}
