//! Graph file format: a JSON document with `n_nodes`, `n_classes`,
//! `features` (N rows of d reals), `edges` ([u, v] pairs), `labels`
//! (−1 = unlabeled), and optional `perturbed_edges`.
//!
//! Serialization is canonical — edges sorted, fields in fixed order, shortest
//! round-trip float formatting — so save ∘ load ∘ save is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, PerturbationSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n_nodes: usize,
    n_classes: usize,
    features: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    labels: Vec<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbed_edges: Option<Vec<[usize; 2]>>,
}

/// Load a graph and its (possibly empty) perturbation set.
pub fn load_graph(path: &Path) -> Result<(Graph, PerturbationSet)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("{}: {}", path.display(), e)))?;
    let file: GraphFile = serde_json::from_str(&text).map_err(|e| {
        Error::Load(format!(
            "{}: line {} column {}: {}",
            path.display(),
            e.line(),
            e.column(),
            e
        ))
    })?;

    let ctx = |msg: String| Error::Load(format!("{}: {}", path.display(), msg));

    if file.features.len() != file.n_nodes {
        return Err(ctx(format!(
            "expected {} feature rows, found {}",
            file.n_nodes,
            file.features.len()
        )));
    }
    if file.labels.len() != file.n_nodes {
        return Err(ctx(format!(
            "expected {} labels, found {}",
            file.n_nodes,
            file.labels.len()
        )));
    }
    let labels: Vec<Option<usize>> = file
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l == -1 {
                Ok(None)
            } else if l < 0 {
                Err(ctx(format!("label entry {}: invalid value {}", i, l)))
            } else {
                Ok(Some(l as usize))
            }
        })
        .collect::<Result<_>>()?;

    for (i, e) in file.edges.iter().enumerate() {
        if e[0] == e[1] {
            return Err(ctx(format!("edge entry {}: self-loop ({}, {})", i, e[0], e[1])));
        }
    }

    let features = Tensor::from_rows(&file.features)
        .map_err(|e| ctx(format!("features: {}", e)))?;
    let graph = Graph::new(
        file.n_nodes,
        file.n_classes,
        features,
        file.edges.iter().map(|e| (e[0], e[1])).collect(),
        labels,
    )
    .map_err(|e| ctx(e.to_string()))?;

    let perturbed = match file.perturbed_edges {
        Some(pairs) => PerturbationSet::new(pairs.iter().map(|e| (e[0], e[1])), &graph)
            .map_err(|e| ctx(e.to_string()))?,
        None => PerturbationSet::empty(),
    };
    Ok((graph, perturbed))
}

/// Write a graph (and its perturbation set, when non-empty) in canonical form.
pub fn save_graph(graph: &Graph, perturbed: &PerturbationSet, path: &Path) -> Result<()> {
    let file = GraphFile {
        n_nodes: graph.n_nodes(),
        n_classes: graph.n_classes(),
        features: (0..graph.n_nodes())
            .map(|i| graph.features().row(i).to_vec())
            .collect(),
        edges: graph.edges().iter().map(|&(u, v)| [u, v]).collect(),
        labels: graph
            .labels()
            .iter()
            .map(|l| l.map_or(-1, |c| c as i64))
            .collect(),
        perturbed_edges: if perturbed.is_empty() {
            None
        } else {
            Some(perturbed.iter().map(|&(u, v)| [u, v]).collect())
        },
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Load(format!("serialize: {}", e)))?;
    fs::write(path, text)?;
    Ok(())
}
