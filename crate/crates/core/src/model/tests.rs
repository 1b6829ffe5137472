use super::*;
use crate::graph::sbm_generate;

fn small_config(heads: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        hidden_total: hidden,
        n_heads: heads,
        activation: Activation::Elu,
        leaky_slope: 0.2,
    }
}

fn path_graph_3() -> Graph {
    // 0 — 1 — 2 with 2-dim features
    Graph::new(
        3,
        2,
        Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap(),
        vec![(0, 1), (1, 2)],
        vec![Some(0), Some(1), Some(0)],
    )
    .unwrap()
}

#[test]
fn config_validation() {
    assert!(small_config(8, 64).validate().is_ok());
    assert!(small_config(3, 64).validate().is_err());
    assert!(small_config(0, 64).validate().is_err());
    let mut c = small_config(2, 4);
    c.n_layers = 0;
    assert!(c.validate().is_err());
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = small_config(2, 4);
    let a = init_params(&cfg, 3, 2, 7).unwrap();
    let b = init_params(&cfg, 3, 2, 7).unwrap();
    let c = init_params(&cfg, 3, 2, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn zero_attention_vector_gives_zero_coefficients() {
    let g = path_graph_3();
    let edges = MessageEdges::build(&g);
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let a = tape.leaf(Tensor::zeros(vec![4, 1]));
    let h = tape.constant(g.features().clone());
    let raw = attention_coefficients(&mut tape, w, a, h, &edges, 0.2).unwrap();
    assert!(tape.value(raw).values().iter().all(|&v| v == 0.0));
}

#[test]
fn identical_features_give_identical_coefficients() {
    let g = Graph::new(
        3,
        2,
        Tensor::from_rows(&[vec![0.3, 0.7], vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap(),
        vec![(0, 1), (1, 2)],
        vec![None, None, None],
    )
    .unwrap();
    let edges = MessageEdges::build(&g);
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::from_rows(&[vec![0.9, -0.2], vec![0.4, 1.1]]).unwrap());
    let a = tape.leaf(Tensor::column(vec![0.5, -0.3, 0.8, 0.1]).unwrap());
    let h = tape.constant(g.features().clone());
    let raw = attention_coefficients(&mut tape, w, a, h, &edges, 0.2).unwrap();
    let v = tape.value(raw).values();
    for &x in v.iter().skip(1) {
        assert!((x - v[0]).abs() < 1e-14);
    }
}

// Hand evaluation of the coefficient formula on a 3-node path, checked
// against the tape implementation.
#[test]
fn coefficients_match_hand_computation() {
    let g = path_graph_3();
    let edges = MessageEdges::build(&g);
    let w_rows = [vec![0.5, -0.1], vec![0.2, 0.3]];
    let a_vals = [0.4, -0.6, 0.7, 0.2];
    let slope = 0.2;

    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::from_rows(&w_rows).unwrap());
    let a = tape.leaf(Tensor::column(a_vals.to_vec()).unwrap());
    let h = tape.constant(g.features().clone());
    let raw = attention_coefficients(&mut tape, w, a, h, &edges, slope).unwrap();
    let got = tape.value(raw).values();

    let wh = |row: &[f64]| -> [f64; 2] {
        [
            row[0] * w_rows[0][0] + row[1] * w_rows[1][0],
            row[0] * w_rows[0][1] + row[1] * w_rows[1][1],
        ]
    };
    let feats: Vec<[f64; 2]> = (0..3).map(|i| wh(g.features().row(i))).collect();
    let coeff = |i: usize, j: usize| -> f64 {
        let pre = a_vals[0] * feats[i][0]
            + a_vals[1] * feats[i][1]
            + a_vals[2] * feats[j][0]
            + a_vals[3] * feats[j][1];
        if pre > 0.0 {
            pre
        } else {
            slope * pre
        }
    };
    for e in 0..edges.len() {
        let (i, j) = (edges.dst()[e], edges.src()[e]);
        assert!(
            (got[e] - coeff(i, j)).abs() < 1e-12,
            "edge ({} <- {}): {} vs {}",
            i,
            j,
            got[e],
            coeff(i, j)
        );
    }
}

#[test]
fn normalized_coefficients_sum_to_one_per_node() {
    let g = sbm_generate(40, 3, 0.2, 0.05, 6, 0.8, 3).unwrap();
    let cfg = small_config(4, 8);
    let params = init_params(&cfg, 6, 3, 1).unwrap();
    let edges = Rc::new(MessageEdges::build(&g));
    let mut tape = Tape::new();
    let ids = ParamNodeIds::leaves(&mut tape, &params);
    let out = model_forward(&mut tape, &ids, &cfg, &g, edges.clone()).unwrap();
    for record in &out.records {
        for head in &record.normalized {
            let mut sums = vec![0.0; g.n_nodes()];
            for (e, &alpha) in head.iter().enumerate() {
                assert!(alpha > 0.0);
                sums[edges.dst()[e]] += alpha;
            }
            for (node, s) in sums.iter().enumerate() {
                assert!((s - 1.0).abs() < 1e-9, "node {} sums to {}", node, s);
            }
        }
    }
}

#[test]
fn single_node_self_loop_only() {
    let g = Graph::new(
        1,
        2,
        Tensor::from_rows(&[vec![0.7, -0.4]]).unwrap(),
        vec![],
        vec![Some(1)],
    )
    .unwrap();
    let cfg = ModelConfig {
        n_layers: 1,
        hidden_total: 2,
        n_heads: 1,
        activation: Activation::Elu,
        leaky_slope: 0.2,
    };
    let params = init_params(&cfg, 2, 2, 5).unwrap();
    let edges = Rc::new(MessageEdges::build(&g));
    let mut tape = Tape::new();
    let ids = ParamNodeIds::leaves(&mut tape, &params);
    let out = model_forward(&mut tape, &ids, &cfg, &g, edges).unwrap();
    // α = 1 on the lone self-loop; output is W h exactly (single output layer,
    // no activation).
    assert_eq!(out.records[0].normalized[0], vec![1.0]);
    let w = &params.layers[0][0].weight;
    let h = g.features().row(0);
    let expect = [
        h[0] * w.at(0, 0) + h[1] * w.at(1, 0),
        h[0] * w.at(0, 1) + h[1] * w.at(1, 1),
    ];
    let logits = tape.value(out.logits).values();
    assert!((logits[0] - expect[0]).abs() < 1e-12);
    assert!((logits[1] - expect[1]).abs() < 1e-12);
}

#[test]
fn permuting_node_ids_permutes_logits_bitwise() {
    let g = sbm_generate(25, 2, 0.3, 0.1, 5, 0.6, 11).unwrap();
    let cfg = small_config(2, 8);
    let params = init_params(&cfg, 5, 2, 2).unwrap();

    // permutation: reverse ids
    let n = g.n_nodes();
    let perm: Vec<usize> = (0..n).rev().collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| g.features().row(perm[i]).to_vec()).collect();
    let inv = {
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        inv
    };
    let edges_p: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (inv[u], inv[v])).collect();
    let labels_p: Vec<Option<usize>> = (0..n).map(|i| g.label(perm[i])).collect();
    let gp = Graph::new(n, 2, Tensor::from_rows(&rows).unwrap(), edges_p, labels_p).unwrap();

    let run = |graph: &Graph| -> Vec<f64> {
        let mut tape = Tape::new();
        let ids = ParamNodeIds::constants(&mut tape, &params);
        let edges = Rc::new(MessageEdges::build(graph));
        let out = model_forward(&mut tape, &ids, &cfg, graph, edges).unwrap();
        tape.value(out.logits).values().to_vec()
    };
    let base = run(&g);
    let permuted = run(&gp);
    let c = g.n_classes();
    for old in 0..n {
        for class in 0..c {
            let a = base[old * c + class];
            let b = permuted[inv[old] * c + class];
            assert_eq!(a.to_bits(), b.to_bits(), "node {} class {}", old, class);
        }
    }
}

#[test]
fn edge_insertion_only_affects_l_hop_neighborhood() {
    // Star of two far-apart components: adding an edge inside one component
    // must not change logits of nodes more than L hops away.
    let mut edges = vec![(0, 1), (1, 2), (3, 4), (4, 5), (5, 6)];
    let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![(i as f64) * 0.3 - 1.0, 1.0]).collect();
    let g = Graph::new(7, 2, Tensor::from_rows(&rows).unwrap(), edges.clone(), vec![None; 7])
        .unwrap();
    edges.push((0, 2));
    let g2 = g.with_edges(edges).unwrap();

    let cfg = small_config(2, 4);
    let params = init_params(&cfg, 2, 2, 9).unwrap();
    let run = |graph: &Graph| -> Vec<f64> {
        let mut tape = Tape::new();
        let ids = ParamNodeIds::constants(&mut tape, &params);
        let e = Rc::new(MessageEdges::build(graph));
        let out = model_forward(&mut tape, &ids, &cfg, graph, e).unwrap();
        tape.value(out.logits).values().to_vec()
    };
    let before = run(&g);
    let after = run(&g2);
    // nodes 3..6 are more than 2 hops from both endpoints of (0,2)
    for node in 3..7 {
        for class in 0..2 {
            assert_eq!(
                before[node * 2 + class].to_bits(),
                after[node * 2 + class].to_bits(),
                "far node {} changed",
                node
            );
        }
    }
    // at least one near node must change
    assert!(before[..6] != after[..6]);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = small_config(2, 6);
    let params = init_params(&cfg, 4, 3, 13).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&params, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(params, loaded);
}

#[test]
fn flatten_like_round_trip() {
    let cfg = small_config(2, 4);
    let params = init_params(&cfg, 3, 2, 1).unwrap();
    let flat = params.flatten();
    let rebuilt = params.like(flat).unwrap();
    assert_eq!(params, rebuilt);
}
