use std::rc::Rc;

use super::*;
use crate::tensor::Tensor;

fn col(v: &[f64]) -> Tensor {
    Tensor::column(v.to_vec()).unwrap()
}

#[test]
fn leaky_relu_values_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(col(&[2.0, -1.0]));
    let y = tape.leaky_relu(x, 0.2).unwrap();
    assert_eq!(tape.value(y).values(), &[2.0, -0.2]);

    let s = tape.sum(y).unwrap();
    let grads = tape.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().values(), &[1.0, 0.2]);
}

#[test]
fn leaky_relu_rejects_bad_slope() {
    let mut tape = Tape::new();
    let x = tape.leaf(col(&[1.0]));
    assert!(tape.leaky_relu(x, 0.0).is_err());
    assert!(tape.leaky_relu(x, 1.0).is_err());
}

#[test]
fn matmul_gradient_of_sum_is_ones_times_b_transposed() {
    // d(sum(a·b))/da = ones(m,n) · bᵀ
    let mut rng_vals = [0.7, -0.3, 1.2, 0.5, -1.1, 0.9, 0.2, -0.8, 1.5, 0.4, -0.6, 1.0];
    rng_vals[0] += 0.01;
    let a = Tensor::new(vec![3, 4], rng_vals.to_vec()).unwrap();
    let b = Tensor::new(
        vec![4, 2],
        vec![0.3, -0.2, 1.1, 0.8, -0.5, 0.6, 0.9, -1.3],
    )
    .unwrap();

    let mut tape = Tape::new();
    let (ai, bi) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let prod = tape.matmul(ai, bi).unwrap();
    let s = tape.sum(prod).unwrap();
    let grads = tape.backward(s).unwrap();

    let ones = Tensor::filled(vec![3, 2], 1.0).unwrap();
    let bt = kernels::transpose(&b).unwrap();
    let expected = kernels::matmul(&ones, &bt).unwrap();
    let got = grads.get(ai).unwrap();
    for (g, e) in got.values().iter().zip(expected.values()) {
        assert!((g - e).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(vec![2, 3]));
    let b = tape.leaf(Tensor::zeros(vec![2, 3]));
    assert!(matches!(
        tape.matmul(a, b),
        Err(crate::error::Error::Dimension(_))
    ));
}

#[test]
fn segment_softmax_matches_closed_form() {
    let mut tape = Tape::new();
    let s = tape.leaf(col(&[1.0, 1.0, 7.3, 1.0, 2.0]));
    let segs = Rc::new(vec![0, 0, 1, 2, 2]);
    let out = segment_softmax(&mut tape, s, segs, 3).unwrap();
    let v = tape.value(out).values();
    assert!((v[0] - 0.5).abs() < 1e-12);
    assert!((v[1] - 0.5).abs() < 1e-12);
    assert!((v[2] - 1.0).abs() < 1e-12);
    // exp(1)/(exp(1)+exp(2)) = 0.26894, exp(2)/(…) = 0.73106
    assert!((v[3] - 0.26894).abs() < 1e-5);
    assert!((v[4] - 0.73106).abs() < 1e-5);
}

#[test]
fn segment_softmax_rejects_empty_segment() {
    let mut tape = Tape::new();
    let s = tape.leaf(col(&[1.0, 2.0]));
    let out = segment_softmax(&mut tape, s, Rc::new(vec![0, 0]), 2);
    assert!(matches!(out, Err(crate::error::Error::Contract(_))));
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(col(&[1.0, 2.0]));
    assert!(matches!(
        tape.backward(x),
        Err(crate::error::Error::Contract(_))
    ));
}

#[test]
fn backward_is_deterministic() {
    let mut tape = Tape::new();
    let x = tape.leaf(col(&[0.3, -0.7, 1.9]));
    let e = tape.exp(x).unwrap();
    let y = tape.mul(e, x).unwrap();
    let s = tape.sum(y).unwrap();
    let g1 = tape.backward(s).unwrap();
    let g2 = tape.backward(s).unwrap();
    let a = g1.get(x).unwrap().values();
    let b = g2.get(x).unwrap().values();
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn grad_nodes_values_match_plain_backward() {
    let mut tape = Tape::new();
    let x = tape.leaf(col(&[0.4, -1.2, 2.2]));
    let w = tape.leaf(Tensor::new(vec![1, 3], vec![0.5, -0.25, 0.75]).unwrap());
    let p = tape.matmul(w, x).unwrap();
    let act = elu(&mut tape, p).unwrap();
    let s = tape.sum(act).unwrap();

    let plain = tape.backward(s).unwrap();
    let nodes = tape.grad_nodes(s, &[x, w]).unwrap();
    for (leaf, node) in [x, w].iter().zip(&nodes) {
        let a = plain.get(*leaf).unwrap().values();
        let b = tape.value(*node).values();
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}

// θ′ = θ − 0.1·2θ = 0.8θ, outer loss 0.64θ², meta-gradient at θ=1 is 1.28.
#[test]
fn second_order_through_one_quadratic_step() {
    let mut tape = Tape::new();
    let theta = tape.leaf(Tensor::scalar(1.0).unwrap());
    let inner = tape.mul(theta, theta).unwrap();
    let g = tape.grad_nodes(inner, &[theta]).unwrap()[0];
    let step = tape.scale(g, 0.1).unwrap();
    let adapted = tape.sub(theta, step).unwrap();
    let outer = tape.mul(adapted, adapted).unwrap();
    let grads = tape.backward(outer).unwrap();
    let meta = grads.get(theta).unwrap().item().unwrap();
    assert!((meta - 1.28).abs() < 1e-12);
}

// Five inner steps on ℒ(θ)=θ² with rate α: θ₅ = (1−2α)⁵θ, outer gradient
// (1−2α)¹⁰·2θ.
#[test]
fn second_order_through_five_quadratic_steps() {
    let alpha = 0.1;
    let theta0 = 0.7;
    let mut tape = Tape::new();
    let theta = tape.leaf(Tensor::scalar(theta0).unwrap());
    let mut cur = theta;
    for _ in 0..5 {
        let loss = tape.mul(cur, cur).unwrap();
        let g = tape.grad_nodes(loss, &[cur]).unwrap()[0];
        let step = tape.scale(g, alpha).unwrap();
        cur = tape.sub(cur, step).unwrap();
    }
    let outer = tape.mul(cur, cur).unwrap();
    let grads = tape.backward(outer).unwrap();
    let meta = grads.get(theta).unwrap().item().unwrap();
    let expected = (1.0 - 2.0 * alpha).powi(10) * 2.0 * theta0;
    assert!((meta - expected).abs() < 1e-6);
}

// Zero inner steps: the meta-gradient is the plain gradient.
#[test]
fn zero_inner_steps_degenerates_to_plain_gradient() {
    let mut tape = Tape::new();
    let theta = tape.leaf(Tensor::scalar(0.9).unwrap());
    let outer = tape.mul(theta, theta).unwrap();
    let grads = tape.backward(outer).unwrap();
    let meta = grads.get(theta).unwrap().item().unwrap();
    assert!((meta - 1.8).abs() < 1e-15);
}

#[test]
fn finite_diff_on_primitive_composition() {
    let x = Tensor::new(vec![2, 2], vec![0.5, -1.5, 2.0, 0.25]).unwrap();
    let w = Tensor::new(vec![2, 2], vec![1.1, -0.4, 0.6, 0.9]).unwrap();
    let err = finite_diff_check(
        |tape, ids| {
            let p = tape.matmul(ids[0], ids[1])?;
            let a = elu(tape, p)?;
            let l = tape.leaky_relu(a, 0.2)?;
            let e = tape.exp(l)?;
            tape.sum(e)
        },
        &[x, w],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {}", err);
}

#[test]
fn finite_diff_through_segment_softmax() {
    let s = col(&[0.3, -0.8, 1.4, 0.1]);
    let err = finite_diff_check(
        |tape, ids| {
            let sm = segment_softmax(tape, ids[0], Rc::new(vec![0, 0, 1, 1]), 2)?;
            let sq = tape.mul(sm, sm)?;
            tape.sum(sq)
        },
        &[s],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {}", err);
}

#[test]
fn finite_diff_rejects_bad_epsilon() {
    let r = finite_diff_check(|tape, ids| tape.sum(ids[0]), &[col(&[1.0])], 0.0);
    assert!(r.is_err());
}

#[test]
fn elu_negative_branch_never_overflows() {
    let mut tape = Tape::new();
    let x = tape.leaf(col(&[800.0, -3.0]));
    let y = elu(&mut tape, x).unwrap();
    let v = tape.value(y).values();
    assert_eq!(v[0], 800.0);
    assert!((v[1] - ((-3.0f64).exp() - 1.0)).abs() < 1e-15);
}
