//! Task-agnostic inner/outer meta-optimization machinery.
//!
//! A task is a closure that builds a scalar loss on a tape from the current
//! parameter nodes and a phase (support for inner adaptation, query for the
//! outer objective). Inner gradient steps are recorded differentiably, so the
//! outer backward pass yields the exact second-order meta-gradient; the
//! first-order approximation detaches the inner gradients instead.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SplitPhase {
    Support,
    Query,
}

#[derive(Copy, Clone, Debug)]
pub struct AdaptConfig {
    pub inner_lr: f64,
    pub inner_steps: usize,
    /// When false, inner gradients are detached (first-order approximation).
    pub second_order: bool,
}

/// Builds a scalar loss node from the current parameters for one phase.
pub trait TaskLoss {
    fn loss(&self, tape: &mut Tape, params: &[NodeId], phase: SplitPhase) -> Result<NodeId>;
}

impl<F> TaskLoss for F
where
    F: Fn(&mut Tape, &[NodeId], SplitPhase) -> Result<NodeId>,
{
    fn loss(&self, tape: &mut Tape, params: &[NodeId], phase: SplitPhase) -> Result<NodeId> {
        self(tape, params, phase)
    }
}

/// Per-task losses observed while computing a meta-gradient.
#[derive(Clone, Debug)]
pub struct TaskStats {
    /// Support loss at each inner step, before that step's update.
    pub support_losses: Vec<f64>,
    pub query_loss: f64,
}

/// Run `inner_steps` recorded gradient-descent steps on the support loss.
/// Returns the adapted parameter nodes.
pub fn adapt_on_tape<T: TaskLoss + ?Sized>(
    tape: &mut Tape,
    params: &[NodeId],
    task: &T,
    cfg: &AdaptConfig,
    stats: &mut Vec<f64>,
) -> Result<Vec<NodeId>> {
    let mut current = params.to_vec();
    for _ in 0..cfg.inner_steps {
        let loss = task.loss(tape, &current, SplitPhase::Support)?;
        stats.push(tape.value(loss).item()?);
        let grads = tape.grad_nodes(loss, &current)?;
        let mut next = Vec::with_capacity(current.len());
        for (&p, &g) in current.iter().zip(&grads) {
            let g = if cfg.second_order { g } else { tape.detach(g) };
            let step = tape.scale(g, cfg.inner_lr)?;
            next.push(tape.sub(p, step)?);
        }
        current = next;
    }
    Ok(current)
}

/// Meta-gradient of one task: adapt on the support phase, evaluate the query
/// loss at the adapted parameters, and differentiate back to the originals.
pub fn task_meta_gradient<T: TaskLoss + ?Sized>(
    theta: &[Tensor],
    task: &T,
    cfg: &AdaptConfig,
) -> Result<(Vec<Tensor>, TaskStats)> {
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = theta.iter().map(|t| tape.leaf(t.clone())).collect();
    let mut support_losses = Vec::with_capacity(cfg.inner_steps);
    let adapted = adapt_on_tape(&mut tape, &leaves, task, cfg, &mut support_losses)?;
    let query = task.loss(&mut tape, &adapted, SplitPhase::Query)?;
    let query_loss = tape.value(query).item()?;
    if !query_loss.is_finite() {
        return Err(Error::Divergence("query loss is not finite".into()));
    }
    let grads = tape.backward(query)?;
    let out = leaves
        .iter()
        .zip(theta)
        .map(|(&id, t)| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();
    Ok((
        out,
        TaskStats {
            support_losses,
            query_loss,
        },
    ))
}

/// Sum of per-task meta-gradients, reduced in task order.
pub fn meta_gradients<T: TaskLoss>(
    theta: &[Tensor],
    tasks: &[T],
    cfg: &AdaptConfig,
) -> Result<(Vec<Tensor>, Vec<TaskStats>)> {
    if tasks.is_empty() {
        return Err(Error::Contract("meta step over zero tasks".into()));
    }
    let mut total: Vec<Tensor> = theta.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
    let mut all_stats = Vec::with_capacity(tasks.len());
    for task in tasks {
        let (grads, stats) = task_meta_gradient(theta, task, cfg)?;
        for (acc, g) in total.iter_mut().zip(&grads) {
            let sum: Vec<f64> = acc
                .values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| a + b)
                .collect();
            *acc = Tensor::new(acc.shape().to_vec(), sum)?;
        }
        all_stats.push(stats);
    }
    Ok((total, all_stats))
}

/// One outer step: accumulate meta-gradients over all tasks and descend.
pub fn meta_step<T: TaskLoss>(
    theta: &mut Vec<Tensor>,
    tasks: &[T],
    cfg: &AdaptConfig,
    outer_lr: f64,
) -> Result<Vec<TaskStats>> {
    let (grads, stats) = meta_gradients(theta, tasks, cfg)?;
    for (t, g) in theta.iter_mut().zip(&grads) {
        let updated: Vec<f64> = t
            .values()
            .iter()
            .zip(g.values())
            .map(|(p, gv)| p - outer_lr * gv)
            .collect();
        *t = Tensor::new(t.shape().to_vec(), updated)?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    // ℒᵢ(θ) = cᵢ·θ² for both phases.
    struct Quadratic {
        c: f64,
    }

    impl TaskLoss for Quadratic {
        fn loss(&self, tape: &mut Tape, params: &[NodeId], _phase: SplitPhase) -> Result<NodeId> {
            let sq = tape.mul(params[0], params[0])?;
            tape.scale(sq, self.c)
        }
    }

    fn theta(v: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(v).unwrap()]
    }

    #[test]
    fn zero_rate_adaptation_is_identity() {
        let cfg = AdaptConfig {
            inner_lr: 0.0,
            inner_steps: 3,
            second_order: true,
        };
        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::scalar(1.3).unwrap());
        let mut stats = Vec::new();
        let adapted = adapt_on_tape(&mut tape, &[leaf], &Quadratic { c: 1.0 }, &cfg, &mut stats)
            .unwrap();
        assert_eq!(tape.value(adapted[0]).item().unwrap(), 1.3);
    }

    #[test]
    fn single_step_quadratic_adaptation() {
        // θ′ = θ − 0.1·2θ = 0.8·θ at θ=1
        let cfg = AdaptConfig {
            inner_lr: 0.1,
            inner_steps: 1,
            second_order: true,
        };
        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::scalar(1.0).unwrap());
        let mut stats = Vec::new();
        let adapted =
            adapt_on_tape(&mut tape, &[leaf], &Quadratic { c: 1.0 }, &cfg, &mut stats).unwrap();
        assert!((tape.value(adapted[0]).item().unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn five_step_quadratic_adaptation_matches_recursion() {
        let cfg = AdaptConfig {
            inner_lr: 0.1,
            inner_steps: 5,
            second_order: true,
        };
        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::scalar(1.0).unwrap());
        let mut stats = Vec::new();
        let adapted =
            adapt_on_tape(&mut tape, &[leaf], &Quadratic { c: 1.0 }, &cfg, &mut stats).unwrap();
        assert!((tape.value(adapted[0]).item().unwrap() - 0.32768).abs() < 1e-12);
    }

    // Exact meta-gradient for one inner step on ℒᵢ = cᵢθ²:
    // Σᵢ 2cᵢ(1−2αcᵢ)²·θ. First-order approximation: Σᵢ 2cᵢ(1−2αcᵢ)·θ.
    #[test]
    fn two_task_meta_gradient_matches_symbolic_oracle() {
        let alpha = 0.05;
        let theta0 = 0.8;
        let tasks = [Quadratic { c: 1.0 }, Quadratic { c: 2.5 }];

        let exact_cfg = AdaptConfig {
            inner_lr: alpha,
            inner_steps: 1,
            second_order: true,
        };
        let (grads, _) = meta_gradients(&theta(theta0), &tasks, &exact_cfg).unwrap();
        let expected: f64 = tasks
            .iter()
            .map(|t| 2.0 * t.c * (1.0 - 2.0 * alpha * t.c).powi(2) * theta0)
            .sum();
        assert!((grads[0].item().unwrap() - expected).abs() < 1e-12);

        let first_order_cfg = AdaptConfig {
            second_order: false,
            ..exact_cfg
        };
        let (fo_grads, _) = meta_gradients(&theta(theta0), &tasks, &first_order_cfg).unwrap();
        let fo_expected: f64 = tasks
            .iter()
            .map(|t| 2.0 * t.c * (1.0 - 2.0 * alpha * t.c) * theta0)
            .sum();
        assert!((fo_grads[0].item().unwrap() - fo_expected).abs() < 1e-12);
    }

    #[test]
    fn five_step_meta_gradient_matches_closed_form() {
        let alpha = 0.1;
        let theta0 = 0.6;
        let cfg = AdaptConfig {
            inner_lr: alpha,
            inner_steps: 5,
            second_order: true,
        };
        let (grads, _) = meta_gradients(&theta(theta0), &[Quadratic { c: 1.0 }], &cfg).unwrap();
        let expected = (1.0 - 2.0 * alpha).powi(10) * 2.0 * theta0;
        assert!((grads[0].item().unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn zero_alpha_meta_step_is_plain_gradient_descent() {
        let cfg = AdaptConfig {
            inner_lr: 0.0,
            inner_steps: 1,
            second_order: true,
        };
        let mut th = theta(1.1);
        meta_step(&mut th, &[Quadratic { c: 1.0 }], &cfg, 0.2).unwrap();
        // plain descent: θ − 0.2·2θ = 0.6·1.1
        assert!((th[0].item().unwrap() - 0.66).abs() < 1e-10);
    }

    #[test]
    fn zero_tasks_is_an_error() {
        let cfg = AdaptConfig {
            inner_lr: 0.1,
            inner_steps: 1,
            second_order: true,
        };
        let tasks: Vec<Quadratic> = vec![];
        assert!(meta_gradients(&theta(1.0), &tasks, &cfg).is_err());
    }
}
