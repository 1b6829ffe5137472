//! GNN-specific training loops built on the meta engine.

use std::cell::RefCell;
use std::rc::Rc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{self, SplitPhase, TaskLoss};
use super::{LogEntry, MetaConfig, Task, TrainLog};
use crate::attacks::{greedy_gradient_attack, AttackBudget};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::graph::{support_query_split, Graph, NodeSplit, PerturbationSet};
use crate::losses::{total_loss, LossBreakdown, LossConfig};
use crate::model::{
    init_params, model_forward, MessageEdges, ModelConfig, ModelParams, ParamNodeIds,
};
use crate::tensor::Tensor;

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub patience: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            steps: 300,
            lr: 0.1,
            patience: 20,
        }
    }
}

/// Loss builder for one task; stashes the latest query-phase breakdown so the
/// trainer can log distance-loss values.
struct GnnTaskLoss<'a> {
    graph: &'a Graph,
    perturbed: &'a PerturbationSet,
    support: Vec<usize>,
    query: Vec<usize>,
    edges: Rc<MessageEdges>,
    model_cfg: &'a ModelConfig,
    loss_cfg: LossConfig,
    template: &'a ModelParams,
    query_breakdown: RefCell<Option<LossBreakdown>>,
}

impl TaskLoss for GnnTaskLoss<'_> {
    fn loss(&self, tape: &mut Tape, params: &[NodeId], phase: SplitPhase) -> Result<NodeId> {
        let ids = ParamNodeIds::from_flat(self.template, params)?;
        let out = model_forward(tape, &ids, self.model_cfg, self.graph, self.edges.clone())?;
        let set = match phase {
            SplitPhase::Support => &self.support,
            SplitPhase::Query => &self.query,
        };
        let (node, breakdown) =
            total_loss(tape, &out, self.graph, set, self.perturbed, &self.loss_cfg)?;
        if phase == SplitPhase::Query {
            *self.query_breakdown.borrow_mut() = Some(breakdown);
        }
        Ok(node)
    }
}

fn as_divergence(e: Error, context: &str) -> Error {
    match e {
        Error::NonFinite(m) | Error::Divergence(m) => {
            Error::Divergence(format!("{}: {}", context, m))
        }
        other => other,
    }
}

/// Scale gradient tensors so their joint L2 norm does not exceed `cap`.
fn clip_global_norm(grads: &mut [Tensor], cap: f64) -> Result<()> {
    if cap <= 0.0 {
        return Ok(());
    }
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.values().iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > cap {
        let scale = cap / norm;
        for g in grads.iter_mut() {
            let scaled: Vec<f64> = g.values().iter().map(|v| v * scale).collect();
            *g = Tensor::new(g.shape().to_vec(), scaled)?;
        }
    }
    Ok(())
}

fn sgd_step(theta: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    for (t, g) in theta.iter_mut().zip(grads) {
        let updated: Vec<f64> = t
            .values()
            .iter()
            .zip(g.values())
            .map(|(p, gv)| p - lr * gv)
            .collect();
        *t = Tensor::new(t.shape().to_vec(), updated)?;
    }
    Ok(())
}

/// Inner adaptation for one task as a standalone operation: gradient-descent
/// steps on the support-set objective, returning the adapted parameters.
pub fn inner_adapt(
    theta: &ModelParams,
    task: &Task,
    split: &crate::graph::SupportQuerySplit,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    meta_cfg: &MetaConfig,
) -> Result<ModelParams> {
    let edges = Rc::new(MessageEdges::build(&task.graph));
    let loss = GnnTaskLoss {
        graph: &task.graph,
        perturbed: &task.perturbations,
        support: split.support.clone(),
        query: split.query.clone(),
        edges,
        model_cfg,
        loss_cfg: *loss_cfg,
        template: theta,
        query_breakdown: RefCell::new(None),
    };
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = theta.flatten().into_iter().map(|t| tape.leaf(t)).collect();
    let mut support_losses = Vec::new();
    let adapted = engine::adapt_on_tape(
        &mut tape,
        &leaves,
        &loss,
        &meta_cfg.adapt_config(),
        &mut support_losses,
    )?;
    let tensors = adapted.iter().map(|&id| tape.value(id).clone()).collect();
    theta.like(tensors)
}

/// One outer update over all tasks (summed in index order). Divergence errors
/// name the offending task.
pub fn meta_step(
    theta: &mut ModelParams,
    tasks: &[Task],
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    meta_cfg: &MetaConfig,
) -> Result<Vec<(f64, f64, f64)>> {
    if tasks.is_empty() {
        return Err(Error::Contract("meta step over zero tasks".into()));
    }
    let mut flat = theta.flatten();
    let mut total: Vec<Tensor> = flat
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let mut stats = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let split = task.split.as_ref().ok_or_else(|| {
            Error::Contract(format!("task {} has no support/query split", i))
        })?;
        let edges = Rc::new(MessageEdges::build(&task.graph));
        let loss = GnnTaskLoss {
            graph: &task.graph,
            perturbed: &task.perturbations,
            support: split.support.clone(),
            query: split.query.clone(),
            edges,
            model_cfg,
            loss_cfg: *loss_cfg,
            template: theta,
            query_breakdown: RefCell::new(None),
        };
        let (grads, task_stats) =
            engine::task_meta_gradient(&flat, &loss, &meta_cfg.adapt_config())
                .map_err(|e| as_divergence(e, &format!("task {}", i)))?;
        for (acc, g) in total.iter_mut().zip(&grads) {
            let sum: Vec<f64> = acc
                .values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| a + b)
                .collect();
            *acc = Tensor::new(acc.shape().to_vec(), sum)?;
        }
        let dist = loss
            .query_breakdown
            .borrow()
            .map(|b| b.distance)
            .unwrap_or(0.0);
        stats.push((
            task_stats.support_losses.first().copied().unwrap_or(0.0),
            task_stats.query_loss,
            dist,
        ));
    }
    clip_global_norm(&mut total, meta_cfg.grad_clip)?;
    sgd_step(&mut flat, &total, meta_cfg.outer_lr)?;
    *theta = theta.like(flat)?;
    Ok(stats)
}

/// Meta-train an initialization over clean-graph tasks, early-stopping on the
/// poisoned target's validation accuracy. Support/query splits are redrawn
/// every outer iteration. Returns the best-validation parameters.
///
/// The seed drives one RNG stream: first the parameter initialization, then
/// one split seed per (iteration, task) in order.
pub fn train_meta(
    tasks: &mut [Task],
    target: &Graph,
    target_split: &NodeSplit,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    meta_cfg: &MetaConfig,
    seed: u64,
) -> Result<(ModelParams, TrainLog)> {
    if tasks.is_empty() {
        return Err(Error::Contract("train_meta needs at least one task".into()));
    }
    model_cfg.validate()?;
    loss_cfg.validate()?;
    meta_cfg.validate()?;

    let input_dim = tasks[0].graph.feature_dim();
    let n_classes = tasks[0].graph.n_classes();
    for t in tasks.iter() {
        if t.graph.feature_dim() != input_dim || t.graph.n_classes() != n_classes {
            return Err(Error::Contract(
                "tasks disagree on feature dimension or class count".into(),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_seed: u64 = rng.gen();
    let mut theta = init_params(model_cfg, input_dim, n_classes, init_seed)?;

    let mut log = TrainLog::default();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_theta = theta.clone();
    let mut stale = 0usize;
    let started = Instant::now();

    for iter in 0..meta_cfg.max_outer_iters {
        for task in tasks.iter_mut() {
            let split_seed: u64 = rng.gen();
            task.split = Some(support_query_split(&task.labeled_pool, split_seed)?);
        }
        let stats = meta_step(&mut theta, tasks, model_cfg, loss_cfg, meta_cfg)?;
        let val_acc = accuracy(&theta, model_cfg, target, &target_split.validation)
            .map_err(|e| as_divergence(e, "validation forward"))?;
        let seconds = started.elapsed().as_secs_f64();
        for (task_id, &(support, query, dist)) in stats.iter().enumerate() {
            log.push(LogEntry {
                iteration: iter,
                task_id,
                support_loss: support,
                query_loss: query,
                dist_loss: dist,
                val_accuracy: val_acc,
                seconds,
            });
        }
        if val_acc > best_acc {
            best_acc = val_acc;
            best_theta = theta.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= meta_cfg.patience {
                break;
            }
        }
    }
    Ok((best_theta, log))
}

/// Plain gradient descent on the classification loss of the target graph,
/// early-stopped on its validation accuracy. Used for the final fine-tuning
/// pass (where the perturbation set is unknown) and for undefended baselines.
pub fn fine_tune(
    theta: &ModelParams,
    graph: &Graph,
    split: &NodeSplit,
    model_cfg: &ModelConfig,
    config: &FineTuneConfig,
    _seed: u64,
) -> Result<(ModelParams, TrainLog)> {
    let objective = PlainObjective {
        graph,
        node_set: split.train.clone(),
        perturbed: PerturbationSet::empty(),
        loss_cfg: LossConfig {
            lambda: 0.0,
            eta: 0.0,
        },
    };
    plain_train(
        theta,
        &[objective],
        graph,
        &split.validation,
        model_cfg,
        config.steps,
        config.lr,
        config.patience,
    )
}

/// One term of a joint (non-meta) training objective.
pub struct PlainObjective<'a> {
    pub graph: &'a Graph,
    pub node_set: Vec<usize>,
    pub perturbed: PerturbationSet,
    pub loss_cfg: LossConfig,
}

/// Full-batch gradient descent on a sum of per-graph objectives, early
/// stopping on `val_graph`/`val_set` accuracy. Returns the best-validation
/// parameters and a log (one row per iteration, objective losses summed).
pub fn plain_train(
    theta: &ModelParams,
    objectives: &[PlainObjective],
    val_graph: &Graph,
    val_set: &[usize],
    model_cfg: &ModelConfig,
    steps: usize,
    lr: f64,
    patience: usize,
) -> Result<(ModelParams, TrainLog)> {
    if objectives.is_empty() {
        return Err(Error::Contract("plain_train needs at least one objective".into()));
    }
    if lr <= 0.0 {
        return Err(Error::Parameter(format!("learning rate {} must be positive", lr)));
    }
    let mut flat = theta.flatten();
    let template = theta;
    let edges: Vec<Rc<MessageEdges>> = objectives
        .iter()
        .map(|o| Rc::new(MessageEdges::build(o.graph)))
        .collect();

    let mut log = TrainLog::default();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best = flat.clone();
    let mut stale = 0usize;
    let started = Instant::now();

    for iter in 0..steps {
        let mut tape = Tape::new();
        let leaves: Vec<NodeId> = flat.iter().map(|t| tape.leaf(t.clone())).collect();
        let ids = ParamNodeIds::from_flat(template, &leaves)?;
        let mut loss_acc: Option<NodeId> = None;
        let mut ce_total = 0.0;
        let mut dist_total = 0.0;
        for (o, e) in objectives.iter().zip(&edges) {
            let out = model_forward(&mut tape, &ids, model_cfg, o.graph, e.clone())?;
            let (node, breakdown) =
                total_loss(&mut tape, &out, o.graph, &o.node_set, &o.perturbed, &o.loss_cfg)?;
            ce_total += breakdown.classification;
            dist_total += breakdown.distance;
            loss_acc = Some(match loss_acc {
                Some(prev) => tape.add(prev, node)?,
                None => node,
            });
        }
        let loss_node = loss_acc.unwrap();
        let loss_value = tape.value(loss_node).item()?;
        if !loss_value.is_finite() {
            return Err(Error::Divergence(format!(
                "joint loss at iteration {} is not finite",
                iter
            )));
        }
        let grads = tape.backward(loss_node)?;
        let grad_tensors: Vec<Tensor> = leaves
            .iter()
            .zip(&flat)
            .map(|(&id, t)| {
                grads
                    .get(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect();
        sgd_step(&mut flat, &grad_tensors, lr)?;

        let current = template.like(flat.clone())?;
        let val_acc = accuracy(&current, model_cfg, val_graph, val_set)
            .map_err(|e| as_divergence(e, "validation forward"))?;
        log.push(LogEntry {
            iteration: iter,
            task_id: 0,
            support_loss: ce_total,
            query_loss: loss_value,
            dist_loss: dist_total,
            val_accuracy: val_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val_acc > best_acc {
            best_acc = val_acc;
            best = flat.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                break;
            }
        }
    }
    Ok((template.like(best)?, log))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AblationRegime {
    /// Full pipeline with the penalty disabled (λ = 0).
    NoPenalty,
    /// No clean graphs: attack the poisoned target a second time to fabricate
    /// a perturbation set and train directly on it.
    SecondTime,
    /// Joint (non-meta) pretraining on all tasks, then fine-tune.
    PretrainFinetune,
    /// Like PretrainFinetune, with the target's classification loss added to
    /// the joint phase (its perturbations are unknown, so no distance term).
    Joint,
}

pub struct AblationInputs<'a> {
    pub tasks: &'a mut [Task],
    pub target: &'a Graph,
    pub target_split: &'a NodeSplit,
    /// Edge-rate budget of the fabricating attack in the SecondTime regime.
    pub second_time_budget: f64,
    pub surrogate_steps: usize,
}

/// Train one of the ablation regimes to a final parameter set.
pub fn train_ablation(
    regime: AblationRegime,
    inputs: AblationInputs<'_>,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    meta_cfg: &MetaConfig,
    ft_cfg: &FineTuneConfig,
    seed: u64,
) -> Result<(ModelParams, TrainLog)> {
    match regime {
        AblationRegime::NoPenalty => {
            let np_cfg = LossConfig {
                lambda: 0.0,
                ..*loss_cfg
            };
            let (theta_star, mut log) = train_meta(
                inputs.tasks,
                inputs.target,
                inputs.target_split,
                model_cfg,
                &np_cfg,
                meta_cfg,
                seed,
            )?;
            let (theta, ft_log) = fine_tune(
                &theta_star,
                inputs.target,
                inputs.target_split,
                model_cfg,
                ft_cfg,
                seed,
            )?;
            log.entries.extend(ft_log.entries);
            Ok((theta, log))
        }
        AblationRegime::SecondTime => {
            let attack = greedy_gradient_attack(
                inputs.target,
                AttackBudget::rate(inputs.second_time_budget)?,
                inputs.surrogate_steps,
                seed,
            )?;
            let init_seed = ChaCha8Rng::seed_from_u64(seed).gen::<u64>();
            let theta0 = init_params(
                model_cfg,
                inputs.target.feature_dim(),
                inputs.target.n_classes(),
                init_seed,
            )?;
            let objective = PlainObjective {
                graph: &attack.poisoned,
                node_set: inputs.target_split.train.clone(),
                perturbed: attack.perturbations.clone(),
                loss_cfg: *loss_cfg,
            };
            plain_train(
                &theta0,
                &[objective],
                &attack.poisoned,
                &inputs.target_split.validation,
                model_cfg,
                meta_cfg.max_outer_iters,
                ft_cfg.lr,
                meta_cfg.patience,
            )
        }
        AblationRegime::PretrainFinetune | AblationRegime::Joint => {
            let init_seed = ChaCha8Rng::seed_from_u64(seed).gen::<u64>();
            let theta0 = init_params(
                model_cfg,
                inputs.target.feature_dim(),
                inputs.target.n_classes(),
                init_seed,
            )?;
            let mut objectives: Vec<PlainObjective> = inputs
                .tasks
                .iter()
                .map(|t| PlainObjective {
                    graph: &t.graph,
                    node_set: t.labeled_pool.clone(),
                    perturbed: t.perturbations.clone(),
                    loss_cfg: *loss_cfg,
                })
                .collect();
            if regime == AblationRegime::Joint {
                objectives.push(PlainObjective {
                    graph: inputs.target,
                    node_set: inputs.target_split.train.clone(),
                    perturbed: PerturbationSet::empty(),
                    loss_cfg: *loss_cfg,
                });
            }
            let (pre, mut log) = plain_train(
                &theta0,
                &objectives,
                inputs.target,
                &inputs.target_split.validation,
                model_cfg,
                meta_cfg.max_outer_iters,
                ft_cfg.lr,
                meta_cfg.patience,
            )?;
            let (theta, ft_log) = fine_tune(
                &pre,
                inputs.target,
                inputs.target_split,
                model_cfg,
                ft_cfg,
                seed,
            )?;
            log.entries.extend(ft_log.entries);
            Ok((theta, log))
        }
    }
}
