//! Dataset construction, attack preparation, and per-cell method execution.
//!
//! Seeds are derived additively from `data_seed` so that every artifact is a
//! pure function of the configuration; training seeds come from the config's
//! `seeds` list and vary only the model initialization and split stream.

use std::collections::BTreeMap;

use pagnn_core::attacks::{
    greedy_gradient_attack, pick_targets, random_attack, targeted_attack, AttackBudget,
    AttackResult,
};
use pagnn_core::error::{Error, Result};
use pagnn_core::eval::{accuracy, attention_stats, filter_low_similarity_edges};
use pagnn_core::graph::{
    make_label_splits, sample_labeled_pool, split_into_subgraphs, Graph, NodeSplit,
    PerturbationSet,
};
use pagnn_core::graph::sbm_generate;
use pagnn_core::losses::LossConfig;
use pagnn_core::meta::{
    fine_tune, train_ablation, train_meta, AblationInputs, AblationRegime, Task, TrainLog,
};
use pagnn_core::model::{init_params, ModelParams};

use crate::config::{AttackKind, DatasetConfig, ExperimentConfig};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Pagnn,
    Np,
    SecondTime,
    Ft,
    Jt,
    Vanilla,
    PreprocessBaseline,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        Some(match s {
            "pagnn" => Method::Pagnn,
            "np" => Method::Np,
            "second_time" => Method::SecondTime,
            "ft" => Method::Ft,
            "jt" => Method::Jt,
            "vanilla" => Method::Vanilla,
            "preprocess_baseline" => Method::PreprocessBaseline,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pagnn => "pagnn",
            Method::Np => "np",
            Method::SecondTime => "second_time",
            Method::Ft => "ft",
            Method::Jt => "jt",
            Method::Vanilla => "vanilla",
            Method::PreprocessBaseline => "preprocess_baseline",
        }
    }

    /// Methods that consume fabricated perturbation sets on clean graphs.
    pub fn needs_tasks(&self) -> bool {
        matches!(
            self,
            Method::Pagnn | Method::Np | Method::Ft | Method::Jt
        )
    }
}

/// Clean dataset: one designated target plus the remaining clean subgraphs.
pub struct Dataset {
    pub target_clean: Graph,
    pub cleans: Vec<Graph>,
    pub target_split: NodeSplit,
}

pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let parent = sbm_generate(
        cfg.n_nodes,
        cfg.n_classes,
        cfg.p_in,
        cfg.p_out,
        cfg.feature_dim,
        cfg.feature_noise,
        cfg.data_seed,
    )?;
    let mut subs = split_into_subgraphs(&parent, cfg.n_subgraphs, cfg.data_seed.wrapping_add(1))?;
    let target_clean = subs.remove(0);
    let target_split = make_label_splits(
        &target_clean,
        cfg.train_frac,
        cfg.val_frac,
        cfg.data_seed.wrapping_add(2),
    )?;
    Ok(Dataset {
        target_clean,
        cleans: subs,
        target_split,
    })
}

/// Attack dispatcher used for both the target grid and the clean graphs.
pub fn run_attack(
    cfg: &ExperimentConfig,
    graph: &Graph,
    budget: f64,
    seed: u64,
) -> Result<AttackResult> {
    match cfg.attack.kind {
        AttackKind::Random => random_attack(graph, AttackBudget::rate(budget)?, seed),
        AttackKind::Greedy => greedy_gradient_attack(
            graph,
            AttackBudget::rate(budget)?,
            cfg.attack.surrogate_steps,
            seed,
        ),
        AttackKind::Targeted => {
            let insertions = AttackBudget::rate(budget)?.resolve(graph.n_edges());
            if insertions == 0 {
                return random_attack(graph, AttackBudget::count(0), seed);
            }
            let n_targets =
                (insertions as f64 / cfg.attack.per_target_budget as f64).ceil() as usize;
            let targets = pick_targets(graph, n_targets.min(graph.labeled_nodes().len()), seed)?;
            targeted_attack(graph, &targets, cfg.attack.per_target_budget, seed)
        }
    }
}

pub fn clean_attack_seed(cfg: &DatasetConfig, index: usize) -> u64 {
    cfg.data_seed.wrapping_add(1000 + index as u64)
}

pub fn target_attack_seed(cfg: &DatasetConfig, budget_index: usize) -> u64 {
    cfg.data_seed.wrapping_add(3000 + budget_index as u64)
}

pub fn pool_seed(cfg: &DatasetConfig, index: usize) -> u64 {
    cfg.data_seed.wrapping_add(2000 + index as u64)
}

/// Everything the training cells share: the dataset, the attacked clean
/// graphs with their pools, and the poisoned target at each budget (keyed by
/// whole percent).
pub struct Prepared {
    pub dataset: Dataset,
    pub task_graphs: Vec<(Graph, PerturbationSet, Vec<usize>)>,
    pub targets: BTreeMap<u32, (Graph, PerturbationSet)>,
}

pub fn budget_percent(budget: f64) -> u32 {
    (budget * 100.0).round() as u32
}

pub fn prepare(cfg: &ExperimentConfig, budgets: &[f64]) -> Result<Prepared> {
    let dataset = build_dataset(&cfg.dataset)?;
    let mut task_graphs = Vec::with_capacity(dataset.cleans.len());
    for (i, clean) in dataset.cleans.iter().enumerate() {
        let attack = run_attack(cfg, clean, cfg.attack.clean_budget, clean_attack_seed(&cfg.dataset, i))?;
        let pool = sample_labeled_pool(
            &attack.poisoned,
            cfg.dataset.labeled_frac,
            pool_seed(&cfg.dataset, i),
        )?;
        task_graphs.push((attack.poisoned, attack.perturbations, pool));
    }
    let mut targets = BTreeMap::new();
    for (bi, &budget) in budgets.iter().enumerate() {
        let key = budget_percent(budget);
        if budget == 0.0 {
            targets.insert(key, (dataset.target_clean.clone(), PerturbationSet::empty()));
        } else {
            let attack = run_attack(
                cfg,
                &dataset.target_clean,
                budget,
                target_attack_seed(&cfg.dataset, bi),
            )?;
            targets.insert(key, (attack.poisoned, attack.perturbations));
        }
    }
    Ok(Prepared {
        dataset,
        task_graphs,
        targets,
    })
}

impl Prepared {
    pub fn make_tasks(&self) -> Result<Vec<Task>> {
        self.task_graphs
            .iter()
            .map(|(g, p, pool)| Task::new(g.clone(), p.clone(), pool.clone()))
            .collect()
    }

    pub fn target(&self, budget: f64) -> Result<&(Graph, PerturbationSet)> {
        self.targets.get(&budget_percent(budget)).ok_or_else(|| {
            Error::Contract(format!("no attacked target at budget {}", budget))
        })
    }
}

/// One trained-and-evaluated cell.
#[derive(Clone, Debug)]
pub struct CellMetrics {
    pub method: &'static str,
    pub budget: f64,
    pub lambda: f64,
    pub eta: f64,
    pub seed: u64,
    pub test_accuracy: f64,
    pub dist_loss: f64,
    pub perturb_attention_sum: f64,
    pub normal_mean: f64,
    pub perturbed_mean: f64,
}

pub struct CellOutput {
    pub metrics: CellMetrics,
    pub params: ModelParams,
    pub log: TrainLog,
}

fn vanilla_init_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

/// Train `method` on the poisoned target at `budget` and evaluate on the
/// target's test split.
pub fn run_cell(
    prepared: &Prepared,
    cfg: &ExperimentConfig,
    method: Method,
    budget: f64,
    lambda: f64,
    eta: f64,
    seed: u64,
) -> Result<CellOutput> {
    let (target, target_ptb) = prepared.target(budget)?;
    let split = &prepared.dataset.target_split;
    let loss_cfg = LossConfig { lambda, eta };
    let model_cfg = &cfg.model;

    let (params, log, eval_graph) = match method {
        Method::Pagnn => {
            let mut tasks = prepared.make_tasks()?;
            let (theta_star, mut log) = train_meta(
                &mut tasks,
                target,
                split,
                model_cfg,
                &loss_cfg,
                &cfg.meta,
                seed,
            )?;
            let (theta, ft_log) =
                fine_tune(&theta_star, target, split, model_cfg, &cfg.fine_tune, seed)?;
            log.entries.extend(ft_log.entries);
            (theta, log, target.clone())
        }
        Method::Np | Method::SecondTime | Method::Ft | Method::Jt => {
            let regime = match method {
                Method::Np => AblationRegime::NoPenalty,
                Method::SecondTime => AblationRegime::SecondTime,
                Method::Ft => AblationRegime::PretrainFinetune,
                _ => AblationRegime::Joint,
            };
            let mut tasks = prepared.make_tasks()?;
            let inputs = AblationInputs {
                tasks: &mut tasks,
                target,
                target_split: split,
                second_time_budget: cfg.attack.clean_budget,
                surrogate_steps: cfg.attack.surrogate_steps,
            };
            let (theta, log) = train_ablation(
                regime,
                inputs,
                model_cfg,
                &loss_cfg,
                &cfg.meta,
                &cfg.fine_tune,
                seed,
            )?;
            (theta, log, target.clone())
        }
        Method::Vanilla => {
            let theta0 = init_params(
                model_cfg,
                target.feature_dim(),
                target.n_classes(),
                vanilla_init_seed(seed),
            )?;
            let (theta, log) =
                fine_tune(&theta0, target, split, model_cfg, &cfg.fine_tune, seed)?;
            (theta, log, target.clone())
        }
        Method::PreprocessBaseline => {
            let filtered = filter_low_similarity_edges(target, cfg.preprocess_threshold)?;
            let theta0 = init_params(
                model_cfg,
                filtered.feature_dim(),
                filtered.n_classes(),
                vanilla_init_seed(seed),
            )?;
            let (theta, log) =
                fine_tune(&theta0, &filtered, split, model_cfg, &cfg.fine_tune, seed)?;
            (theta, log, filtered)
        }
    };

    let test_accuracy = accuracy(&params, model_cfg, &eval_graph, &split.test)?;
    let stats = attention_stats(&params, model_cfg, &eval_graph, target_ptb, eta)?;
    let reported_lambda = if method == Method::Np { 0.0 } else { lambda };
    Ok(CellOutput {
        metrics: CellMetrics {
            method: method.as_str(),
            budget,
            lambda: reported_lambda,
            eta,
            seed,
            test_accuracy,
            dist_loss: stats.dist_loss,
            perturb_attention_sum: stats.perturb_attention_sum,
            normal_mean: stats.normal_mean,
            perturbed_mean: stats.perturbed_mean,
        },
        params,
        log,
    })
}
