//! Subcommand implementations. Each is a pure function of (config, seeds,
//! input files); artifacts land under the configured output directory:
//!
//! ```text
//! out/
//!   graphs/   target_clean.json, clean_{i}.json
//!   attacks/  target_b{pct}.json (+ _log.csv), task_{i}.json (+ _log.csv)
//!   runs/     {method}_b{pct}_s{seed}.ckpt.json, …_train.csv
//!   metrics.csv, summary.json
//!   attention/ histogram.csv, means.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use pagnn_core::error::Error;
use pagnn_core::eval::{accuracy, attention_histogram, attention_stats, per_class_accuracy};
use pagnn_core::graph::{load_graph, make_label_splits, sample_labeled_pool, save_graph, Graph, PerturbationSet};
use pagnn_core::model::{load_checkpoint, save_checkpoint};

use crate::config::ExperimentConfig;
use crate::pipeline::{
    budget_percent, build_dataset, clean_attack_seed, pool_seed, run_attack, run_cell,
    target_attack_seed, CellMetrics, Dataset, Method, Prepared,
};
use crate::report;

/// Command failures, split by exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, missing input files (exit 1).
    Usage(String),
    /// Runtime or numeric failure (exit 2).
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{}", m),
            CliError::Runtime(m) => write!(f, "{}", m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CmdResult = Result<(), CliError>;

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("create {}: {}", path.display(), e)))
}

fn graphs_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("graphs")
}

fn attacks_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("attacks")
}

fn runs_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("runs")
}

fn target_file(cfg: &ExperimentConfig, pct: u32) -> PathBuf {
    attacks_dir(cfg).join(format!("target_b{}.json", pct))
}

fn task_file(cfg: &ExperimentConfig, i: usize) -> PathBuf {
    attacks_dir(cfg).join(format!("task_{}.json", i))
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{} not found; run `{}` first",
            path.display(),
            hint
        )))
    }
}

fn say(quiet: bool, msg: String) {
    if !quiet {
        eprintln!("{}", msg);
    }
}

/// Generate the parent graph, split it, and write the clean files.
pub fn cmd_generate(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let dataset = build_dataset(&cfg.dataset)?;
    let dir = graphs_dir(cfg);
    ensure_dir(&dir)?;
    save_graph(
        &dataset.target_clean,
        &PerturbationSet::empty(),
        &dir.join("target_clean.json"),
    )?;
    for (i, clean) in dataset.cleans.iter().enumerate() {
        save_graph(clean, &PerturbationSet::empty(), &dir.join(format!("clean_{}.json", i)))?;
    }
    say(
        quiet,
        format!(
            "generated 1 target + {} clean graphs ({} nodes each) in {}",
            dataset.cleans.len(),
            dataset.target_clean.n_nodes(),
            dir.display()
        ),
    );
    Ok(())
}

/// Attack the target at every budget and each clean graph at the task budget.
pub fn cmd_attack(cfg: &ExperimentConfig, quiet: bool) -> CmdResult {
    let gdir = graphs_dir(cfg);
    require(&gdir.join("target_clean.json"), "pagnn generate")?;
    let (target_clean, _) = load_graph(&gdir.join("target_clean.json"))?;
    let adir = attacks_dir(cfg);
    ensure_dir(&adir)?;

    for i in 0..cfg.dataset.n_subgraphs - 1 {
        let path = gdir.join(format!("clean_{}.json", i));
        require(&path, "pagnn generate")?;
        let (clean, _) = load_graph(&path)?;
        let attack = run_attack(cfg, &clean, cfg.attack.clean_budget, clean_attack_seed(&cfg.dataset, i))?;
        save_graph(&attack.poisoned, &attack.perturbations, &task_file(cfg, i))?;
        attack.write_log_csv(&adir.join(format!("task_{}_log.csv", i)))?;
    }

    for (bi, &budget) in cfg.attack.budgets.iter().enumerate() {
        let pct = budget_percent(budget);
        let attack = if budget == 0.0 {
            pagnn_core::attacks::random_attack(
                &target_clean,
                pagnn_core::attacks::AttackBudget::count(0),
                0,
            )?
        } else {
            run_attack(cfg, &target_clean, budget, target_attack_seed(&cfg.dataset, bi))?
        };
        save_graph(&attack.poisoned, &attack.perturbations, &target_file(cfg, pct))?;
        attack.write_log_csv(&adir.join(format!("target_b{}_log.csv", pct)))?;
        say(
            quiet,
            format!(
                "budget {:>3}%: {} inserted edges",
                pct,
                attack.perturbations.len()
            ),
        );
    }
    Ok(())
}

/// Reassemble the in-memory experiment state from the attack artifacts.
pub fn load_prepared(
    cfg: &ExperimentConfig,
    budgets: &[f64],
    need_tasks: bool,
) -> Result<Prepared, CliError> {
    let gdir = graphs_dir(cfg);
    require(&gdir.join("target_clean.json"), "pagnn generate")?;
    let (target_clean, _) = load_graph(&gdir.join("target_clean.json"))?;

    let mut task_graphs = Vec::new();
    if need_tasks {
        for i in 0..cfg.dataset.n_subgraphs - 1 {
            let path = task_file(cfg, i);
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "{} not found: this method needs attacked clean graphs; run `pagnn attack`",
                    path.display()
                )));
            }
            let (graph, ptb) = load_graph(&path)?;
            if ptb.is_empty() {
                return Err(CliError::Usage(format!(
                    "{} carries no perturbed edges; this method needs them",
                    path.display()
                )));
            }
            let pool =
                sample_labeled_pool(&graph, cfg.dataset.labeled_frac, pool_seed(&cfg.dataset, i))?;
            task_graphs.push((graph, ptb, pool));
        }
    }

    let mut targets = std::collections::BTreeMap::new();
    for &budget in budgets {
        let pct = budget_percent(budget);
        let path = target_file(cfg, pct);
        require(&path, "pagnn attack")?;
        let (graph, ptb) = load_graph(&path)?;
        targets.insert(pct, (graph, ptb));
    }

    let target_split = make_label_splits(
        &target_clean,
        cfg.dataset.train_frac,
        cfg.dataset.val_frac,
        cfg.dataset.data_seed.wrapping_add(2),
    )?;
    Ok(Prepared {
        dataset: Dataset {
            target_clean,
            cleans: Vec::new(),
            target_split,
        },
        task_graphs,
        targets,
    })
}

fn ckpt_path(cfg: &ExperimentConfig, method: Method, pct: u32, seed: u64) -> PathBuf {
    runs_dir(cfg).join(format!("{}_b{}_s{}.ckpt.json", method.as_str(), pct, seed))
}

/// Train one method at one budget, writing a checkpoint and training log.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    method_name: &str,
    budget: Option<f64>,
    lambda_override: Option<f64>,
    seed: u64,
    quiet: bool,
) -> CmdResult {
    let method = Method::parse(method_name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown method `{}` (expected pagnn, np, second_time, ft, jt, vanilla, preprocess_baseline)",
            method_name
        ))
    })?;
    if method == Method::Np {
        if let Some(l) = lambda_override {
            if l != 0.0 {
                return Err(CliError::Usage(format!(
                    "method np pins lambda to 0; refusing override lambda={}",
                    l
                )));
            }
        }
    }
    let budget = budget.unwrap_or(cfg.attack.budgets[0]);
    if !(0.0..=1.0).contains(&budget) {
        return Err(CliError::Usage(format!("budget {} out of [0,1]", budget)));
    }
    let lambda = lambda_override.unwrap_or(cfg.loss.lambda);
    let prepared = load_prepared(cfg, &[budget], method.needs_tasks())?;
    let out = run_cell(&prepared, cfg, method, budget, lambda, cfg.loss.eta, seed)?;

    ensure_dir(&runs_dir(cfg))?;
    let pct = budget_percent(budget);
    let ckpt = ckpt_path(cfg, method, pct, seed);
    save_checkpoint(&out.params, &ckpt)?;
    out.log
        .write_csv(&runs_dir(cfg).join(format!("{}_b{}_s{}_train.csv", method.as_str(), pct, seed)))?;
    say(
        quiet,
        format!(
            "{} @ {}%: test accuracy {:.4} (checkpoint {})",
            method.as_str(),
            pct,
            out.metrics.test_accuracy,
            ckpt.display()
        ),
    );
    println!("{}", out.metrics.test_accuracy);
    Ok(())
}

/// Evaluate a checkpoint on a graph file; prints a JSON metrics fragment.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path, graph_path: &Path) -> CmdResult {
    require(checkpoint, "pagnn train")?;
    require(graph_path, "pagnn generate / pagnn attack")?;
    let params = load_checkpoint(checkpoint)?;
    let (graph, ptb) = load_graph(graph_path)?;
    let split = make_label_splits(
        &graph,
        cfg.dataset.train_frac,
        cfg.dataset.val_frac,
        cfg.dataset.data_seed.wrapping_add(2),
    )?;
    let test_accuracy = accuracy(&params, &cfg.model, &graph, &split.test)?;
    let per_class = per_class_accuracy(&params, &cfg.model, &graph, &split.test)?;
    let stats = attention_stats(&params, &cfg.model, &graph, &ptb, cfg.loss.eta)?;

    #[derive(serde::Serialize)]
    struct Fragment {
        test_accuracy: f64,
        per_class_accuracy: Vec<Option<f64>>,
        perturb_attention_sum: Option<f64>,
        dist_loss: Option<f64>,
    }
    let fragment = Fragment {
        test_accuracy,
        per_class_accuracy: per_class,
        perturb_attention_sum: (!ptb.is_empty()).then_some(stats.perturb_attention_sum),
        dist_loss: (!ptb.is_empty()).then_some(stats.dist_loss),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&fragment).expect("fragment serialization cannot fail")
    );
    Ok(())
}

/// Cartesian sweep over methods × budgets × λ × η × seeds; writes the
/// per-cell table and the aggregated summary.
pub fn cmd_sweep(cfg: &ExperimentConfig, workers: usize, quiet: bool) -> CmdResult {
    let methods: Vec<Method> = cfg
        .sweep_methods
        .iter()
        .map(|m| {
            Method::parse(m)
                .ok_or_else(|| CliError::Usage(format!("unknown sweep method `{}`", m)))
        })
        .collect::<Result<_, _>>()?;
    let budgets = cfg
        .sweep_budgets
        .clone()
        .unwrap_or_else(|| cfg.attack.budgets.clone());
    let need_tasks = methods.iter().any(Method::needs_tasks);
    let prepared = load_prepared(cfg, &budgets, need_tasks)?;

    let mut specs: Vec<(Method, f64, f64, f64, u64)> = Vec::new();
    for &method in &methods {
        for &budget in &budgets {
            let lambdas = if method == Method::Np {
                vec![0.0]
            } else {
                cfg.loss.lambdas()
            };
            for &lambda in &lambdas {
                for &eta in &cfg.loss.etas() {
                    for &seed in &cfg.seeds {
                        specs.push((method, budget, lambda, eta, seed));
                    }
                }
            }
        }
    }
    say(quiet, format!("sweeping {} cells", specs.len()));

    let run_all = || -> Result<Vec<CellMetrics>, Error> {
        specs
            .par_iter()
            .map(|&(method, budget, lambda, eta, seed)| {
                run_cell(&prepared, cfg, method, budget, lambda, eta, seed)
                    .map(|out| out.metrics)
            })
            .collect()
    };
    let mut cells = if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        pool.install(run_all)
    } else {
        run_all()
    }?;

    report::sort_cells(&mut cells);
    ensure_dir(&cfg.out_dir)?;
    report::write_metrics_csv(&cells, &cfg.out_dir.join("metrics.csv"))?;
    let aggregates = report::aggregate(&cells);
    report::write_summary_json(&aggregates, &cfg.out_dir.join("summary.json"))?;
    say(
        quiet,
        format!(
            "wrote {} rows to {}",
            cells.len(),
            cfg.out_dir.join("metrics.csv").display()
        ),
    );
    Ok(())
}

/// Histograms (shared binning) and mean table of unnormalized coefficients
/// over normal vs perturbed edges.
pub fn cmd_export_attention(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    graph_path: &Path,
    bins: usize,
) -> CmdResult {
    require(checkpoint, "pagnn train")?;
    require(graph_path, "pagnn attack")?;
    let params = load_checkpoint(checkpoint)?;
    let (graph, ptb) = load_graph(graph_path)?;
    let hist = attention_histogram(&params, &cfg.model, &graph, &ptb, bins)?;
    let stats = attention_stats(&params, &cfg.model, &graph, &ptb, cfg.loss.eta)?;
    let dir = cfg.out_dir.join("attention");
    ensure_dir(&dir)?;
    report::write_histogram_csv(&hist, &dir.join("histogram.csv"))?;
    report::write_means_csv(&stats, &dir.join("means.csv"))?;
    Ok(())
}

/// Run one graph file through the similarity filter (exposed for tests).
pub fn preprocess_graph(graph: &Graph, threshold: f64) -> Result<Graph, CliError> {
    Ok(pagnn_core::eval::filter_low_similarity_edges(graph, threshold)?)
}
