//! Meta-optimization: per-task inner adaptation, second-order outer updates,
//! early stopping against the poisoned target's validation split, fine-tuning,
//! and the ablation training regimes.

pub mod engine;
mod trainer;

pub use engine::{AdaptConfig, SplitPhase, TaskLoss, TaskStats};
pub use trainer::{
    fine_tune, inner_adapt, meta_step, plain_train, train_ablation, train_meta, AblationInputs,
    AblationRegime, FineTuneConfig, PlainObjective,
};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, PerturbationSet, SupportQuerySplit};

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inner adaptation rate (α).
    pub inner_lr: f64,
    /// Outer meta-update rate (β).
    pub outer_lr: f64,
    pub inner_steps: usize,
    pub max_outer_iters: usize,
    /// Outer iterations without validation improvement before stopping.
    pub patience: usize,
    /// Exact second-order meta-gradients when true; first-order otherwise.
    pub second_order: bool,
    /// Global-norm cap applied to the summed outer gradient (0 disables).
    /// Second-order meta-gradients occasionally spike once attention scores
    /// separate; the cap keeps plain SGD from overshooting.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
}

fn default_grad_clip() -> f64 {
    5.0
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_lr: 0.01,
            outer_lr: 0.01,
            inner_steps: 5,
            max_outer_iters: 200,
            patience: 20,
            second_order: true,
            grad_clip: 5.0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_lr <= 0.0 || self.outer_lr <= 0.0 {
            return Err(Error::Parameter(format!(
                "learning rates must be positive, got inner={} outer={}",
                self.inner_lr, self.outer_lr
            )));
        }
        if self.inner_steps == 0 {
            return Err(Error::Parameter("inner_steps must be at least 1".into()));
        }
        if self.max_outer_iters == 0 || self.patience == 0 {
            return Err(Error::Parameter(
                "max_outer_iters and patience must be at least 1".into(),
            ));
        }
        if !self.grad_clip.is_finite() || self.grad_clip < 0.0 {
            return Err(Error::Parameter(format!(
                "grad_clip {} must be finite and non-negative",
                self.grad_clip
            )));
        }
        Ok(())
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            inner_lr: self.inner_lr,
            inner_steps: self.inner_steps,
            second_order: self.second_order,
        }
    }
}

/// One meta-learning episode: a clean graph, its known adversarial edges, and
/// the labeled pool the support/query halves are drawn from.
#[derive(Clone, Debug)]
pub struct Task {
    pub graph: Graph,
    pub perturbations: PerturbationSet,
    pub labeled_pool: Vec<usize>,
    pub split: Option<SupportQuerySplit>,
}

impl Task {
    pub fn new(
        graph: Graph,
        perturbations: PerturbationSet,
        labeled_pool: Vec<usize>,
    ) -> Result<Self> {
        if labeled_pool.is_empty() {
            return Err(Error::Contract("task has an empty labeled pool".into()));
        }
        if perturbations.is_empty() {
            return Err(Error::Contract(
                "clean-graph task needs a non-empty perturbation set".into(),
            ));
        }
        if let Some(&bad) = labeled_pool.iter().find(|&&v| graph.label(v).is_none()) {
            return Err(Error::Contract(format!(
                "pool node {} is unlabeled",
                bad
            )));
        }
        Ok(Task {
            graph,
            perturbations,
            labeled_pool,
            split: None,
        })
    }
}

/// Append-only record of training progress; one row per (outer iteration,
/// task).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub task_id: usize,
    pub support_loss: f64,
    pub query_loss: f64,
    pub dist_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

impl TrainLog {
    pub fn push(&mut self, entry: LogEntry) {
        debug_assert!(self
            .entries
            .last()
            .map_or(true, |last| entry.iteration >= last.iteration));
        self.entries.push(entry);
    }

    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.entries
            .iter()
            .map(|e| e.val_accuracy)
            .fold(None, |best, v| Some(best.map_or(v, |b: f64| b.max(v))))
    }

    /// Numeric content without timings; what determinism guarantees cover.
    pub fn numeric_rows(&self) -> Vec<(usize, usize, f64, f64, f64, f64)> {
        self.entries
            .iter()
            .map(|e| {
                (
                    e.iteration,
                    e.task_id,
                    e.support_loss,
                    e.query_loss,
                    e.dist_loss,
                    e.val_accuracy,
                )
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,task_id,support_loss,query_loss,dist_loss,val_accuracy,seconds\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.iteration,
                e.task_id,
                e.support_loss,
                e.query_loss,
                e.dist_loss,
                e.val_accuracy,
                e.seconds
            ));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}
