//! Metrics artifacts: per-cell CSV, aggregated summary JSON, attention
//! histogram and mean tables. Output is canonical (sorted rows, shortest
//! round-trip float formatting) so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use pagnn_core::error::Result;
use pagnn_core::eval::{AttentionHistogram, AttentionStats};

use crate::pipeline::CellMetrics;

pub fn sort_cells(cells: &mut [CellMetrics]) {
    cells.sort_by(|a, b| {
        a.method
            .cmp(b.method)
            .then(a.budget.total_cmp(&b.budget))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.eta.total_cmp(&b.eta))
            .then(a.seed.cmp(&b.seed))
    });
}

pub fn write_metrics_csv(cells: &[CellMetrics], path: &Path) -> Result<()> {
    let mut out = String::from(
        "method,budget,lambda,eta,seed,test_accuracy,dist_loss,perturb_attention_sum,normal_mean,perturbed_mean\n",
    );
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.method,
            c.budget,
            c.lambda,
            c.eta,
            c.seed,
            c.test_accuracy,
            c.dist_loss,
            c.perturb_attention_sum,
            c.normal_mean,
            c.perturbed_mean
        ));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct Aggregate {
    pub method: String,
    pub budget: f64,
    pub lambda: f64,
    pub eta: f64,
    pub n_seeds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub dist_loss_mean: f64,
    pub perturb_attention_sum_mean: f64,
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(cells: &[CellMetrics]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, u64, u64, u64), Vec<&CellMetrics>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((
                c.method.to_string(),
                c.budget.to_bits(),
                c.lambda.to_bits(),
                c.eta.to_bits(),
            ))
            .or_default()
            .push(c);
    }
    groups
        .into_values()
        .map(|group| {
            let accs: Vec<f64> = group.iter().map(|c| c.test_accuracy).collect();
            let dists: Vec<f64> = group.iter().map(|c| c.dist_loss).collect();
            let sps: Vec<f64> = group.iter().map(|c| c.perturb_attention_sum).collect();
            let (acc_mean, acc_std) = mean_and_sample_std(&accs);
            let (dist_mean, _) = mean_and_sample_std(&dists);
            let (sp_mean, _) = mean_and_sample_std(&sps);
            let first = group[0];
            Aggregate {
                method: first.method.to_string(),
                budget: first.budget,
                lambda: first.lambda,
                eta: first.eta,
                n_seeds: group.len(),
                accuracy_mean: acc_mean,
                accuracy_std: acc_std,
                dist_loss_mean: dist_mean,
                perturb_attention_sum_mean: sp_mean,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    cells: &'a [Aggregate],
}

pub fn write_summary_json(aggregates: &[Aggregate], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&Summary { cells: aggregates })
        .expect("summary serialization cannot fail");
    fs::write(path, text)?;
    Ok(())
}

/// `bin_left,bin_right,count_normal,count_perturbed` rows.
pub fn write_histogram_csv(hist: &AttentionHistogram, path: &Path) -> Result<()> {
    let mut out = String::from("bin_left,bin_right,count_normal,count_perturbed\n");
    for i in 0..hist.normal_counts.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            hist.bin_edges[i],
            hist.bin_edges[i + 1],
            hist.normal_counts[i],
            hist.perturbed_counts[i]
        ));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Two-row mean table: normal vs perturbed edges.
pub fn write_means_csv(stats: &AttentionStats, path: &Path) -> Result<()> {
    let mut out = String::from("edges,mean_coefficient,directed_count\n");
    out.push_str(&format!(
        "normal,{},{}\n",
        stats.normal_mean, stats.normal_directed_count
    ));
    out.push_str(&format!(
        "perturbed,{},{}\n",
        stats.perturbed_mean, stats.perturbed_directed_count
    ));
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
