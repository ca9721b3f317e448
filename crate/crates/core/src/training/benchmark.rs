use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{format_mean_std, mean_std, Metrics};
use super::splits::SplitSet;
use super::trainer::{evaluate, train, RunConfig};
use crate::bagdata::Bag;
use crate::error::{MilError, Result};
use crate::models::{build_model, ModelConfig};

pub const CSV_HEADER: &str = "model,acc_mean,acc_std,auroc_mean,auroc_std,f1_mean,f1_std";
pub const STD_CONVENTION: &str = "population (divide by k)";

/// Outcome of one model on one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub model: String,
    pub repetition: usize,
    pub seed: u64,
    pub selected_epoch: usize,
    /// Metrics on the test set, or on the validation set when there is no
    /// test set.
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&format_mean_std(self.mean, self.std))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: String,
    pub acc: MeanStd,
    pub auroc: MeanStd,
    pub f1: MeanStd,
}

impl BenchmarkRow {
    pub fn from_runs(model: &str, runs: &[&Metrics]) -> Self {
        let col =
            |f: fn(&Metrics) -> f64| MeanStd::of(&runs.iter().map(|m| f(m)).collect::<Vec<_>>());
        BenchmarkRow {
            model: model.to_string(),
            acc: col(|m| m.acc),
            auroc: col(|m| m.auroc),
            f1: col(|m| m.f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub std_convention: String,
    pub evaluated_on: String,
    pub rows: Vec<BenchmarkRow>,
    pub runs: Vec<RepetitionResult>,
}

impl BenchmarkResult {
    /// Seven columns, full precision, one row per model.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.model, r.acc.mean, r.acc.std, r.auroc.mean, r.auroc.std, r.f1.mean, r.f1.std
            ));
        }
        out
    }

    /// Human-readable `model  ACC  AUROC  F1` table in `m_{s}` notation.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!(
            "{:<width$}  {:<13}  {:<13}  {:<13}\n",
            "model", "ACC", "AUROC", "F1"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:<13}  {:<13}  {:<13}\n",
                r.model,
                r.acc.to_string(),
                r.auroc.to_string(),
                r.f1.to_string()
            ));
        }
        out
    }
}

fn select(index: &HashMap<&str, &Bag>, ids: &[String]) -> Result<Vec<Bag>> {
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|b| (*b).clone())
                .ok_or_else(|| MilError::UnknownBag(id.clone()))
        })
        .collect()
}

/// Trains and evaluates every model on every repetition of `splits`.
///
/// Repetition `r` uses seed `cfg.seed + r` for both parameter
/// initialization and shuffling. Models whose `in_dim` is 0 take the
/// dataset's feature dimension. With `parallel`, repetitions run
/// concurrently; results are identical to the sequential order.
pub fn run_benchmark(
    models: &[ModelConfig],
    bags: &[Bag],
    splits: &SplitSet,
    cfg: &RunConfig,
    parallel: bool,
) -> Result<BenchmarkResult> {
    if models.is_empty() {
        return Err(MilError::InvalidConfig(
            "benchmark needs at least one model".into(),
        ));
    }
    let dim = bags.first().ok_or(MilError::EmptyDataset)?.dim();
    let index: HashMap<&str, &Bag> = bags.iter().map(|b| (b.bag_id(), b)).collect();
    splits.validate(Some(&index.keys().map(|s| s.to_string()).collect()))?;
    let test = select(&index, &splits.test)?;

    let mut jobs = Vec::new();
    for m in models {
        let mut m = m.clone();
        if m.in_dim == 0 {
            m.in_dim = dim;
        }
        let m = m.resolved()?;
        for r in 0..splits.k {
            jobs.push((m.clone(), r));
        }
    }
    let run = |(model_cfg, r): &(ModelConfig, usize)| -> Result<RepetitionResult> {
        let split = &splits.splits[*r];
        let (train_bags, val_bags) = (select(&index, &split.train)?, select(&index, &split.val)?);
        let seed = cfg.seed.wrapping_add(*r as u64);
        let run_cfg = RunConfig {
            seed,
            ..cfg.clone()
        };
        let mut model = build_model(model_cfg, seed)?;
        let history = train(&mut *model, &train_bags, &val_bags, &run_cfg)?;
        let eval_bags = if test.is_empty() { &val_bags } else { &test };
        Ok(RepetitionResult {
            model: model_cfg.model_name.clone(),
            repetition: *r,
            seed,
            selected_epoch: history.selected_epoch,
            metrics: evaluate(&*model, eval_bags)?,
        })
    };
    let runs: Vec<RepetitionResult> = if parallel {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };

    let mut rows = Vec::new();
    for chunk in runs.chunks(splits.k) {
        let metrics: Vec<&Metrics> = chunk.iter().map(|r| &r.metrics).collect();
        rows.push(BenchmarkRow::from_runs(&chunk[0].model, &metrics));
    }
    Ok(BenchmarkResult {
        std_convention: STD_CONVENTION.into(),
        evaluated_on: if test.is_empty() { "val" } else { "test" }.into(),
        rows,
        runs,
    })
}
