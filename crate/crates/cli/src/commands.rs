use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use milkit::datasets::{
    fields as processed, generate, read_array, save_dataset, ProcessedMILDataset,
};
use milkit::models::{load_checkpoint, save_checkpoint, CHECKPOINT_META};
use milkit::training::{run_benchmark, BenchmarkResult, SplitSet, TrainHistory};
use milkit::{build_model, evaluate, train, Bag, Metrics, ModelConfig, RunConfig};
use serde::{Deserialize, Serialize};

use crate::config::{resolve_data_path, CliConfig, DatasetSection};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const REPORT: &str = "report.json";
pub const SPLITS: &str = "splits.json";
pub const TIMING: &str = "timing.json";
pub const RESUME_REPORT: &str = "resume_eval.json";
pub const EVAL_REPORT: &str = "eval.json";
pub const BENCHMARK_CSV: &str = "benchmark.csv";
pub const BENCHMARK_JSON: &str = "benchmark.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: DatasetSection,
    pub n_bags: usize,
    pub positives: usize,
    pub feature_dim: usize,
}

/// Everything a training run produced, minus wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelConfig,
    pub run: RunConfig,
    pub seed: u64,
    pub dataset: DatasetInfo,
    pub history: TrainHistory,
    /// Metrics of the kept parameters on the training split.
    pub train_metrics: Metrics,
    /// Metrics of the kept parameters on the validation split.
    pub val_metrics: Metrics,
    /// Metrics of the kept parameters on the whole dataset.
    pub final_metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelConfig,
    pub dataset: DatasetInfo,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub models: Vec<ModelConfig>,
    pub run: RunConfig,
    pub seed: u64,
    pub k: usize,
    pub dataset: DatasetInfo,
    pub result: BenchmarkResult,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

fn write_timing(dir: &Path, start: Instant) -> Result<()> {
    write_json(
        &dir.join(TIMING),
        &serde_json::json!({ "wall_seconds": start.elapsed().as_secs_f64() }),
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn format_metrics(m: &Metrics) -> String {
    format!("acc {:.3} auroc {:.3} f1 {:.3}", m.acc, m.auroc, m.f1)
}

fn load_bags(section: &DatasetSection) -> Result<Vec<Bag>> {
    match (&section.path, &section.synthetic) {
        (Some(path), _) => {
            let root = resolve_data_path(path);
            if !root.join(processed::MANIFEST).is_file() {
                bail!(
                    "no dataset at {} (missing {})",
                    root.display(),
                    processed::MANIFEST
                );
            }
            Ok(ProcessedMILDataset::open(&root)?.load_all()?)
        }
        (None, Some(spec)) => Ok(generate(spec)?),
        (None, None) => bail!("no dataset configured: set dataset.path or dataset.synthetic"),
    }
}

fn dataset_info(source: &DatasetSection, bags: &[Bag]) -> DatasetInfo {
    DatasetInfo {
        source: source.clone(),
        n_bags: bags.len(),
        positives: bags.iter().filter(|b| b.label() == 1).count(),
        feature_dim: bags.first().map_or(0, Bag::dim),
    }
}

fn with_in_dim(model: &ModelConfig, dim: usize) -> ModelConfig {
    let mut m = model.clone();
    if m.in_dim == 0 {
        m.in_dim = dim;
    }
    m
}

fn select(bags: &[Bag], ids: &[String]) -> Vec<Bag> {
    let index: HashMap<&str, &Bag> = bags.iter().map(|b| (b.bag_id(), b)).collect();
    ids.iter().map(|id| index[id.as_str()].clone()).collect()
}

pub fn datagen(cfg: &CliConfig) -> Result<()> {
    let spec = cfg
        .dataset
        .synthetic
        .as_ref()
        .context("datagen needs a `dataset.synthetic` section")?;
    let out = match &cfg.dataset.path {
        Some(p) => resolve_data_path(p),
        None => cfg.output_dir.clone(),
    };
    let bags = generate(spec)?;
    if out.join(processed::MANIFEST).is_file() {
        // keep reruns byte-identical instead of mixing old and new bags
        fs::remove_dir_all(&out).with_context(|| format!("cannot clear {}", out.display()))?;
    } else if out.read_dir().is_ok_and(|mut d| d.next().is_some()) {
        bail!(
            "refusing to write a dataset into non-empty directory {}",
            out.display()
        );
    }
    save_dataset(&bags, &out)?;
    let info = dataset_info(&cfg.dataset, &bags);
    let mean = bags.iter().map(Bag::n_instances).sum::<usize>() as f64 / bags.len() as f64;
    println!(
        "wrote {}: n_bags {} positives {} mean size {:.2} feature dim {}",
        out.display(),
        info.n_bags,
        info.positives,
        mean,
        info.feature_dim
    );
    Ok(())
}

pub fn train_cmd(cfg: &CliConfig, resume: bool) -> Result<()> {
    let start = Instant::now();
    let bags = load_bags(&cfg.dataset)?;
    let info = dataset_info(&cfg.dataset, &bags);
    let out = &cfg.output_dir;
    let ckpt = out.join(CHECKPOINT_DIR);

    if resume {
        if !ckpt.join(CHECKPOINT_META).is_file() {
            bail!("nothing to resume: no checkpoint in {}", ckpt.display());
        }
        let (model, _) = load_checkpoint(&ckpt)?;
        let metrics = evaluate(&*model, &bags)?;
        if let Ok(stored) = read_json::<RunReport>(&out.join(REPORT)) {
            let drift = [
                (metrics.acc - stored.final_metrics.acc).abs(),
                (metrics.auroc - stored.final_metrics.auroc).abs(),
                (metrics.f1 - stored.final_metrics.f1).abs(),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            println!("max drift from stored report: {drift:.2e}");
        }
        write_json(
            &out.join(RESUME_REPORT),
            &EvalReport {
                model: model.config().clone(),
                dataset: info,
                metrics,
            },
        )?;
        println!("final {}", format_metrics(&metrics));
        return Ok(());
    }

    let model_cfg = with_in_dim(&cfg.model, info.feature_dim);
    let ids: Vec<String> = bags.iter().map(|b| b.bag_id().to_string()).collect();
    let labels: Vec<u8> = bags.iter().map(Bag::label).collect();
    let splits = SplitSet::stratified(&ids, &labels, 1, cfg.run.val_fraction, 0.0, cfg.run.seed)?;
    let (train_bags, val_bags) = (
        select(&bags, &splits.splits[0].train),
        select(&bags, &splits.splits[0].val),
    );

    let mut model = build_model(&model_cfg, cfg.run.seed)?;
    let history = train(&mut *model, &train_bags, &val_bags, &cfg.run)?;
    let report = RunReport {
        model: model.config().clone(),
        run: cfg.run.clone(),
        seed: cfg.run.seed,
        dataset: info,
        history,
        train_metrics: evaluate(&*model, &train_bags)?,
        val_metrics: evaluate(&*model, &val_bags)?,
        final_metrics: evaluate(&*model, &bags)?,
    };
    create_dir(out)?;
    save_checkpoint(&*model, cfg.run.seed, &ckpt)?;
    splits.save(out.join(SPLITS))?;
    write_json(&out.join(REPORT), &report)?;
    write_timing(out, start)?;
    println!(
        "{} selected epoch {} | val {} | final {}",
        report.model.model_name,
        report.history.selected_epoch,
        format_metrics(&report.val_metrics),
        format_metrics(&report.final_metrics)
    );
    Ok(())
}

pub fn eval_cmd(cfg: &CliConfig, checkpoint: Option<&Path>, dataset: Option<&Path>) -> Result<()> {
    let ckpt: PathBuf =
        checkpoint.map_or_else(|| cfg.output_dir.join(CHECKPOINT_DIR), Path::to_path_buf);
    let (model, _) = load_checkpoint(&ckpt)?;
    let section = match dataset {
        Some(p) => DatasetSection {
            path: Some(p.to_path_buf()),
            synthetic: None,
        },
        None => cfg.dataset.clone(),
    };
    let bags = load_bags(&section)?;
    let metrics = evaluate(&*model, &bags)?;
    create_dir(&cfg.output_dir)?;
    write_json(
        &cfg.output_dir.join(EVAL_REPORT),
        &EvalReport {
            model: model.config().clone(),
            dataset: dataset_info(&section, &bags),
            metrics,
        },
    )?;
    println!("{}", format_metrics(&metrics));
    Ok(())
}

pub fn benchmark_cmd(cfg: &CliConfig) -> Result<()> {
    let start = Instant::now();
    let bags = load_bags(&cfg.dataset)?;
    let info = dataset_info(&cfg.dataset, &bags);
    let models: Vec<ModelConfig> = cfg
        .models
        .clone()
        .unwrap_or_else(|| vec![cfg.model.clone()])
        .iter()
        .map(|m| with_in_dim(m, info.feature_dim))
        .collect();
    let bench = &cfg.benchmark;
    let splits = match &bench.splits {
        Some(p) => SplitSet::load(p)?,
        None => {
            let ids: Vec<String> = bags.iter().map(|b| b.bag_id().to_string()).collect();
            let labels: Vec<u8> = bags.iter().map(Bag::label).collect();
            SplitSet::stratified(
                &ids,
                &labels,
                bench.k,
                cfg.run.val_fraction,
                bench.test_fraction,
                cfg.run.seed,
            )?
        }
    };
    let out = &cfg.output_dir;
    create_dir(out)?;
    splits.save(out.join(SPLITS))?;
    let result = run_benchmark(&models, &bags, &splits, &cfg.run, bench.parallel)?;
    fs::write(out.join(BENCHMARK_CSV), result.to_csv()).context("cannot write benchmark CSV")?;
    print!("{}", result.to_table());
    write_json(
        &out.join(BENCHMARK_JSON),
        &BenchmarkReport {
            models,
            run: cfg.run.clone(),
            seed: cfg.run.seed,
            k: splits.k,
            dataset: info,
            result,
        },
    )?;
    write_timing(out, start)
}

pub fn inspect(path: &Path) -> Result<()> {
    if path.join(CHECKPOINT_META).is_file() {
        let (model, meta) = load_checkpoint(path)?;
        println!("checkpoint {}", path.display());
        println!("model {}", model.name());
        println!("config {}", serde_json::to_string(model.config())?);
        println!("seed {}", meta.seed);
        println!(
            "parameters {} tensors, {} scalars",
            model.params().len(),
            model.params().num_scalars()
        );
        for (name, value) in model.params().iter() {
            println!("  {name} {}x{}", value.nrows(), value.ncols());
        }
    } else if path.join(processed::MANIFEST).is_file() {
        let ds = ProcessedMILDataset::open(path)?;
        let bags = ds.load_all()?;
        let sizes: Vec<usize> = bags.iter().map(Bag::n_instances).collect();
        println!("dataset {}", path.display());
        println!("n_bags {}", bags.len());
        println!(
            "positives {}",
            bags.iter().filter(|b| b.label() == 1).count()
        );
        println!("feature_dim {}", ds.feature_dim()?);
        println!(
            "bag size min {} mean {:.2} max {}",
            sizes.iter().min().unwrap_or(&0),
            sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64,
            sizes.iter().max().unwrap_or(&0)
        );
        println!(
            "fields {}",
            ds.fields().iter().cloned().collect::<Vec<_>>().join(",")
        );
    } else if path.is_file() {
        let a = read_array(path)?;
        println!(
            "array {} dtype {:?} shape {:?}",
            path.display(),
            a.dtype(),
            a.shape()
        );
    } else {
        bail!(
            "{} is not a checkpoint, dataset or array file",
            path.display()
        );
    }
    Ok(())
}
