use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use milkit::datasets::SyntheticSpec;
use milkit::{ModelConfig, RunConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const DATA_ROOT_ENV: &str = "MILKIT_DATA_ROOT";

/// Where bags come from: a processed dataset directory, a synthetic
/// generator, or both (for `datagen`, `path` is the output location).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

fn default_k() -> usize {
    5
}
fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Number of train/validation repetitions.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Existing split file to reuse instead of drawing new splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<PathBuf>,
    #[serde(default)]
    pub parallel: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            k: default_k(),
            test_fraction: default_test_fraction(),
            splits: None,
            parallel: false,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("milkit-out")
}

fn default_model() -> ModelConfig {
    ModelConfig::new("ABMIL", 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    /// Models compared by `benchmark`; defaults to `[model]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<ModelConfig>>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// A `--a.b.c=value` or `--a.b.c value` flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Removes dotted overrides from `args`, returning them in order.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let raw = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| anyhow!("override --{key} needs a value"))?,
        };
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        if path.iter().any(String::is_empty) {
            bail!("malformed override --{key}");
        }
        overrides.push(Override {
            path,
            value: parse_value(&raw),
        });
    }
    Ok((rest, overrides))
}

pub fn apply_override(root: &mut Value, ov: &Override) -> Result<()> {
    let mut node = root;
    for (i, key) in ov.path.iter().enumerate() {
        if !node.is_object() {
            bail!(
                "override --{}: `{}` is not a section",
                ov.path.join("."),
                ov.path[..i].join(".")
            );
        }
        let map = node.as_object_mut().unwrap();
        if i + 1 == ov.path.len() {
            map.insert(key.clone(), ov.value.clone());
            return Ok(());
        }
        node = map
            .entry(key.clone())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Reads the config file (or `{}`), applies overrides and the `--seed` /
/// `--output` flags, then deserializes with unknown keys rejected.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[Override],
    seed: Option<u64>,
    output: Option<&Path>,
) -> Result<CliConfig> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid config {}", p.display()))?
        }
        None => Value::Object(Map::new()),
    };
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let mut cfg: CliConfig = serde_json::from_value(value).context("invalid config")?;
    if let Some(seed) = seed {
        cfg.run.seed = seed;
        if let Some(s) = cfg.dataset.synthetic.as_mut() {
            s.seed = seed;
        }
    }
    if let Some(out) = output {
        cfg.output_dir = out.to_path_buf();
    }
    Ok(cfg)
}

/// Relative dataset paths are taken under `MILKIT_DATA_ROOT` when it is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}
