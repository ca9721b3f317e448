//! Checkpoint directory: `model.json` (configuration, seed, parameter
//! index) plus one float32 array file per parameter under `params/`.
//! Parameters are stored as float32, so a reload rounds them.

use std::fs;
use std::path::Path;

use ndarray::Ix2;
use serde::{Deserialize, Serialize};

use super::{build_model, MilModel, ModelConfig};
use crate::datasets::{read_array, write_array, ArrayData};
use crate::error::{MilError, Result};

pub const CHECKPOINT_META: &str = "model.json";
const PARAM_DIR: &str = "params";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(model: &dyn MilModel, seed: u64, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let pdir = dir.join(PARAM_DIR);
    fs::create_dir_all(&pdir).map_err(|e| MilError::io(&pdir, e))?;
    let mut entries = Vec::new();
    for (name, value) in model.params().iter() {
        let arr = value.mapv(|v| v as f32).into_dyn();
        write_array(&ArrayData::F32(arr), pdir.join(format!("{name}.milt")))?;
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: [value.nrows(), value.ncols()],
        });
    }
    let meta = CheckpointMeta {
        config: model.config().clone(),
        seed,
        params: entries,
    };
    let path = dir.join(CHECKPOINT_META);
    let text = serde_json::to_string_pretty(&meta)? + "\n";
    fs::write(&path, text).map_err(|e| MilError::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(Box<dyn MilModel>, CheckpointMeta)> {
    let dir = dir.as_ref();
    let path = dir.join(CHECKPOINT_META);
    let text = fs::read_to_string(&path).map_err(|e| MilError::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let mut model = build_model(&meta.config, meta.seed)?;
    if meta.params.len() != model.params().len() {
        return Err(MilError::InvalidConfig(format!(
            "checkpoint lists {} parameters, model {} has {}",
            meta.params.len(),
            meta.config.model_name,
            model.params().len()
        )));
    }
    for entry in &meta.params {
        let id = model.params().find(&entry.name).ok_or_else(|| {
            MilError::InvalidConfig(format!("unknown parameter `{}` in checkpoint", entry.name))
        })?;
        let ppath = dir.join(PARAM_DIR).join(format!("{}.milt", entry.name));
        let value = read_array(&ppath)?
            .into_f32()
            .and_then(|a| a.into_dimensionality::<Ix2>().ok())
            .ok_or_else(|| {
                MilError::UnrecognizedArrayFile(format!(
                    "{}: expected float32 matrix",
                    ppath.display()
                ))
            })?;
        let target = model.params_mut().get_mut(id);
        if value.dim() != target.dim() {
            return Err(MilError::Shape(format!(
                "parameter `{}` is {:?} on disk, model expects {:?}",
                entry.name,
                value.dim(),
                target.dim()
            )));
        }
        *target = value.mapv(f64::from);
    }
    Ok((model, meta))
}
