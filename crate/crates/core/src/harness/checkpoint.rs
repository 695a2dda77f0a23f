//! Checkpoints: `manifest.json` plus little-endian `f32` tensors in `params.bin`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{ArraySlot, Denoiser};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::nn::{AdamState, ParameterStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: u64,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: RunConfig,
    pub iteration: u64,
    pub adam_step: u64,
    pub arrays: Vec<ArraySlot>,
    pub template_nodes: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub denoiser: Denoiser<f32>,
    pub adam: AdamState<f32>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Writes a checkpoint directory.
pub fn save_checkpoint(
    dir: &Path,
    config: &RunConfig,
    iteration: u64,
    denoiser: &Denoiser<f32>,
    adam: &AdamState<f32>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, t: &Tensor<f32>| {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
            dtype: "f32".into(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in denoiser.params.iter() {
        push(name.to_string(), t);
    }
    for (i, (name, _)) in denoiser.params.iter().enumerate() {
        push(format!("{ADAM_M}{name}"), &adam.m[i]);
        push(format!("{ADAM_V}{name}"), &adam.v[i]);
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        config: config.clone(),
        iteration,
        adam_step: adam.step,
        arrays: denoiser.arrays.clone(),
        template_nodes: denoiser.template_nodes,
        tensors,
    };
    let mpath = dir.join(MANIFEST);
    let ppath = dir.join(PARAMS);
    std::fs::write(&ppath, &blob).map_err(|e| Error::io(&ppath, e))?;
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Accepts a checkpoint directory or the path of its manifest.
pub fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|f| f == MANIFEST) {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let dir = checkpoint_dir(path);
    let mpath = dir.join(MANIFEST);
    let ppath = dir.join(PARAMS);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: mpath.clone(),
        message: e.to_string(),
    })?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format {
            path: mpath,
            message: format!("unsupported checkpoint version {}", manifest.version),
        });
    }
    let blob = std::fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let mut params = ParameterStore::<f32>::new();
    let mut moments = std::collections::HashMap::new();
    for t in &manifest.tensors {
        if t.dtype != "f32" {
            return Err(Error::Format {
                path: mpath.clone(),
                message: format!("tensor {} has unsupported dtype {}", t.name, t.dtype),
            });
        }
        let len: usize = t.shape.iter().product();
        let start = t.offset as usize;
        let end = start + 4 * len;
        let bytes = blob.get(start..end).ok_or_else(|| Error::Format {
            path: ppath.clone(),
            message: format!("tensor {} runs past the end of the file", t.name),
        })?;
        let data: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let tensor = Tensor::new(&t.shape, data)?;
        if t.name.starts_with(ADAM_M) || t.name.starts_with(ADAM_V) {
            moments.insert(t.name.clone(), tensor);
        } else {
            params.insert(&t.name, tensor)?;
        }
    }
    let cfg = &manifest.config;
    let denoiser = Denoiser::from_parts(cfg.model.clone(), manifest.arrays.clone(), manifest.template_nodes, params)?;
    let mut adam = AdamState::new(&denoiser.params, cfg.optim.lr);
    adam.clip = Some(cfg.optim.clip);
    adam.step = manifest.adam_step;
    for (i, (name, _)) in denoiser.params.iter().enumerate() {
        let missing = || Error::Format {
            path: mpath.clone(),
            message: format!("optimizer state for {name} is missing"),
        };
        adam.m[i] = moments.remove(&format!("{ADAM_M}{name}")).ok_or_else(missing)?;
        adam.v[i] = moments.remove(&format!("{ADAM_V}{name}")).ok_or_else(missing)?;
    }
    Ok(Checkpoint {
        manifest,
        denoiser,
        adam,
    })
}
