//! Checkpoint directories: a version tag, the configuration as TOML, and
//! weights (plus optional optimizer state) as safetensors keyed by parameter
//! path. Writes go to a temporary sibling directory that is renamed into
//! place.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::config::{ModelVariantConfig, StageConfig};
use crate::error::{PaecError, Result};
use crate::nn::Module;

pub const CHECKPOINT_VERSION: &str = "paec-checkpoint 1";
const VERSION_FILE: &str = "VERSION";
const CONFIG_FILE: &str = "config.toml";
const WEIGHTS_FILE: &str = "weights.safetensors";
const OPTIMIZER_FILE: &str = "optimizer.safetensors";
const STATE_FILE: &str = "state.json";

/// What the weights belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckpointKind {
    /// A complete variant; parameter paths start with `stage1.` / `stage2.`.
    Model { model: ModelVariantConfig },
    /// A single pretrained stage; parameter paths start with `stage.`.
    Stage {
        task: String,
        compress_p: f64,
        stage: StageConfig,
    },
}

pub type TensorMap = BTreeMap<String, Array2<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub weights: TensorMap,
    /// Optimizer moments, empty if not saved.
    pub optimizer: TensorMap,
    /// Free-form training state (step counter and the like).
    pub state: Option<serde_json::Value>,
}

fn ck_err(path: &Path, msg: impl ToString) -> PaecError {
    PaecError::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Copies every parameter of `m` into a map, keyed by `prefix` + path.
pub fn collect_weights(m: &dyn Module, prefix: &str) -> TensorMap {
    let mut out = TensorMap::new();
    m.visit(&mut |n, p| {
        out.insert(format!("{prefix}{n}"), p.value.clone());
    });
    out
}

/// Assigns tensors named `from_prefix + path` to the parameters of `m` at
/// `to_prefix + path`. Every parameter under `to_prefix` must be present with
/// the right shape.
pub fn assign_weights<M: Module + ?Sized>(
    m: &mut M,
    tensors: &TensorMap,
    from_prefix: &str,
    to_prefix: &str,
) -> Result<usize> {
    let mut problems = Vec::new();
    let mut assigned = 0;
    m.visit_mut(&mut |n, p| {
        let Some(rest) = n.strip_prefix(to_prefix) else { return };
        let key = format!("{from_prefix}{rest}");
        match tensors.get(&key) {
            Some(t) if t.dim() == p.value.dim() => {
                p.value.assign(t);
                assigned += 1;
            }
            Some(t) => problems.push(format!("{key}: shape {:?}, expected {:?}", t.dim(), p.value.dim())),
            None => problems.push(format!("{key}: missing")),
        }
    });
    if !problems.is_empty() {
        return Err(PaecError::shape(format!(
            "{} parameter(s) do not match: {}",
            problems.len(),
            problems.iter().take(5).cloned().collect::<Vec<_>>().join("; ")
        )));
    }
    Ok(assigned)
}

fn encode(tensors: &TensorMap) -> std::result::Result<Vec<u8>, safetensors::SafeTensorError> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, v)| {
            let data = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            (k.clone(), vec![v.nrows(), v.ncols()], data)
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(k, shape, data)| Ok((k.as_str(), TensorView::new(Dtype::F64, shape.clone(), data)?)))
        .collect::<std::result::Result<Vec<_>, safetensors::SafeTensorError>>()?;
    safetensors::tensor::serialize(views, None::<HashMap<String, String>>)
}

fn decode(path: &Path) -> Result<TensorMap> {
    let bytes = fs::read(path).map_err(|e| ck_err(path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ck_err(path, e))?;
    let mut out = TensorMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 || view.shape().len() != 2 {
            return Err(ck_err(path, format!("{name}: expected a 2-d f64 tensor")));
        }
        let data: Vec<f64> = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let arr = Array2::from_shape_vec((view.shape()[0], view.shape()[1]), data)
            .map_err(|e| ck_err(path, e))?;
        out.insert(name, arr);
    }
    Ok(out)
}

/// Writes `ck` to `dir`, replacing any previous checkpoint there.
pub fn save_checkpoint(dir: &Path, ck: &Checkpoint) -> Result<()> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir.file_name().ok_or_else(|| ck_err(dir, "not a directory name"))?;
    let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    fs::write(tmp.join(VERSION_FILE), format!("{CHECKPOINT_VERSION}\n"))?;
    let cfg = toml::to_string(&ck.kind).map_err(|e| ck_err(dir, e))?;
    fs::write(tmp.join(CONFIG_FILE), cfg)?;
    fs::write(tmp.join(WEIGHTS_FILE), encode(&ck.weights).map_err(|e| ck_err(dir, e))?)?;
    if !ck.optimizer.is_empty() {
        fs::write(tmp.join(OPTIMIZER_FILE), encode(&ck.optimizer).map_err(|e| ck_err(dir, e))?)?;
    }
    if let Some(state) = &ck.state {
        fs::write(tmp.join(STATE_FILE), serde_json::to_string_pretty(state).map_err(|e| ck_err(dir, e))?)?;
    }
    // Swap in: move the old directory aside first so a crash leaves either
    // the old or the new checkpoint intact.
    let old: Option<PathBuf> = if dir.exists() {
        let old = parent.join(format!(".{}.old-{}", name.to_string_lossy(), std::process::id()));
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        fs::rename(dir, &old)?;
        Some(old)
    } else {
        None
    };
    fs::rename(&tmp, dir)?;
    if let Some(old) = old {
        fs::remove_dir_all(old)?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let version = fs::read_to_string(dir.join(VERSION_FILE)).map_err(|e| ck_err(dir, format!("no version tag: {e}")))?;
    if version.trim() != CHECKPOINT_VERSION {
        return Err(ck_err(dir, format!("unsupported version {:?}", version.trim())));
    }
    let cfg = fs::read_to_string(dir.join(CONFIG_FILE)).map_err(|e| ck_err(dir, e))?;
    let kind: CheckpointKind = toml::from_str(&cfg).map_err(|e| ck_err(dir, e))?;
    match &kind {
        CheckpointKind::Model { model } => model.validate()?,
        CheckpointKind::Stage { stage, .. } => stage.validate()?,
    }
    let weights = decode(&dir.join(WEIGHTS_FILE))?;
    let opt_path = dir.join(OPTIMIZER_FILE);
    let optimizer = if opt_path.exists() { decode(&opt_path)? } else { TensorMap::new() };
    let state_path = dir.join(STATE_FILE);
    let state = if state_path.exists() {
        let text = fs::read_to_string(&state_path)?;
        Some(serde_json::from_str(&text).map_err(|e| ck_err(dir, e))?)
    } else {
        None
    };
    Ok(Checkpoint {
        kind,
        weights,
        optimizer,
        state,
    })
}

impl super::network::Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Model { model: self.cfg.clone() },
            weights: collect_weights(self, ""),
            optimizer: TensorMap::new(),
            state: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let CheckpointKind::Model { model } = &ck.kind else {
            return Err(PaecError::Config(
                "checkpoint holds a single pretrained stage, not a full model".into(),
            ));
        };
        let mut m = Self::new(model, 0)?;
        assign_weights(&mut m, &ck.weights, "", "")?;
        Ok(m)
    }
}
