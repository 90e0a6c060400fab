//! JSON checkpoints: the training config, named parameter arrays, the
//! step they were taken at and the evaluation loss that selected them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::DenseArray;
use crate::harness::TrainConfig;
use crate::heads::{HeadError, Model, Task};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint format_version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] HeadError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub task: Task,
    pub config: TrainConfig,
    pub params: BTreeMap<String, NamedArray>,
    pub step: usize,
    /// `None` when the model was never evaluated.
    pub eval_loss: Option<f64>,
}

impl ModelCheckpoint {
    pub fn from_model(config: TrainConfig, model: &Model, step: usize, eval_loss: Option<f64>) -> Self {
        let params = model
            .params()
            .to_named()
            .into_iter()
            .map(|(name, a)| {
                let shape = a.shape().to_vec();
                (name, NamedArray { shape, values: a.into_data() })
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            task: config.task,
            config,
            params,
            step,
            eval_loss: eval_loss.filter(|l| l.is_finite()),
        }
    }

    /// Rebuilds the model the checkpoint was taken from.
    pub fn to_model(&self) -> Result<Model, CheckpointError> {
        let mut model = Model::new(self.config.model_spec(), self.config.seed)?;
        let named = self
            .params
            .iter()
            .map(|(name, a)| {
                DenseArray::new(a.shape.clone(), a.values.clone())
                    .map(|v| (name.clone(), v))
                    .map_err(|e| CheckpointError::Corrupt(format!("parameter {name}: {e}")))
            })
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        model
            .params_mut()
            .load_named(&named)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoints always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let version = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| CheckpointError::Corrupt("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let ckpt: Self = serde_json::from_str(text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if ckpt.task != ckpt.config.task {
            return Err(CheckpointError::Corrupt(format!(
                "task tag `{}` disagrees with config task `{}`",
                ckpt.task, ckpt.config.task
            )));
        }
        for (name, a) in &ckpt.params {
            if a.shape.iter().product::<usize>() != a.values.len() {
                return Err(CheckpointError::Corrupt(format!("parameter {name}: shape {:?} does not match {} values", a.shape, a.values.len())));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
