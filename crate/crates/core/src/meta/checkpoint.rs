use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::store::ParameterStore;
use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::scalar::Scalar;
use crate::tensor::{NamedTensors, Tensor};

pub const CHECKPOINT_FORMAT: &str = "par-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: TrainConfig,
    tensors: BTreeMap<String, StoredTensor>,
}

pub fn checkpoint_to_string<S: Scalar>(store: &ParameterStore<S>, cfg: &TrainConfig) -> Result<String> {
    let tensors = store
        .named("")
        .into_iter()
        .map(|(name, t)| {
            let t = t.to_f64();
            (
                name,
                StoredTensor {
                    shape: t.shape().to_vec(),
                    data: t.into_data(),
                },
            )
        })
        .collect();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        tensors,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn checkpoint_from_str<S: Scalar>(text: &str) -> Result<(ParameterStore<S>, TrainConfig)> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "expected {CHECKPOINT_FORMAT} version {CHECKPOINT_VERSION}, found {} version {}",
            file.format, file.version
        )));
    }
    file.config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;
    let mut named = NamedTensors::new();
    for (name, t) in file.tensors {
        let t = Tensor::new(t.shape, t.data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        named.insert(name, Tensor::from_f64(&t));
    }
    let mut store = ParameterStore::init(&file.config, &mut rand::rngs::mock::StepRng::new(0, 0));
    let expected = store.named("");
    if let Some(extra) = named.keys().find(|k| !expected.contains_key(*k)) {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    store
        .load_named("", &named)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((store, file.config))
}

pub fn save_checkpoint<S: Scalar>(path: &Path, store: &ParameterStore<S>, cfg: &TrainConfig) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(store, cfg)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(ParameterStore<S>, TrainConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
