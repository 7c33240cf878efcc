use std::path::Path;

use super::adam::Adam;
use super::train::{config_hash, TrainConfig, TrainHistory, TrainState};
use crate::model::{read_tensor_file, write_tensor_file, ModelConfig, TensorFile, VocabSizes};
use crate::{Error, Result};

/// Contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    pub state: TrainState,
}

/// Writes parameters, Adam moments, best parameters and history. The file
/// is written next to `path` and renamed into place.
pub fn save_checkpoint(path: &Path, state: &TrainState, model: &ModelConfig, train: &TrainConfig) -> Result<()> {
    let mut file = TensorFile::default();
    let meta = |k: &str, v: String, f: &mut TensorFile| {
        f.meta.insert(k.to_string(), v);
    };
    meta("config_hash", config_hash(model, train), &mut file);
    meta("master_seed", train.master_seed.to_string(), &mut file);
    meta("model_config", serde_json::to_string(model)?, &mut file);
    meta("train_config", serde_json::to_string(train)?, &mut file);
    meta("vocab", serde_json::to_string(&state.params.vocab)?, &mut file);
    meta("epochs_done", state.epochs_done.to_string(), &mut file);
    meta("global_step", state.global_step.to_string(), &mut file);
    meta("adam_step", state.adam.step.to_string(), &mut file);
    meta("best_mrr", serde_json::to_string(&state.best_mrr)?, &mut file);
    meta("history", serde_json::to_string(&state.history)?, &mut file);
    file.insert_params("params.", &state.params);
    file.insert_params("best.", &state.best_params);
    file.insert_params("adam.m.", &state.adam.m);
    file.insert_params("adam.v.", &state.adam.v);

    let tmp = path.with_extension("partial");
    write_tensor_file(&tmp, &file)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parse<T: std::str::FromStr>(file: &TensorFile, key: &str) -> Result<T> {
    file.meta_value(key)?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("unreadable {key:?} entry")))
}

/// Reads a checkpoint without checking it against any configuration.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = read_tensor_file(path)?;
    let model: ModelConfig = serde_json::from_str(file.meta_value("model_config")?)?;
    let train: TrainConfig = serde_json::from_str(file.meta_value("train_config")?)?;
    let vocab: VocabSizes = serde_json::from_str(file.meta_value("vocab")?)?;
    let history: TrainHistory = serde_json::from_str(file.meta_value("history")?)?;
    let best_mrr: Option<f64> = serde_json::from_str(file.meta_value("best_mrr")?)?;
    let stored_hash = file.meta_value("config_hash")?.to_string();
    if stored_hash != config_hash(&model, &train) {
        return Err(Error::Checkpoint("stored configuration does not match its hash".into()));
    }
    let state = TrainState {
        params: file.extract_params("params.", &model, vocab)?,
        best_params: file.extract_params("best.", &model, vocab)?,
        adam: Adam {
            m: file.extract_params("adam.m.", &model, vocab)?,
            v: file.extract_params("adam.v.", &model, vocab)?,
            step: parse(&file, "adam_step")?,
        },
        epochs_done: parse(&file, "epochs_done")?,
        global_step: parse(&file, "global_step")?,
        best_mrr,
        history,
    };
    Ok(Checkpoint { model, train, config_hash: stored_hash, state })
}

/// Reads a checkpoint for resuming a run with `model` and `train`.
pub fn load_checkpoint(path: &Path, model: &ModelConfig, train: &TrainConfig) -> Result<TrainState> {
    let ckpt = read_checkpoint(path)?;
    let current = config_hash(model, train);
    if ckpt.config_hash != current {
        return Err(Error::ConfigHashMismatch { stored: ckpt.config_hash, current });
    }
    Ok(ckpt.state)
}
