use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{clip_gradients, Adam};
use crate::data::{Catalog, FieldKind, Split, SplitDataset};
use crate::eval::eval_ranking;
use crate::masking::{apply_mii_mask, apply_rec_mask};
use crate::model::{init_params, loss_and_grad, ModelConfig, ModelParams};
use crate::objective::{BatchLoss, LossBreakdown, LossKind};
use crate::{seed, Error, Result};

/// Sequences per gradient-accumulation chunk. Fixed so that the reduction
/// order does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Imputation masks over every field.
    Mii,
    /// Whole-item masks, item-ID loss only.
    Rec,
    /// `Mii` for `epochs`, then `Rec` for `finetune_epochs` starting from
    /// the best imputation-phase parameters.
    MiiThenRec,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mii" => Ok(Regime::Mii),
            "rec" => Ok(Regime::Rec),
            "mii_then_rec" => Ok(Regime::MiiThenRec),
            _ => Err(Error::Config(format!("unknown regime {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_min: f64,
    pub clip_max: f64,
    pub mask_probability: f64,
    pub regime: Regime,
    pub finetune_epochs: usize,
    pub master_seed: u64,
    /// Stops after this many optimiser steps in total, mid-epoch if needed.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 100,
            clip_min: -5.0,
            clip_max: 5.0,
            mask_probability: 0.5,
            regime: Regime::Mii,
            finetune_epochs: 0,
            master_seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.clip_min.is_finite() && self.clip_max.is_finite() && self.clip_min < self.clip_max) {
            return Err(Error::Config(format!("bad clip range [{}, {}]", self.clip_min, self.clip_max)));
        }
        if !(self.mask_probability > 0.0 && self.mask_probability <= 1.0) {
            return Err(Error::Config(format!("mask probability {} not in (0,1]", self.mask_probability)));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        match self.regime {
            Regime::MiiThenRec => self.epochs + self.finetune_epochs,
            _ => self.epochs,
        }
    }

    fn phase(&self, epoch: usize) -> LossKind {
        match self.regime {
            Regime::Mii => LossKind::Mii,
            Regime::Rec => LossKind::Rec,
            Regime::MiiThenRec if epoch < self.epochs => LossKind::Mii,
            Regime::MiiThenRec => LossKind::Rec,
        }
    }
}

/// Fingerprint of everything that shapes a training trajectory. Epoch
/// counts and the step budget are left out so a run can be extended.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut t = train.clone();
    t.epochs = 0;
    t.finetune_epochs = 0;
    t.max_steps = None;
    let json = serde_json::json!({ "model": model, "train": t });
    hex::encode(&Sha256::digest(json.to_string().as_bytes())[..16])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: LossKind,
    /// Optimiser steps taken so far, all phases included.
    pub steps: usize,
    pub loss: f64,
    /// Per-field mean loss in (i, c, b, t, d) order.
    pub field_loss: [f64; 5],
    pub val_hr1: Option<f64>,
    pub val_hr5: Option<f64>,
    pub val_hr10: Option<f64>,
    pub val_mrr: Option<f64>,
    pub wall_seconds: f64,
    pub rng_digest: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,phase,steps,loss,loss_i,loss_c,loss_b,loss_t,loss_d,val_hr1,val_hr5,val_hr10,val_mrr,wall_seconds,rng_digest\n",
        );
        for r in &self.epochs {
            let phase = match r.phase {
                LossKind::Mii => "mii",
                LossKind::Rec => "rec",
            };
            let fields: Vec<String> = r.field_loss.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!(
                "{},{phase},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.steps,
                r.loss,
                fields.join(","),
                opt(r.val_hr1),
                opt(r.val_hr5),
                opt(r.val_hr10),
                opt(r.val_mrr),
                r.wall_seconds,
                r.rng_digest
            ));
        }
        out
    }

    pub fn best_mrr(&self) -> Option<f64> {
        self.epochs.iter().filter_map(|r| r.val_mrr).fold(None, |b, v| Some(b.map_or(v, |b: f64| b.max(v))))
    }

    /// Epoch index at which the recommendation fine-tuning phase began.
    pub fn regime_boundary(&self) -> Option<usize> {
        self.epochs.windows(2).find(|w| w[0].phase != w[1].phase).map(|w| w[1].epoch)
    }

    /// Equality ignoring wall-clock time.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                let mut b = b.clone();
                b.wall_seconds = a.wall_seconds;
                *a == b
            })
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adam: Adam<f32>,
    pub epochs_done: usize,
    pub global_step: usize,
    pub best_params: ModelParams<f32>,
    pub best_mrr: Option<f64>,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(params: ModelParams<f32>) -> Self {
        TrainState {
            adam: Adam::new(&params),
            best_params: params.clone(),
            params,
            epochs_done: 0,
            global_step: 0,
            best_mrr: None,
            history: TrainHistory::default(),
        }
    }

    pub fn fresh(catalog: &Catalog, model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let params = init_params(model, catalog, seed::derive(train.master_seed, "init", &[]))?;
        Ok(Self::new(params))
    }
}

struct ChunkResult {
    grads: ModelParams<f32>,
    losses: Vec<LossBreakdown>,
}

fn run_chunk(
    params: &ModelParams<f32>,
    dataset: &SplitDataset,
    seqs: &[usize],
    kind: LossKind,
    cfg: &TrainConfig,
    step: usize,
) -> Result<ChunkResult> {
    let mut grads = params.zeros_like();
    let mut losses = Vec::with_capacity(seqs.len());
    let max_len = params.config.max_len;
    for &i in seqs {
        let prefix = dataset.train_prefix(i);
        let prefix = &prefix[prefix.len().saturating_sub(max_len)..];
        let ids = [step as u64, i as u64];
        let mut rng = seed::rng(cfg.master_seed, "mask", &ids);
        let batch = match kind {
            LossKind::Mii => apply_mii_mask(prefix, cfg.mask_probability, &mut rng)?,
            LossKind::Rec => apply_rec_mask(prefix, cfg.mask_probability, &mut rng)?,
        };
        let dropout = (params.config.dropout_rate > 0.0).then(|| seed::derive(cfg.master_seed, "dropout", &ids));
        losses.push(loss_and_grad(params, &batch, kind, dropout, &mut grads)?);
    }
    Ok(ChunkResult { grads, losses })
}

/// One optimiser step over `batch`; returns the per-sequence losses.
fn train_step(
    state: &mut TrainState,
    dataset: &SplitDataset,
    batch: &[usize],
    kind: LossKind,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<LossBreakdown>> {
    state.global_step += 1;
    let step = state.global_step;
    let params = &state.params;
    let chunks: Vec<ChunkResult> = batch
        .par_chunks(CHUNK)
        .map(|c| run_chunk(params, dataset, c, kind, cfg, step))
        .collect::<Result<_>>()?;
    let mut chunks = chunks.into_iter();
    let first = chunks.next().expect("non-empty batch");
    let mut grads = first.grads;
    let mut losses = first.losses;
    for c in chunks {
        grads.add_assign(&c.grads);
        losses.extend(c.losses);
    }
    if losses.iter().any(|l| !l.total.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch, step });
    }
    grads.scale(1.0 / batch.len() as f32);
    clip_gradients(&mut grads, cfg.clip_min, cfg.clip_max);
    state.adam.update(&mut state.params, &grads, cfg.learning_rate);
    Ok(losses)
}

/// Trains from scratch and returns the parameters with the best
/// validation MRR together with the per-epoch history.
pub fn train(
    dataset: &SplitDataset,
    catalog: &Catalog,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    let state = train_from(dataset, catalog, model, cfg, None, |_| Ok(()))?;
    Ok((state.best_params, state.history))
}

/// Runs (or resumes) training. `on_epoch` sees the state after every
/// completed epoch, e.g. to write a checkpoint.
pub fn train_from(
    dataset: &SplitDataset,
    catalog: &Catalog,
    model: &ModelConfig,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    model.validate()?;
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::fresh(catalog, model, cfg)?,
    };
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    while state.epochs_done < cfg.total_epochs() && state.global_step < budget {
        let epoch = state.epochs_done;
        let started = Instant::now();
        let kind = cfg.phase(epoch);
        if cfg.regime == Regime::MiiThenRec && epoch == cfg.epochs && epoch > 0 {
            state.params = state.best_params.clone();
            state.adam = Adam::new(&state.params);
        }
        let shuffle_seed = seed::derive(cfg.master_seed, "shuffle", &[epoch as u64]);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut seed::rng(shuffle_seed, "order", &[]));
        let mut losses = Vec::with_capacity(order.len());
        for batch in order.chunks(cfg.batch_size) {
            if state.global_step >= budget {
                break;
            }
            losses.extend(train_step(&mut state, dataset, batch, kind, cfg, epoch)?);
        }
        let val = eval_ranking(&state.params, dataset, Split::Validation)?;
        let improved = match (val.mrr, state.best_mrr) {
            (Some(m), Some(b)) => m > b,
            (Some(_), None) => true,
            (None, _) => state.history.epochs.is_empty(),
        };
        if improved {
            state.best_mrr = val.mrr;
            state.best_params = state.params.clone();
        }
        let mean = BatchLoss::mean(&losses);
        state.history.epochs.push(EpochRecord {
            epoch,
            phase: kind,
            steps: state.global_step,
            loss: mean.total,
            field_loss: FieldKind::ALL.map(|f| mean.fields[f.offset()]),
            val_hr1: val.hr1,
            val_hr5: val.hr5,
            val_hr10: val.hr10,
            val_mrr: val.mrr,
            wall_seconds: started.elapsed().as_secs_f64(),
            rng_digest: seed::seed_digest(shuffle_seed),
        });
        state.epochs_done += 1;
        log::info!("epoch {epoch} loss {:.4} val mrr {:?}", mean.total, val.mrr);
        on_epoch(&state)?;
    }
    Ok(state)
}
