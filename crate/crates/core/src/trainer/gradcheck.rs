use rand::Rng;

use crate::data::{synth_generate, FieldKind, Pattern, SyntheticSpec};
use crate::masking::{apply_mii_mask, MaskedSequence};
use crate::model::{forward_outputs, init_params, loss_and_grad, ModelConfig, ModelParams};
use crate::objective::{mii_loss, LossKind};
use crate::{seed, Error, Result};

/// Setup of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub model: ModelConfig,
    pub seq_len: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub n_brands: usize,
    pub step: f64,
    /// Entries checked per tensor; smaller tensors are checked in full.
    pub max_entries_per_tensor: usize,
    /// Multiplies the analytic gradient of every tensor whose name ends with
    /// the given suffix, to confirm the check notices a wrong gradient.
    pub corrupt: Option<(String, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            model: ModelConfig {
                embedding_size: 8,
                heads: 2,
                layers: 2,
                dropout_rate: 0.0,
                max_len: 6,
                text_dim: 16,
                ..Default::default()
            },
            seq_len: 4,
            n_items: 20,
            n_categories: 6,
            n_brands: 5,
            step: 1e-5,
            max_entries_per_tensor: 256,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error per tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub entries_checked: usize,
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// A masked tiny sequence in which every field kind is flagged at least once.
fn tiny_batch(opts: &GradCheckOptions, seed_value: u64) -> Result<(crate::data::Catalog, MaskedSequence)> {
    let spec = SyntheticSpec {
        n_items: opts.n_items,
        n_categories: opts.n_categories,
        n_brands: opts.n_brands,
        n_sequences: 1,
        min_len: opts.seq_len,
        max_len: opts.seq_len,
        pattern: Pattern::Random,
        side_missing_rate: 0.25,
        text_dim: opts.model.text_dim,
        seed: seed_value,
    };
    let (catalog, seqs) = synth_generate(&spec)?;
    let mut rng = seed::rng(seed_value, "gradcheck-mask", &[]);
    for _ in 0..1000 {
        let batch = apply_mii_mask(&seqs[0].steps, 0.5, &mut rng)?;
        let covered = FieldKind::ALL.iter().all(|f| batch.flags.iter().any(|fl| fl[f.offset()]));
        let all = batch.flag_count() == 5 * batch.len();
        if covered && !all {
            return Ok((catalog, batch));
        }
    }
    Err(Error::InvalidInput("could not draw a mask covering every field".into()))
}

fn loss_at(params: &ModelParams<f64>, batch: &MaskedSequence) -> Result<f64> {
    Ok(mii_loss(&forward_outputs(params, batch)?, batch)?.total)
}

/// Compares analytic gradients of the imputation loss with central finite
/// differences over every trainable tensor, in double precision.
pub fn grad_check_with(opts: &GradCheckOptions, seed_value: u64) -> Result<GradCheckReport> {
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {}", opts.step)));
    }
    if opts.model.dropout_rate != 0.0 {
        return Err(Error::InvalidInput("gradient check needs dropout disabled".into()));
    }
    opts.model.validate()?;
    let (catalog, batch) = tiny_batch(opts, seed_value)?;
    let params: ModelParams<f64> = init_params(&opts.model, &catalog, seed_value)?;

    let mut grads = params.zeros_like();
    loss_and_grad(&params, &batch, LossKind::Mii, None, &mut grads)?;
    if let Some((suffix, factor)) = &opts.corrupt {
        for (name, mut g) in grads.tensors_mut() {
            if name.ends_with(suffix.as_str()) {
                g.mapv_inplace(|v| v * factor);
            }
        }
    }

    let mut rng = seed::rng(seed_value, "gradcheck-entries", &[]);
    let analytic = grads.tensors();
    let n_tensors = analytic.len();
    let mut per_tensor = Vec::with_capacity(n_tensors);
    let mut entries_checked = 0;
    let mut probe = params.clone();
    for t in 0..n_tensors {
        let (name, g) = &analytic[t];
        let g: Vec<f64> = g.iter().copied().collect();
        let len = g.len();
        let entries: Vec<usize> = if len <= opts.max_entries_per_tensor {
            (0..len).collect()
        } else {
            (0..opts.max_entries_per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        let mut worst = 0.0f64;
        for idx in entries {
            let original = flat_get(&probe, t, idx);
            flat_set(&mut probe, t, idx, original + opts.step);
            let plus = loss_at(&probe, &batch)?;
            flat_set(&mut probe, t, idx, original - opts.step);
            let minus = loss_at(&probe, &batch)?;
            flat_set(&mut probe, t, idx, original);
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(g[idx], numeric));
            entries_checked += 1;
        }
        per_tensor.push((name.clone(), worst));
    }
    let max_relative_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport { max_relative_error, per_tensor, entries_checked })
}

fn flat_get(p: &ModelParams<f64>, tensor: usize, idx: usize) -> f64 {
    let t = &p.tensors()[tensor].1;
    *t.iter().nth(idx).unwrap()
}

fn flat_set(p: &mut ModelParams<f64>, tensor: usize, idx: usize, v: f64) {
    let mut ts = p.tensors_mut();
    *ts[tensor].1.iter_mut().nth(idx).unwrap() = v;
}

/// Max relative gradient error for `model` on a random tiny batch.
pub fn grad_check(model: &ModelConfig, seed_value: u64) -> Result<f64> {
    let opts = GradCheckOptions { model: model.clone(), ..Default::default() };
    Ok(grad_check_with(&opts, seed_value)?.max_relative_error)
}
