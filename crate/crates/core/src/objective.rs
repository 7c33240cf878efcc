//! Imputation and recommendation losses.
//!
//! Per position, flagged fields contribute
//!   item / brand: `-log p[target]`
//!   category:     binary cross-entropy averaged over the `N_c` categories
//!   title / desc: squared L2 error (summed, not averaged)
//! and the sequence loss divides the sum by the sequence length `n`.
//! Log arguments are floored at [`LOG_FLOOR`].

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::FieldKind;
use crate::masking::{MaskedSequence, Target};
use crate::model::{FieldOutputs, ModelParams};
use crate::scalar::{lit, Scalar};
use crate::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Every flagged field counts.
    Mii,
    /// Only flagged item IDs count.
    Rec,
}

impl LossKind {
    fn counts(self, field: FieldKind) -> bool {
        self == LossKind::Mii || field == FieldKind::Item
    }
}

/// Loss of one sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// `(1/n) * sum(sums)`.
    pub total: f64,
    /// Unnormalised per-field sums in (i, c, b, t, d) order.
    pub sums: [f64; 5],
    /// Number of contributing flags per field.
    pub counts: [usize; 5],
    pub n: usize,
}

impl LossBreakdown {
    fn new(sums: [f64; 5], counts: [usize; 5], n: usize) -> Self {
        let total = if n == 0 { 0.0 } else { sums.iter().sum::<f64>() / n as f64 };
        LossBreakdown { total, sums, counts, n }
    }

    /// Contribution of `field` to `total`.
    pub fn field_total(&self, field: FieldKind) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sums[field.offset()] / self.n as f64
        }
    }
}

/// Mean over sequences of the per-sequence losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub total: f64,
    pub fields: [f64; 5],
    pub sequences: usize,
}

impl BatchLoss {
    pub fn mean(losses: &[LossBreakdown]) -> Self {
        let mut out = BatchLoss { sequences: losses.len(), ..Default::default() };
        if losses.is_empty() {
            return out;
        }
        let m = losses.len() as f64;
        for l in losses {
            out.total += l.total / m;
            for f in FieldKind::ALL {
                out.fields[f.offset()] += l.field_total(f) / m;
            }
        }
        out
    }
}

fn nll(p: f64) -> f64 {
    -p.max(LOG_FLOOR).ln()
}

fn check_target(target: &Target, field: FieldKind, k: usize) -> Result<()> {
    let ok = match field {
        FieldKind::Item => target.item.is_some(),
        f => target.fields.is_present(f),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("position {k}: {field:?} is flagged but has no target")))
    }
}

fn bce<T: Scalar>(probs: ArrayView1<'_, T>, truth: &[u32]) -> f64 {
    let n_c = probs.len();
    let mut s = 0.0;
    for (c, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        s += if truth.contains(&(c as u32)) { nll(p) } else { nll(1.0 - p) };
    }
    s / n_c as f64
}

fn squared_error<T: Scalar>(pred: ArrayView1<'_, T>, truth: &[f32]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p.as_f64() - *t as f64).powi(2)).sum()
}

fn loss_from_outputs<T: Scalar>(outputs: &FieldOutputs<T>, batch: &MaskedSequence, kind: LossKind) -> Result<LossBreakdown> {
    let n = batch.len();
    if outputs.positions() != n {
        return Err(Error::InvalidInput(format!(
            "outputs cover {} positions, batch has {n}",
            outputs.positions()
        )));
    }
    let mut sums = [0.0; 5];
    let mut counts = [0; 5];
    for k in 0..n {
        let target = &batch.targets[k];
        for field in FieldKind::ALL {
            if !batch.flags[k][field.offset()] || !kind.counts(field) {
                continue;
            }
            check_target(target, field, k)?;
            let tf = &target.fields;
            let term = match field {
                FieldKind::Item => nll(outputs.item[[k, target.item.unwrap() as usize]].as_f64()),
                FieldKind::Category => bce(outputs.category.row(k), tf.categories.as_deref().unwrap()),
                FieldKind::Brand => nll(outputs.brand[[k, tf.brand.unwrap() as usize]].as_f64()),
                FieldKind::Title => squared_error(outputs.title.row(k), tf.title.as_deref().unwrap()),
                FieldKind::Description => squared_error(outputs.description.row(k), tf.description.as_deref().unwrap()),
            };
            sums[field.offset()] += term;
            counts[field.offset()] += 1;
        }
    }
    Ok(LossBreakdown::new(sums, counts, n))
}

/// Imputation loss over every flagged field.
pub fn mii_loss<T: Scalar>(outputs: &FieldOutputs<T>, batch: &MaskedSequence) -> Result<LossBreakdown> {
    loss_from_outputs(outputs, batch, LossKind::Mii)
}

/// Recommendation loss: flagged item IDs only; side-field flags are ignored.
pub fn rec_loss<T: Scalar>(outputs: &FieldOutputs<T>, batch: &MaskedSequence) -> Result<LossBreakdown> {
    loss_from_outputs(outputs, batch, LossKind::Rec)
}

pub fn loss<T: Scalar>(outputs: &FieldOutputs<T>, batch: &MaskedSequence, kind: LossKind) -> Result<LossBreakdown> {
    loss_from_outputs(outputs, batch, kind)
}

/// `acc += a b^T` for column vectors `a`, `b`.
fn add_outer<T: Scalar>(acc: &mut Array2<T>, a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) {
    let a = a.insert_axis(Axis(1));
    let b = b.insert_axis(Axis(0));
    general_mat_mul(T::one(), &a, &b, T::one(), acc);
}

/// Softmax cross-entropy head with tied weights `emb` (`e x V`). Returns
/// the loss term and accumulates gradients scaled by `w`.
fn softmax_head<T: Scalar>(
    h: ArrayView1<'_, T>,
    emb: &Array2<T>,
    target: usize,
    w: T,
    d_emb: &mut Array2<T>,
    d_h: ndarray::ArrayViewMut1<'_, T>,
) -> f64 {
    let mut z = h.dot(emb);
    crate::model::softmax_in_place(z.view_mut());
    let p_t = z[target].as_f64();
    if p_t > LOG_FLOOR {
        z[target] -= T::one();
        z.mapv_inplace(|v| v * w);
        add_outer(d_emb, h, z.view());
        let mut d_h = d_h;
        d_h += &emb.dot(&z);
    }
    nll(p_t)
}

/// Computes the loss directly from the final hidden rows (`5n x e`),
/// evaluating output heads only where a flag contributes, and returns the
/// gradient with respect to those rows. Head-parameter gradients are added
/// into `grads`.
pub(crate) fn head_loss_backward<T: Scalar>(
    hidden: ArrayView2<'_, T>,
    params: &ModelParams<T>,
    batch: &MaskedSequence,
    kind: LossKind,
    grads: &mut ModelParams<T>,
) -> Result<(LossBreakdown, Array2<T>)> {
    let n = batch.len();
    let mut d_hidden = Array2::<T>::zeros(hidden.raw_dim());
    let mut sums = [0.0; 5];
    let mut counts = [0; 5];
    let w = lit::<T>(1.0 / n as f64);
    let floor = lit::<T>(LOG_FLOOR);
    for k in 0..n {
        let target = &batch.targets[k];
        for field in FieldKind::ALL {
            if !batch.flags[k][field.offset()] || !kind.counts(field) {
                continue;
            }
            check_target(target, field, k)?;
            let r = 5 * k + field.offset();
            let h = hidden.row(r);
            let tf = &target.fields;
            let term = match field {
                FieldKind::Item => softmax_head(
                    h,
                    &params.item_emb,
                    target.item.unwrap() as usize,
                    w,
                    &mut grads.item_emb,
                    d_hidden.row_mut(r),
                ),
                FieldKind::Brand => softmax_head(
                    h,
                    &params.brand_emb,
                    tf.brand.unwrap() as usize,
                    w,
                    &mut grads.brand_emb,
                    d_hidden.row_mut(r),
                ),
                FieldKind::Category => {
                    let truth = tf.categories.as_deref().unwrap();
                    let p = h.dot(&params.category_emb).mapv(crate::model::sigmoid);
                    let term = bce(p.view(), truth);
                    let wc = w / lit(p.len() as f64);
                    let dz: Array1<T> = p
                        .iter()
                        .enumerate()
                        .map(|(c, &pc)| {
                            if truth.contains(&(c as u32)) {
                                if pc > floor { (pc - T::one()) * wc } else { T::zero() }
                            } else if T::one() - pc > floor {
                                pc * wc
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    add_outer(&mut grads.category_emb, h, dz.view());
                    let mut dh = d_hidden.row_mut(r);
                    dh += &params.category_emb.dot(&dz);
                    term
                }
                FieldKind::Title | FieldKind::Description => {
                    let (out, d_out, truth) = if field == FieldKind::Title {
                        (&params.title_out, &mut grads.title_out, tf.title.as_deref().unwrap())
                    } else {
                        (&params.desc_out, &mut grads.desc_out, tf.description.as_deref().unwrap())
                    };
                    let pred = out.dot(&h);
                    let term = squared_error(pred.view(), truth);
                    let two_w = w + w;
                    let diff: Array1<T> =
                        pred.iter().zip(truth).map(|(p, t)| (*p - T::from_f32(*t)) * two_w).collect();
                    add_outer(d_out, diff.view(), h);
                    let mut dh = d_hidden.row_mut(r);
                    dh += &diff.dot(out);
                    term
                }
            };
            sums[field.offset()] += term;
            counts[field.offset()] += 1;
        }
    }
    Ok((LossBreakdown::new(sums, counts, n), d_hidden))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ItemMeta, Step};
    use ndarray::{arr2, Array2};
    use std::sync::Arc;

    fn outputs(n: usize, n_items: usize, n_cat: usize, d: usize) -> FieldOutputs<f64> {
        FieldOutputs {
            item: Array2::from_elem((n, n_items + 1), 1.0 / (n_items + 1) as f64),
            category: Array2::from_elem((n, n_cat), 0.5),
            brand: Array2::from_elem((n, 3), 1.0 / 3.0),
            title: Array2::zeros((n, d)),
            description: Array2::zeros((n, d)),
        }
    }

    fn batch(n: usize) -> MaskedSequence {
        let steps: Vec<Step> = (0..n)
            .map(|i| Step {
                item: i as u32 + 1,
                fields: ItemMeta {
                    categories: Some(Arc::from(vec![0u32])),
                    brand: Some(1),
                    title: Some(Arc::from(vec![1.0f32, 2.0])),
                    description: Some(Arc::from(vec![0.5f32, -0.5])),
                },
            })
            .collect();
        MaskedSequence::unmasked(&steps)
    }

    fn flag(b: &mut MaskedSequence, k: usize, f: FieldKind) {
        let t = &mut b.targets[k];
        match f {
            FieldKind::Item => t.item = Some(b.inputs[k].item),
            FieldKind::Category => t.fields.categories = b.inputs[k].fields.categories.clone(),
            FieldKind::Brand => t.fields.brand = b.inputs[k].fields.brand,
            FieldKind::Title => t.fields.title = b.inputs[k].fields.title.clone(),
            FieldKind::Description => t.fields.description = b.inputs[k].fields.description.clone(),
        }
        b.flags[k][f.offset()] = true;
    }

    #[test]
    fn no_flags_no_loss() {
        let l = mii_loss(&outputs(3, 5, 2, 2), &batch(3)).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.counts, [0; 5]);
    }

    #[test]
    fn two_category_bce_is_log_two() {
        let mut b = batch(1);
        flag(&mut b, 0, FieldKind::Category);
        let l = mii_loss(&outputs(1, 5, 2, 2), &b).unwrap();
        let oracle = -(0.5f64.ln() + (1.0f64 - 0.5).ln()) / 2.0;
        assert!((l.sums[1] - oracle).abs() < 1e-12);
        assert!((l.sums[1] - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn text_term_is_a_sum_of_squares() {
        let mut b = batch(2);
        flag(&mut b, 1, FieldKind::Title);
        let mut o = outputs(2, 5, 2, 2);
        o.title = arr2(&[[0.0, 0.0], [0.0, 4.0]]);
        let l = mii_loss(&o, &b).unwrap();
        assert!((l.sums[3] - (1.0 + 4.0)).abs() < 1e-12);
        assert!((l.total - 5.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rec_loss_of_one_flag() {
        let mut b = batch(4);
        flag(&mut b, 2, FieldKind::Item);
        flag(&mut b, 1, FieldKind::Brand);
        let mut o = outputs(4, 5, 2, 2);
        o.item.row_mut(2).fill(0.0);
        o.item[[2, 3]] = (-2.0f64).exp();
        let l = rec_loss(&o, &b).unwrap();
        assert!((l.total - 0.5).abs() < 1e-12);
        assert_eq!(l.sums[2], 0.0);
        let m = mii_loss(&o, &b).unwrap();
        assert!(m.total > l.total);
    }

    #[test]
    fn certain_target_has_zero_loss_and_floor_keeps_it_finite() {
        let mut b = batch(1);
        flag(&mut b, 0, FieldKind::Item);
        let mut o = outputs(1, 5, 2, 2);
        o.item.fill(0.0);
        o.item[[0, 1]] = 1.0;
        assert_eq!(mii_loss(&o, &b).unwrap().total, 0.0);
        o.item[[0, 1]] = 0.0;
        let l = mii_loss(&o, &b).unwrap().total;
        assert!((l - 12.0 * std::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn flag_without_target_is_an_error() {
        let mut b = batch(1);
        b.flags[0][0] = true;
        assert!(mii_loss(&outputs(1, 5, 2, 2), &b).is_err());
    }

    #[test]
    fn batch_mean_ignores_duplication() {
        let a = LossBreakdown::new([1.0, 2.0, 0.0, 0.0, 0.0], [1, 1, 0, 0, 0], 3);
        let b = LossBreakdown::new([0.0, 0.0, 0.0, 4.0, 0.0], [0, 0, 0, 1, 0], 2);
        let once = BatchLoss::mean(&[a.clone(), b.clone()]);
        let twice = BatchLoss::mean(&[a.clone(), b.clone(), a, b]);
        assert!((once.total - twice.total).abs() < 1e-15);
        assert!((once.total - (1.0 + 2.0) / 2.0).abs() < 1e-12);
    }
}
