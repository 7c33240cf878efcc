use ndarray::{s, Array2, ArrayView2};

use super::ModelParams;
use crate::data::{FieldKind, MISS_BRAND};
use crate::masking::MaskedSequence;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Field-token hidden states, `5*max_len x e`, position-major with fields
/// in (i, c, b, t, d) order. Rows past `valid_len` are padding and hold
/// zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenGrid<T> {
    pub rows: Array2<T>,
    pub valid_len: usize,
}

impl<T: Scalar> HiddenGrid<T> {
    pub fn row_index(position: usize, field: FieldKind) -> usize {
        5 * position + field.offset()
    }

    pub fn valid(&self) -> ArrayView2<'_, T> {
        self.rows.slice(s![..self.valid_len, ..])
    }

    pub fn positions(&self) -> usize {
        self.valid_len / 5
    }

    pub(crate) fn from_valid(valid: Array2<T>, total_rows: usize) -> Self {
        let valid_len = valid.nrows();
        let mut rows = Array2::zeros((total_rows, valid.ncols()));
        rows.slice_mut(s![..valid_len, ..]).assign(&valid);
        HiddenGrid { rows, valid_len }
    }
}

/// Text inputs of the title and description fields as `n x d` matrices.
fn text_inputs<T: Scalar>(batch: &MaskedSequence, params: &ModelParams<T>) -> Result<(Array2<T>, Array2<T>)> {
    let n = batch.len();
    let d = params.config.text_dim;
    let mut titles = Array2::zeros((n, d));
    let mut descs = Array2::zeros((n, d));
    for (k, step) in batch.inputs.iter().enumerate() {
        for (mat, v) in [(&mut titles, &step.fields.title), (&mut descs, &step.fields.description)] {
            let mut row = mat.row_mut(k);
            match v {
                Some(v) => {
                    if v.len() != d {
                        return Err(Error::InvalidInput(format!(
                            "position {k}: text vector of length {} (expected {d})",
                            v.len()
                        )));
                    }
                    row.iter_mut().zip(v.iter()).for_each(|(r, x)| *r = T::from_f32(*x));
                }
                None => row.assign(&params.miss_text),
            }
        }
    }
    Ok((titles, descs))
}

fn check_indices<T>(batch: &MaskedSequence, params: &ModelParams<T>) -> Result<()> {
    let v = params.vocab;
    for (k, step) in batch.inputs.iter().enumerate() {
        if step.item as usize > v.n_items {
            return Err(Error::InvalidInput(format!("position {k}: item {} out of range", step.item)));
        }
        if let Some(cats) = &step.fields.categories {
            if let Some(c) = cats.iter().find(|&&c| c as usize >= v.n_categories) {
                return Err(Error::InvalidInput(format!("position {k}: category {c} out of range")));
            }
        }
        if let Some(b) = step.fields.brand {
            if b as usize > v.n_brands {
                return Err(Error::InvalidInput(format!("position {k}: brand {b} out of range")));
            }
        }
    }
    Ok(())
}

/// `h^x_k = e^x_k + f^x + p_k` for every field token of the batch.
///
/// Categories embed as the sum of their columns (zero when Missing or
/// masked); titles and descriptions are projected through `title_proj`
/// and `desc_proj`, with the missing-text vector standing in for absent
/// values.
pub fn embed<T: Scalar>(batch: &MaskedSequence, params: &ModelParams<T>) -> Result<HiddenGrid<T>> {
    let cfg = &params.config;
    let n = batch.len();
    if n > cfg.max_len {
        return Err(Error::InvalidInput(format!("sequence length {n} exceeds max_len {}", cfg.max_len)));
    }
    check_indices(batch, params)?;
    let e = cfg.embedding_size;
    let (titles, descs) = text_inputs(batch, params)?;
    let title_emb = titles.dot(&params.title_proj.t());
    let desc_emb = descs.dot(&params.desc_proj.t());

    let mut h = Array2::<T>::zeros((5 * n, e));
    for (k, step) in batch.inputs.iter().enumerate() {
        let pos = params.pos_emb.row(k);
        for field in FieldKind::ALL {
            let mut row = h.row_mut(5 * k + field.offset());
            match field {
                FieldKind::Item => row.assign(&params.item_emb.column(step.item as usize)),
                FieldKind::Category => {
                    if let Some(cats) = &step.fields.categories {
                        for &c in cats.iter() {
                            row += &params.category_emb.column(c as usize);
                        }
                    }
                }
                FieldKind::Brand => {
                    let b = step.fields.brand.unwrap_or(MISS_BRAND);
                    row.assign(&params.brand_emb.column(b as usize));
                }
                FieldKind::Title => row.assign(&title_emb.row(k)),
                FieldKind::Description => row.assign(&desc_emb.row(k)),
            }
            row += &params.field_emb.row(field.offset());
            row += &pos;
        }
    }
    Ok(HiddenGrid::from_valid(h, cfg.grid_rows()))
}

/// Accumulates embedding-layer gradients given `d_hidden` over the valid
/// rows.
pub fn embed_backward<T: Scalar>(
    batch: &MaskedSequence,
    params: &ModelParams<T>,
    d_hidden: ArrayView2<'_, T>,
    grads: &mut ModelParams<T>,
) -> Result<()> {
    let n = batch.len();
    let (titles, descs) = text_inputs(batch, params)?;
    let mut d_title = Array2::<T>::zeros((n, params.config.embedding_size));
    let mut d_desc = Array2::<T>::zeros((n, params.config.embedding_size));
    for (k, step) in batch.inputs.iter().enumerate() {
        for field in FieldKind::ALL {
            let dh = d_hidden.row(5 * k + field.offset());
            {
                let mut f = grads.field_emb.row_mut(field.offset());
                f += &dh;
            }
            {
                let mut p = grads.pos_emb.row_mut(k);
                p += &dh;
            }
            match field {
                FieldKind::Item => {
                    let mut c = grads.item_emb.column_mut(step.item as usize);
                    c += &dh;
                }
                FieldKind::Category => {
                    if let Some(cats) = &step.fields.categories {
                        for &cat in cats.iter() {
                            let mut c = grads.category_emb.column_mut(cat as usize);
                            c += &dh;
                        }
                    }
                }
                FieldKind::Brand => {
                    let b = step.fields.brand.unwrap_or(MISS_BRAND);
                    let mut c = grads.brand_emb.column_mut(b as usize);
                    c += &dh;
                }
                FieldKind::Title => d_title.row_mut(k).assign(&dh),
                FieldKind::Description => d_desc.row_mut(k).assign(&dh),
            }
        }
    }
    grads.title_proj += &d_title.t().dot(&titles);
    grads.desc_proj += &d_desc.t().dot(&descs);
    Ok(())
}
