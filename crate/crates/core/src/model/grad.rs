use ndarray::Array1;

use super::{
    build_attention_mask, decode, softmax_in_place, embed, embed_backward, encode_backward, encode_cached, AttentionMask,
    EncoderCache, FieldOutputs, HiddenGrid, ModelParams,
};
use crate::data::FieldKind;
use crate::masking::MaskedSequence;
use crate::objective::{head_loss_backward, LossBreakdown, LossKind};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Everything produced by one encoder pass over a batch.
pub struct ForwardPass<T> {
    pub mask: AttentionMask,
    pub hidden: HiddenGrid<T>,
    pub cache: EncoderCache<T>,
}

impl<T: Scalar> ForwardPass<T> {
    /// Runs embed, mask construction and the encoder. `dropout_seed`
    /// enables dropout when set.
    pub fn run(params: &ModelParams<T>, batch: &MaskedSequence, dropout_seed: Option<u64>) -> Result<Self> {
        let h = embed(batch, params)?;
        let mask = build_attention_mask(params.config.mask_kind, batch, params.config.max_len)?;
        let (hidden, cache) = encode_cached(&h, &mask, params, dropout_seed.is_some(), dropout_seed.unwrap_or(0))?;
        Ok(ForwardPass { mask, hidden, cache })
    }
}

/// Dropout-free forward pass through the output heads.
pub fn forward_outputs<T: Scalar>(params: &ModelParams<T>, batch: &MaskedSequence) -> Result<FieldOutputs<T>> {
    let pass = ForwardPass::run(params, batch, None)?;
    Ok(decode(&pass.hidden, params))
}

/// Dropout-free item distribution at one position, skipping the other
/// output heads.
pub fn item_distribution<T: Scalar>(
    params: &ModelParams<T>,
    batch: &MaskedSequence,
    position: usize,
) -> Result<Array1<T>> {
    if position >= batch.len() {
        return Err(Error::InvalidInput(format!("position {position} out of range")));
    }
    let pass = ForwardPass::run(params, batch, None)?;
    let mut z = pass.hidden.rows.row(HiddenGrid::<T>::row_index(position, FieldKind::Item)).dot(&params.item_emb);
    softmax_in_place(z.view_mut());
    Ok(z)
}

/// Loss of one sequence and its gradient with respect to every trainable
/// tensor, accumulated into `grads`.
pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    batch: &MaskedSequence,
    kind: LossKind,
    dropout_seed: Option<u64>,
    grads: &mut ModelParams<T>,
) -> Result<LossBreakdown> {
    let pass = ForwardPass::run(params, batch, dropout_seed)?;
    let (loss, d_final) = head_loss_backward(pass.hidden.valid(), params, batch, kind, grads)?;
    let d_input = encode_backward(&pass.cache, params, d_final.view(), grads);
    embed_backward(batch, params, d_input.view(), grads)?;
    Ok(loss)
}
