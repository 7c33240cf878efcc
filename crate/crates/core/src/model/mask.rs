use super::MaskKind;
use crate::masking::MaskedSequence;
use crate::{Error, Result};

/// Additive attention mask over the `5*max_len` field-token grid. Entry
/// `(q, k)` is 0 when query row `q` may attend to key row `k` and `-inf`
/// otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    valid: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of non-padding rows (`5n`).
    pub fn valid_len(&self) -> usize {
        self.valid
    }

    pub fn is_allowed(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.size + key]
    }

    pub fn value(&self, query: usize, key: usize) -> f64 {
        if self.is_allowed(query, key) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn allowed_count(&self) -> usize {
        self.allowed.iter().filter(|a| **a).count()
    }

    /// Allowed flags restricted to the valid block, row-major.
    pub(crate) fn valid_block(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.valid * self.valid);
        for q in 0..self.valid {
            out.extend_from_slice(&self.allowed[q * self.size..q * self.size + self.valid]);
        }
        out
    }
}

/// Builds the mask for `batch` padded to `max_len` positions.
///
/// Row `5k + x` is field `x` of position `k`. Padding rows and columns are
/// blocked except on the diagonal. Under [`MaskKind::MissingMasked`] the
/// pre-mask missing map decides which side-field tokens are cut off.
pub fn build_attention_mask(kind: MaskKind, batch: &MaskedSequence, max_len: usize) -> Result<AttentionMask> {
    let n = batch.len();
    if n > max_len {
        return Err(Error::InvalidInput(format!("sequence length {n} exceeds max_len {max_len}")));
    }
    let size = 5 * max_len;
    let valid = 5 * n;
    let mut allowed = vec![false; size * size];
    let cut = |row: usize| batch.missing_map[row / 5][row % 5] && row % 5 != 0;
    for q in 0..size {
        allowed[q * size + q] = true;
    }
    for q in 0..valid {
        for k in 0..valid {
            let a = match kind {
                MaskKind::Dense => true,
                MaskKind::Sparse => q / 5 == k / 5 || q % 5 == k % 5,
                MaskKind::MissingMasked => q == k || (!cut(q) && !cut(k)),
            };
            allowed[q * size + k] = a;
        }
    }
    Ok(AttentionMask { size, valid, allowed })
}
