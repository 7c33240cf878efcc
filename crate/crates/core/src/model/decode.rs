use ndarray::{Array1, Array2, ArrayView1};

use super::{HiddenGrid, ModelParams};
use crate::data::{FieldKind, MISS_BRAND, MISS_ITEM};
use crate::scalar::{lit, Scalar};
use crate::{Error, Result};

/// Per-position output distributions and reconstructions, one row per
/// valid position.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutputs<T> {
    /// Softmax over `N_i + 1` items (column 0 is the miss item).
    pub item: Array2<T>,
    /// Independent sigmoid per category.
    pub category: Array2<T>,
    /// Softmax over `N_b + 1` brands (column 0 is the miss brand).
    pub brand: Array2<T>,
    pub title: Array2<T>,
    pub description: Array2<T>,
}

impl<T: Scalar> FieldOutputs<T> {
    pub fn positions(&self) -> usize {
        self.item.nrows()
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(mut z: ndarray::ArrayViewMut1<'_, T>) {
    let max = z.iter().fold(T::neg_infinity(), |m, v| if *v > m { *v } else { m });
    z.mapv_inplace(|v| (v - max).exp());
    let sum = z.sum();
    z.mapv_inplace(|v| v / sum);
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn field_rows<T: Scalar>(hidden: &HiddenGrid<T>, field: FieldKind) -> Array2<T> {
    let n = hidden.positions();
    let e = hidden.rows.ncols();
    let mut out = Array2::zeros((n, e));
    for k in 0..n {
        out.row_mut(k).assign(&hidden.rows.row(HiddenGrid::<T>::row_index(k, field)));
    }
    out
}

/// Splits the final hidden grid per field and applies the tied-weight
/// output heads.
pub fn decode<T: Scalar>(hidden: &HiddenGrid<T>, params: &ModelParams<T>) -> FieldOutputs<T> {
    let mut item = field_rows(hidden, FieldKind::Item).dot(&params.item_emb);
    item.rows_mut().into_iter().for_each(softmax_in_place);
    let mut category = field_rows(hidden, FieldKind::Category).dot(&params.category_emb);
    category.mapv_inplace(sigmoid);
    let mut brand = field_rows(hidden, FieldKind::Brand).dot(&params.brand_emb);
    brand.rows_mut().into_iter().for_each(softmax_in_place);
    let title = field_rows(hidden, FieldKind::Title).dot(&params.title_out.t());
    let description = field_rows(hidden, FieldKind::Description).dot(&params.desc_out.t());
    FieldOutputs { item, category, brand, title, description }
}

/// Discrete predictions at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct HardPrediction<T> {
    pub item: u32,
    pub categories: Vec<u32>,
    pub brand: u32,
    pub title: Array1<T>,
    pub description: Array1<T>,
}

/// Index of the largest entry from `start` on; ties go to the smaller index.
fn argmax_from<T: Scalar>(v: ArrayView1<'_, T>, start: usize) -> usize {
    let mut best = start;
    for i in start + 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax for items and brands (miss indices excluded), `p > 0.5` for
/// categories, text reconstructions passed through.
pub fn hard_decode<T: Scalar>(outputs: &FieldOutputs<T>) -> Vec<HardPrediction<T>> {
    let half = lit::<T>(0.5);
    (0..outputs.positions())
        .map(|k| HardPrediction {
            item: argmax_from(outputs.item.row(k), MISS_ITEM as usize + 1) as u32,
            categories: outputs
                .category
                .row(k)
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > half)
                .map(|(c, _)| c as u32)
                .collect(),
            brand: argmax_from(outputs.brand.row(k), MISS_BRAND as usize + 1) as u32,
            title: outputs.title.row(k).to_owned(),
            description: outputs.description.row(k).to_owned(),
        })
        .collect()
}

/// Candidate list ordered by item probability.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    pub order: Vec<u32>,
    /// 1-based rank of the target in `order`.
    pub target_rank: usize,
}

/// Sorts `candidates` by the item distribution at `position`, best first.
/// Ties put the target after every item it is tied with, and other items
/// in ascending index order.
pub fn score_candidates<T: Scalar>(
    outputs: &FieldOutputs<T>,
    position: usize,
    candidates: &[u32],
    target: u32,
) -> Result<Ranking> {
    if position >= outputs.positions() {
        return Err(Error::InvalidInput(format!("position {position} out of range")));
    }
    rank_candidates(outputs.item.row(position), candidates, target)
}

/// [`score_candidates`] on a bare item distribution.
pub fn rank_candidates<T: Scalar>(probs: ArrayView1<'_, T>, candidates: &[u32], target: u32) -> Result<Ranking> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("duplicate candidate items".into()));
    }
    if sorted.first() == Some(&MISS_ITEM) {
        return Err(Error::InvalidInput("the miss item cannot be a candidate".into()));
    }
    if let Some(&c) = sorted.iter().find(|&&c| c as usize >= probs.len()) {
        return Err(Error::InvalidInput(format!("candidate {c} out of range")));
    }
    if sorted.binary_search(&target).is_err() {
        return Err(Error::InvalidInput(format!("target {target} is not among the candidates")));
    }
    sorted.sort_by(|&a, &b| {
        let (pa, pb) = (probs[a as usize], probs[b as usize]);
        pb.partial_cmp(&pa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (a == target).cmp(&(b == target)))
            .then(a.cmp(&b))
    });
    let target_rank = sorted.iter().position(|&c| c == target).unwrap() + 1;
    Ok(Ranking { order: sorted, target_rank })
}
