//! Ranking metrics over fixed candidate lists, imputation metrics against
//! a discard ledger, and attention dumps.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FieldKind, FieldValue, LedgerEntry, Split, SplitDataset, Step};
use crate::masking::{append_next_placeholder, MaskedSequence};
use crate::model::{forward_outputs, hard_decode, item_distribution, rank_candidates, ForwardPass, ModelParams};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Hit ratios and mean reciprocal rank. All metrics are `None` when no
/// sequence was evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub hr1: Option<f64>,
    pub hr5: Option<f64>,
    pub hr10: Option<f64>,
    pub mrr: Option<f64>,
    pub n_sequences: usize,
}

impl RankingMetrics {
    /// Metrics from 1-based target ranks.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return RankingMetrics::default();
        }
        let n = ranks.len() as f64;
        let hr = |k: usize| Some(ranks.iter().filter(|&&r| r <= k).count() as f64 / n);
        RankingMetrics {
            hr1: hr(1),
            hr5: hr(5),
            hr10: hr(10),
            mrr: Some(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n),
            n_sequences: ranks.len(),
        }
    }
}

/// Rank of the target among `target ∪ negatives` after appending the
/// placeholder to `prefix`.
pub fn rank_target<T: Scalar>(params: &ModelParams<T>, prefix: &[Step], target: u32, negatives: &[u32]) -> Result<usize> {
    let batch = append_next_placeholder(prefix, params.config.max_len, Some(target));
    let probs = item_distribution(params, &batch, batch.len() - 1)?;
    let mut candidates = Vec::with_capacity(negatives.len() + 1);
    candidates.push(target);
    candidates.extend_from_slice(negatives);
    Ok(rank_candidates(probs.view(), &candidates, target)?.target_rank)
}

/// Target ranks of every sequence for `split`, in sequence order.
pub fn ranks<T: Scalar>(params: &ModelParams<T>, dataset: &SplitDataset, split: Split) -> Result<Vec<usize>> {
    if dataset.negatives.len() != dataset.len() {
        return Err(Error::InvalidInput(format!(
            "{} sequences but {} negative lists",
            dataset.len(),
            dataset.negatives.len()
        )));
    }
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let (prefix, target, negatives) = dataset.case(i, split);
            if negatives.is_empty() {
                return Err(Error::InvalidInput(format!("sequence {i} has no negatives")));
            }
            rank_target(params, prefix, target, negatives)
        })
        .collect()
}

/// Dropout-free ranking evaluation on the validation or test targets.
pub fn eval_ranking<T: Scalar>(params: &ModelParams<T>, dataset: &SplitDataset, split: Split) -> Result<RankingMetrics> {
    Ok(RankingMetrics::from_ranks(&ranks(params, dataset, split)?))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetric {
    pub accuracy: Option<f64>,
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MseMetric {
    pub mse: Option<f64>,
    pub support: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationMetrics {
    pub category: CategoryMetrics,
    pub brand: AccuracyMetric,
    pub title: MseMetric,
    pub description: MseMetric,
}

/// One imputed ledger entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputedInstance {
    pub sequence: usize,
    pub position: usize,
    pub field: String,
    /// Categories or brand as indices; empty for text fields.
    pub truth: Vec<u32>,
    pub predicted: Vec<u32>,
    /// Per-dimension squared error for text fields.
    pub mse: Option<f64>,
}

/// Per-instance precision, recall and F1 of a predicted category set.
pub fn set_scores(predicted: &[u32], truth: &[u32]) -> (f64, f64, f64) {
    let hit = predicted.iter().filter(|c| truth.contains(c)).count() as f64;
    let p = if predicted.is_empty() { 0.0 } else { hit / predicted.len() as f64 };
    let r = if truth.is_empty() { 0.0 } else { hit / truth.len() as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// `||truth - pred||^2 / d`.
pub fn text_mse(truth: &[f32], predicted: impl IntoIterator<Item = f64>) -> f64 {
    let d = truth.len() as f64;
    truth.iter().zip(predicted).map(|(t, p)| (*t as f64 - p).powi(2)).sum::<f64>() / d
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Reconstructs every ledgered field from the discarded sequences as they
/// are (no extra masking) and scores the hard predictions.
pub fn eval_imputation<T: Scalar>(
    params: &ModelParams<T>,
    sequences: &[crate::data::FieldedSequence],
    ledger: &[LedgerEntry],
) -> Result<(ImputationMetrics, Vec<ImputedInstance>)> {
    let mut by_sequence: BTreeMap<usize, Vec<&LedgerEntry>> = BTreeMap::new();
    for entry in ledger {
        let s = sequences
            .get(entry.sequence)
            .ok_or_else(|| Error::InvalidInput(format!("ledger sequence {} out of range", entry.sequence)))?;
        if entry.position >= s.len() {
            return Err(Error::InvalidInput(format!(
                "ledger position {} out of range for sequence {}",
                entry.position, entry.sequence
            )));
        }
        by_sequence.entry(entry.sequence).or_default().push(entry);
    }
    let groups: Vec<(usize, Vec<&LedgerEntry>)> = by_sequence.into_iter().collect();
    let per_group: Vec<Vec<ImputedInstance>> = groups
        .par_iter()
        .map(|(si, entries)| {
            let batch = MaskedSequence::unmasked(&sequences[*si].steps);
            let preds = hard_decode(&forward_outputs(params, &batch)?);
            Ok(entries
                .iter()
                .map(|e| {
                    let pred = &preds[e.position];
                    let (truth, predicted, mse) = match &e.value {
                        FieldValue::Categories(c) => (c.to_vec(), pred.categories.clone(), None),
                        FieldValue::Brand(b) => (vec![*b], vec![pred.brand], None),
                        FieldValue::Title(t) => (vec![], vec![], Some(text_mse(t, pred.title.iter().map(|v| v.as_f64())))),
                        FieldValue::Description(t) => {
                            (vec![], vec![], Some(text_mse(t, pred.description.iter().map(|v| v.as_f64()))))
                        }
                    };
                    ImputedInstance {
                        sequence: e.sequence,
                        position: e.position,
                        field: e.field().label().to_string(),
                        truth,
                        predicted,
                        mse,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let instances: Vec<ImputedInstance> = per_group.into_iter().flatten().collect();

    let (mut p, mut r, mut f) = (vec![], vec![], vec![]);
    let mut brand = vec![];
    let (mut title, mut desc) = (vec![], vec![]);
    for inst in &instances {
        match inst.field.as_str() {
            "c" => {
                let (pi, ri, fi) = set_scores(&inst.predicted, &inst.truth);
                p.push(pi);
                r.push(ri);
                f.push(fi);
            }
            "b" => brand.push(if inst.predicted == inst.truth { 1.0 } else { 0.0 }),
            "t" => title.push(inst.mse.unwrap()),
            _ => desc.push(inst.mse.unwrap()),
        }
    }
    let metrics = ImputationMetrics {
        category: CategoryMetrics { precision: mean(&p), recall: mean(&r), f1: mean(&f), support: p.len() },
        brand: AccuracyMetric { accuracy: mean(&brand), support: brand.len() },
        title: MseMetric { mse: mean(&title), support: title.len() },
        description: MseMetric { mse: mean(&desc), support: desc.len() },
    };
    Ok((metrics, instances))
}

/// Attention of the placeholder's ID token in one layer and head, laid
/// out as field type (i, c, b, t, d) by position.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    pub weights: Array2<f64>,
}

impl AttentionMap {
    pub fn to_csv(&self) -> String {
        let n = self.weights.ncols();
        let mut out = String::from("field");
        for k in 1..=n {
            out.push_str(&format!(",{k}"));
        }
        out.push('\n');
        for f in FieldKind::ALL {
            out.push_str(f.label());
            for v in self.weights.row(f.offset()) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Appends the placeholder to `observed` and returns the placeholder ID's
/// attention row for every layer and head.
pub fn dump_attention<T: Scalar>(params: &ModelParams<T>, observed: &[Step]) -> Result<Vec<AttentionMap>> {
    let batch = append_next_placeholder(observed, params.config.max_len, None);
    let pass = ForwardPass::run(params, &batch, None)?;
    let n = batch.len();
    let query = 5 * (n - 1);
    let mut out = Vec::new();
    for layer in 0..params.config.layers {
        for head in 0..params.config.heads {
            let probs = pass.cache.attention(layer, head);
            let weights = Array2::from_shape_fn((5, n), |(f, k)| probs[[query, 5 * k + f]].as_f64());
            out.push(AttentionMap { layer, head, weights });
        }
    }
    Ok(out)
}

/// Ranking metrics plus optional imputation metrics, serialised as one
/// JSON object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Option<Split>,
    #[serde(flatten)]
    pub ranking: RankingMetrics,
    pub imputation: Option<ImputationMetrics>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_ranks_give_exact_metrics() {
        let m = RankingMetrics::from_ranks(&[3; 10]);
        assert_eq!((m.hr5, m.hr10), (Some(1.0), Some(1.0)));
        assert!((m.mrr.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let m = RankingMetrics::from_ranks(&[7]);
        assert_eq!((m.hr1, m.hr5, m.hr10), (Some(0.0), Some(0.0), Some(1.0)));
        assert!((m.mrr.unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert!((m.mrr.unwrap() - 0.1429).abs() < 1e-4);
    }

    #[test]
    fn empty_ranking_is_null() {
        let m = RankingMetrics::from_ranks(&[]);
        assert_eq!(m, RankingMetrics::default());
        let json = serde_json::to_value(EvalReport { ranking: m, ..Default::default() }).unwrap();
        assert!(json["hr5"].is_null());
        assert_eq!(json["n_sequences"], 0);
    }

    #[test]
    fn set_arithmetic() {
        assert_eq!(set_scores(&[2, 3], &[1, 2]), (0.5, 0.5, 0.5));
        assert_eq!(set_scores(&[1, 2], &[1, 2]), (1.0, 1.0, 1.0));
        assert_eq!(set_scores(&[], &[1]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn text_mse_divides_by_dimension() {
        let truth = [1.0f32, 2.0, 3.0, 4.0];
        assert_eq!(text_mse(&truth, truth.iter().map(|v| *v as f64)), 0.0);
        assert!((text_mse(&truth, [0.0; 4]) - 30.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn attention_csv_layout() {
        let map = AttentionMap { layer: 0, head: 1, weights: Array2::from_elem((5, 2), 0.1) };
        let csv = map.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "field,1,2");
        assert_eq!(lines.len(), 6);
        assert!(lines[5].starts_with("d,"));
    }
}
