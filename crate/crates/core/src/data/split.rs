use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{FieldedSequence, LedgerEntry, Step};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub n_negatives: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            min_len: 5,
            max_len: 20,
            n_negatives: 99,
        }
    }
}

/// Fixed ranking negatives for one sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negatives {
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
}

/// Leave-one-out view over filtered, truncated sequences.
///
/// For a sequence of length `n` the training prefix is `steps[..n-2]`, the
/// validation target is `steps[n-2]` and the test target is `steps[n-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub sequences: Vec<FieldedSequence>,
    pub negatives: Vec<Negatives>,
    /// Ground truth for every side field removed by discarding. Empty when
    /// the sequences were not discarded.
    pub discard_ledger: Vec<LedgerEntry>,
}

/// Which held-out target an evaluation looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Validation,
    Test,
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn train_prefix(&self, i: usize) -> &[Step] {
        let s = &self.sequences[i].steps;
        &s[..s.len() - 2]
    }

    /// Observed prefix, target item and negatives for a held-out split.
    pub fn case(&self, i: usize, split: Split) -> (&[Step], u32, &[u32]) {
        let s = &self.sequences[i].steps;
        let n = s.len();
        match split {
            Split::Validation => (&s[..n - 2], s[n - 2].item, &self.negatives[i].validation),
            Split::Test => (&s[..n - 1], s[n - 1].item, &self.negatives[i].test),
        }
    }

    /// Same split and negatives over discarded sequences.
    pub fn with_discard(&self, prob: f64, seed: u64) -> Result<SplitDataset> {
        let (sequences, ledger) = super::discard_side_info(&self.sequences, prob, seed)?;
        Ok(SplitDataset {
            sequences,
            negatives: self.negatives.clone(),
            discard_ledger: ledger,
        })
    }
}

/// Draws `count` distinct items uniformly from `[1, n_items] \ {target}`.
pub(crate) fn sample_negatives(
    rng: &mut impl rand::Rng,
    n_items: usize,
    target: u32,
    count: usize,
) -> Vec<u32> {
    index::sample(rng, n_items - 1, count)
        .into_iter()
        .map(|v| {
            let item = v as u32 + 1;
            if item >= target {
                item + 1
            } else {
                item
            }
        })
        .collect()
}

pub fn filter_and_split(
    sequences: &[FieldedSequence],
    n_items: usize,
    config: &SplitConfig,
    seed: u64,
) -> Result<SplitDataset> {
    if config.min_len < 3 {
        return Err(Error::Config("min_len must be at least 3".into()));
    }
    if config.max_len < config.min_len {
        return Err(Error::Config("max_len must be >= min_len".into()));
    }
    if n_items <= config.n_negatives {
        return Err(Error::NotEnoughItems {
            n_items,
            requested: config.n_negatives,
        });
    }
    let kept: Vec<FieldedSequence> = sequences
        .iter()
        .filter(|s| s.len() >= config.min_len)
        .map(|s| {
            let start = s.len().saturating_sub(config.max_len);
            FieldedSequence {
                user: s.user.clone(),
                steps: s.steps[start..].to_vec(),
            }
        })
        .collect();
    let negatives = kept
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n = s.len();
            let mut rng = seed::rng(seed, "negatives", &[i as u64]);
            let validation = sample_negatives(&mut rng, n_items, s.steps[n - 2].item, config.n_negatives);
            let test = sample_negatives(&mut rng, n_items, s.steps[n - 1].item, config.n_negatives);
            Negatives { validation, test }
        })
        .collect();
    Ok(SplitDataset {
        sequences: kept,
        negatives,
        discard_ledger: Vec::new(),
    })
}
