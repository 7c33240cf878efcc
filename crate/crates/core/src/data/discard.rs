use std::sync::Arc;

use rand::Rng;

use super::{FieldKind, FieldedSequence};
use crate::{seed, Error, Result};

/// A removed side-field value.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldValue {
    Categories(Arc<[u32]>),
    Brand(u32),
    Title(Arc<[f32]>),
    Description(Arc<[f32]>),
}

impl FieldValue {
    pub fn kind(&self) -> FieldKind {
        match self {
            FieldValue::Categories(_) => FieldKind::Category,
            FieldValue::Brand(_) => FieldKind::Brand,
            FieldValue::Title(_) => FieldKind::Title,
            FieldValue::Description(_) => FieldKind::Description,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub sequence: usize,
    pub position: usize,
    pub value: FieldValue,
}

impl LedgerEntry {
    pub fn field(&self) -> FieldKind {
        self.value.kind()
    }
}

/// Independently replaces each present side field with Missing with
/// probability `prob`. One stream per sequence: draws are made in step
/// order, fields in (category, brand, title, description) order, and only
/// for fields that are present.
pub fn discard_side_info(
    sequences: &[FieldedSequence],
    prob: f64,
    seed: u64,
) -> Result<(Vec<FieldedSequence>, Vec<LedgerEntry>)> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidInput(format!("discard probability {prob} not in [0,1]")));
    }
    let mut out = Vec::with_capacity(sequences.len());
    let mut ledger = Vec::new();
    for (si, s) in sequences.iter().enumerate() {
        let mut rng = seed::rng(seed, "discard", &[si as u64]);
        let mut s = s.clone();
        for (pos, step) in s.steps.iter_mut().enumerate() {
            let f = &mut step.fields;
            let drop = |rng: &mut rand_chacha::ChaCha8Rng| rng.random::<f64>() < prob;
            if f.categories.is_some() && drop(&mut rng) {
                let v = f.categories.take().unwrap();
                ledger.push(LedgerEntry { sequence: si, position: pos, value: FieldValue::Categories(v) });
            }
            if f.brand.is_some() && drop(&mut rng) {
                let v = f.brand.take().unwrap();
                ledger.push(LedgerEntry { sequence: si, position: pos, value: FieldValue::Brand(v) });
            }
            if f.title.is_some() && drop(&mut rng) {
                let v = f.title.take().unwrap();
                ledger.push(LedgerEntry { sequence: si, position: pos, value: FieldValue::Title(v) });
            }
            if f.description.is_some() && drop(&mut rng) {
                let v = f.description.take().unwrap();
                ledger.push(LedgerEntry {
                    sequence: si,
                    position: pos,
                    value: FieldValue::Description(v),
                });
            }
        }
        out.push(s);
    }
    Ok((out, ledger))
}

/// Re-inserts ledgered values, undoing a discard.
pub fn restore(sequences: &mut [FieldedSequence], ledger: &[LedgerEntry]) {
    for e in ledger {
        let f = &mut sequences[e.sequence].steps[e.position].fields;
        match &e.value {
            FieldValue::Categories(v) => f.categories = Some(v.clone()),
            FieldValue::Brand(v) => f.brand = Some(*v),
            FieldValue::Title(v) => f.title = Some(v.clone()),
            FieldValue::Description(v) => f.description = Some(v.clone()),
        }
    }
}

/// Fraction of Missing side fields over all item occurrences (4 per item;
/// item IDs are not counted).
pub fn missing_rate(sequences: &[FieldedSequence]) -> Result<f64> {
    let occurrences: usize = sequences.iter().map(|s| s.len()).sum();
    if occurrences == 0 {
        return Err(Error::InvalidInput("missing rate of an empty corpus".into()));
    }
    let missing: usize = sequences
        .iter()
        .flat_map(|s| s.steps.iter())
        .map(|st| st.fields.missing_side_fields())
        .sum();
    Ok(missing as f64 / (4 * occurrences) as f64)
}
