//! Field-level masking: imputation masks over non-missing fields,
//! whole-item recommendation masks, and the next-item placeholder.

use rand::Rng;

use crate::data::{FieldKind, ItemMeta, Step, MISS_ITEM};
use crate::{Error, Result};

/// Original value of a masked position. Only the flagged fields are set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Target {
    pub item: Option<u32>,
    pub fields: ItemMeta,
}

/// Model input after masking.
///
/// `inputs[k].item == MISS_ITEM` and `None` side fields stand for the miss
/// values. `missing_map` records which fields were Missing before masking.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub inputs: Vec<Step>,
    pub targets: Vec<Target>,
    pub flags: Vec<[bool; 5]>,
    pub missing_map: Vec<[bool; 5]>,
}

fn missing_row(step: &Step) -> [bool; 5] {
    let mut row = [false; 5];
    for f in FieldKind::SIDE {
        row[f.offset()] = !step.fields.is_present(f);
    }
    row
}

fn mask_field(input: &mut Step, target: &mut Target, field: FieldKind) {
    match field {
        FieldKind::Item => {
            target.item = Some(input.item);
            input.item = MISS_ITEM;
        }
        FieldKind::Category => target.fields.categories = input.fields.categories.take(),
        FieldKind::Brand => target.fields.brand = input.fields.brand.take(),
        FieldKind::Title => target.fields.title = input.fields.title.take(),
        FieldKind::Description => target.fields.description = input.fields.description.take(),
    }
}

impl MaskedSequence {
    /// No masking at all; every field is seen as-is.
    pub fn unmasked(steps: &[Step]) -> Self {
        MaskedSequence {
            inputs: steps.to_vec(),
            targets: vec![Target::default(); steps.len()],
            flags: vec![[false; 5]; steps.len()],
            missing_map: steps.iter().map(missing_row).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn flag_count(&self) -> usize {
        self.flags.iter().flatten().filter(|f| **f).count()
    }

    fn mask(&mut self, pos: usize, field: FieldKind) {
        mask_field(&mut self.inputs[pos], &mut self.targets[pos], field);
        self.flags[pos][field.offset()] = true;
    }

    /// Overwrites inputs with targets at flagged positions.
    pub fn unmask(&self) -> Vec<Step> {
        self.inputs
            .iter()
            .zip(&self.targets)
            .zip(&self.flags)
            .map(|((inp, t), flags)| {
                let mut s = inp.clone();
                if flags[0] {
                    s.item = t.item.unwrap_or(MISS_ITEM);
                }
                if flags[1] {
                    s.fields.categories = t.fields.categories.clone();
                }
                if flags[2] {
                    s.fields.brand = t.fields.brand;
                }
                if flags[3] {
                    s.fields.title = t.fields.title.clone();
                }
                if flags[4] {
                    s.fields.description = t.fields.description.clone();
                }
                s
            })
            .collect()
    }

    /// Checks that a field carries its miss value exactly when it is
    /// flagged or was originally Missing. Side fields of a whole-item mask
    /// (ID flagged) may also carry miss values without a flag.
    pub fn check_consistency(&self) -> Result<()> {
        for k in 0..self.len() {
            for f in FieldKind::ALL {
                let o = f.offset();
                let is_miss = match f {
                    FieldKind::Item => self.inputs[k].item == MISS_ITEM,
                    _ => !self.inputs[k].fields.is_present(f),
                };
                let flagged = self.flags[k][o];
                let orig_missing = self.missing_map[k][o];
                let whole_item = f != FieldKind::Item && self.flags[k][0];
                let ok = !(flagged && orig_missing)
                    && (!is_miss || flagged || orig_missing || whole_item)
                    && (is_miss || !(flagged || orig_missing));
                if !ok {
                    return Err(Error::InvalidInput(format!(
                        "position {k}: {f:?} miss/flag/missing-map mismatch"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn present_fields(steps: &[Step]) -> Vec<(usize, FieldKind)> {
    steps
        .iter()
        .enumerate()
        .flat_map(|(k, s)| {
            FieldKind::ALL
                .into_iter()
                .filter(move |f| s.fields.is_present(*f))
                .map(move |f| (k, f))
        })
        .collect()
}

/// Masks every non-missing field (item IDs included) independently with
/// probability `p`. If nothing was drawn, one non-missing field chosen
/// uniformly is masked.
pub fn apply_mii_mask(steps: &[Step], p: f64, rng: &mut impl Rng) -> Result<MaskedSequence> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("mask probability {p} not in [0,1]")));
    }
    let eligible = present_fields(steps);
    if eligible.is_empty() {
        return Err(Error::InvalidInput("sequence has no non-missing field to mask".into()));
    }
    let mut out = MaskedSequence::unmasked(steps);
    let mut any = false;
    for &(k, f) in &eligible {
        if rng.random::<f64>() < p {
            out.mask(k, f);
            any = true;
        }
    }
    if !any {
        let (k, f) = eligible[rng.random_range(0..eligible.len())];
        out.mask(k, f);
    }
    Ok(out)
}

/// Chooses items independently with probability `p_item` (at least one)
/// and replaces all five of their fields with miss values; only the item
/// ID is flagged.
pub fn apply_rec_mask(steps: &[Step], p_item: f64, rng: &mut impl Rng) -> Result<MaskedSequence> {
    if !(p_item > 0.0 && p_item <= 1.0) {
        return Err(Error::InvalidInput(format!("item mask probability {p_item} not in (0,1]")));
    }
    if steps.is_empty() {
        return Err(Error::InvalidInput("cannot mask an empty sequence".into()));
    }
    let mut chosen: Vec<bool> = (0..steps.len()).map(|_| rng.random::<f64>() < p_item).collect();
    if !chosen.iter().any(|c| *c) {
        let k = rng.random_range(0..steps.len());
        chosen[k] = true;
    }
    let mut out = MaskedSequence::unmasked(steps);
    for (k, c) in chosen.into_iter().enumerate() {
        if c {
            out.mask(k, FieldKind::Item);
            out.inputs[k].fields = ItemMeta::default();
        }
    }
    Ok(out)
}

/// Appends the all-missing next item, evicting the oldest items so that
/// the result fits in `max_len`. `target` is the ground-truth next item
/// when known.
pub fn append_next_placeholder(steps: &[Step], max_len: usize, target: Option<u32>) -> MaskedSequence {
    assert!(max_len >= 1, "max_len must be positive");
    let keep = steps.len().min(max_len - 1);
    let observed = &steps[steps.len() - keep..];
    let mut out = MaskedSequence::unmasked(observed);
    out.inputs.push(Step { item: MISS_ITEM, fields: ItemMeta::default() });
    out.targets.push(Target { item: target, fields: ItemMeta::default() });
    let mut flags = [false; 5];
    flags[0] = true;
    out.flags.push(flags);
    out.missing_map.push([false, true, true, true, true]);
    out
}
