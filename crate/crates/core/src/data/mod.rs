//! Catalog, fielded sequences and everything that produces them: file
//! ingestion, synthetic corpora, leave-one-out splits, negative sampling,
//! side-information discarding and text vectors.

mod discard;
mod ingest;
mod split;
mod store;
mod synth;
mod text;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use discard::{discard_side_info, missing_rate, restore, FieldValue, LedgerEntry};
pub use ingest::{ingest, ingest_readers, IngestReport};
pub use split::{filter_and_split, Negatives, Split, SplitConfig, SplitDataset};
pub use store::{
    load_catalog, load_dataset, save_catalog, save_dataset, DatasetStats, PreparedPaths,
};
pub use synth::{synth_generate, write_raw_corpus, Pattern, SyntheticSpec};
pub use text::{pseudo_vector, TextField, TextSource, TextVectorProvider};

/// Reserved index of the missing-item token in the item vocabulary.
pub const MISS_ITEM: u32 = 0;
/// Reserved index of the missing-brand token in the brand vocabulary.
pub const MISS_BRAND: u32 = 0;

/// The five field slots of an item, in grid order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Item,
    Category,
    Brand,
    Title,
    Description,
}

impl FieldKind {
    pub const ALL: [FieldKind; 5] = [
        FieldKind::Item,
        FieldKind::Category,
        FieldKind::Brand,
        FieldKind::Title,
        FieldKind::Description,
    ];
    pub const SIDE: [FieldKind; 4] = [
        FieldKind::Category,
        FieldKind::Brand,
        FieldKind::Title,
        FieldKind::Description,
    ];

    /// Row offset of this field inside an item's five-row block.
    pub fn offset(self) -> usize {
        self as usize
    }

    pub fn from_offset(offset: usize) -> FieldKind {
        FieldKind::ALL[offset]
    }

    pub fn label(self) -> &'static str {
        match self {
            FieldKind::Item => "i",
            FieldKind::Category => "c",
            FieldKind::Brand => "b",
            FieldKind::Title => "t",
            FieldKind::Description => "d",
        }
    }

    fn presence_bit(self) -> u8 {
        match self {
            FieldKind::Item => 0,
            FieldKind::Category => 1,
            FieldKind::Brand => 2,
            FieldKind::Title => 4,
            FieldKind::Description => 8,
        }
    }
}

/// Side information of one item. `None` means Missing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItemMeta {
    /// Sorted, deduplicated, non-empty when present.
    pub categories: Option<Arc<[u32]>>,
    pub brand: Option<u32>,
    pub title: Option<Arc<[f32]>>,
    pub description: Option<Arc<[f32]>>,
}

impl ItemMeta {
    pub fn is_present(&self, field: FieldKind) -> bool {
        match field {
            FieldKind::Item => true,
            FieldKind::Category => self.categories.is_some(),
            FieldKind::Brand => self.brand.is_some(),
            FieldKind::Title => self.title.is_some(),
            FieldKind::Description => self.description.is_some(),
        }
    }

    pub fn clear(&mut self, field: FieldKind) {
        match field {
            FieldKind::Item => {}
            FieldKind::Category => self.categories = None,
            FieldKind::Brand => self.brand = None,
            FieldKind::Title => self.title = None,
            FieldKind::Description => self.description = None,
        }
    }

    /// Bit set of present side fields (category=1, brand=2, title=4, description=8).
    pub fn presence(&self) -> u8 {
        FieldKind::SIDE
            .iter()
            .filter(|f| self.is_present(**f))
            .fold(0, |acc, f| acc | f.presence_bit())
    }

    /// Copy of `self` keeping only the side fields whose bit is set.
    pub fn restricted_to(&self, presence: u8) -> ItemMeta {
        let mut out = self.clone();
        for f in FieldKind::SIDE {
            if presence & f.presence_bit() == 0 {
                out.clear(f);
            }
        }
        out
    }

    pub fn missing_side_fields(&self) -> usize {
        FieldKind::SIDE.iter().filter(|f| !self.is_present(**f)).count()
    }
}

/// Vocabularies and per-item metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub n_items: usize,
    pub n_categories: usize,
    pub n_brands: usize,
    pub text_dim: usize,
    /// Index 0 is the reserved missing item.
    pub item_keys: Vec<String>,
    pub category_names: Vec<String>,
    /// Index 0 is the reserved missing brand.
    pub brand_names: Vec<String>,
    /// Index 0 is an all-missing entry.
    pub items: Vec<ItemMeta>,
    /// Representation of a missing title or description.
    pub miss_text: Arc<[f32]>,
}

impl Catalog {
    pub fn item(&self, index: u32) -> &ItemMeta {
        &self.items[index as usize]
    }

    /// Checks the vocabulary invariants.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if self.items.len() != self.n_items + 1 || self.item_keys.len() != self.n_items + 1 {
            return Err(Error::InvalidInput("item table size does not match n_items".into()));
        }
        if self.miss_text.len() != self.text_dim {
            return Err(Error::InvalidInput("miss vector has wrong dimension".into()));
        }
        for (idx, meta) in self.items.iter().enumerate().skip(1) {
            if let Some(cats) = &meta.categories {
                if cats.is_empty() || cats.iter().any(|&c| c as usize >= self.n_categories) {
                    return Err(Error::InvalidInput(format!("item {idx}: bad category set")));
                }
            }
            if let Some(b) = meta.brand {
                if b == MISS_BRAND || b as usize > self.n_brands {
                    return Err(Error::InvalidInput(format!("item {idx}: brand {b} out of range")));
                }
            }
            for v in [&meta.title, &meta.description].into_iter().flatten() {
                if v.len() != self.text_dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInput(format!("item {idx}: bad text vector")));
                }
            }
        }
        Ok(())
    }
}

/// One item occurrence: the item index plus its effective side fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub item: u32,
    pub fields: ItemMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldedSequence {
    pub user: String,
    pub steps: Vec<Step>,
}

impl FieldedSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.steps.iter().map(|s| s.item)
    }

    /// Builds a sequence whose fields are the catalog's (undiscarded) values.
    pub fn from_items(user: impl Into<String>, items: &[u32], catalog: &Catalog) -> Self {
        FieldedSequence {
            user: user.into(),
            steps: items
                .iter()
                .map(|&i| Step {
                    item: i,
                    fields: catalog.item(i).clone(),
                })
                .collect(),
        }
    }
}
