//! On-disk layout of a prepared dataset directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Catalog, FieldKind, FieldValue, FieldedSequence, ItemMeta, LedgerEntry, Negatives,
    SplitDataset, Step,
};
use crate::{Error, Result};

pub struct PreparedPaths {
    pub dir: PathBuf,
}

impl PreparedPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PreparedPaths { dir: dir.into() }
    }
    pub fn catalog(&self) -> PathBuf {
        self.dir.join("catalog.json")
    }
    pub fn vectors(&self) -> PathBuf {
        self.dir.join("vectors.bin")
    }
    pub fn sequences(&self) -> PathBuf {
        self.dir.join("sequences.jsonl")
    }
    pub fn sequences_discarded(&self) -> PathBuf {
        self.dir.join("sequences_d.jsonl")
    }
    pub fn negatives(&self) -> PathBuf {
        self.dir.join("negatives.jsonl")
    }
    pub fn ledger(&self) -> PathBuf {
        self.dir.join("ledger.jsonl")
    }
    pub fn stats(&self) -> PathBuf {
        self.dir.join("stats.json")
    }
    pub fn all(&self) -> Vec<PathBuf> {
        vec![
            self.catalog(),
            self.vectors(),
            self.sequences(),
            self.sequences_discarded(),
            self.negatives(),
            self.ledger(),
            self.stats(),
        ]
    }
}

/// Corpus statistics with the same columns as the usual dataset summary
/// table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub items: usize,
    pub sequences: usize,
    pub average_length: f64,
    pub categories: usize,
    pub brands: usize,
    pub missing_rate: f64,
    pub missing_rate_d: f64,
}

impl DatasetStats {
    pub fn compute(catalog: &Catalog, original: &SplitDataset, discarded: &SplitDataset) -> Result<Self> {
        let total: usize = original.sequences.iter().map(|s| s.len()).sum();
        Ok(DatasetStats {
            items: catalog.n_items,
            sequences: original.len(),
            average_length: if original.is_empty() { 0.0 } else { total as f64 / original.len() as f64 },
            categories: catalog.n_categories,
            brands: catalog.n_brands,
            missing_rate: super::missing_rate(&original.sequences)?,
            missing_rate_d: super::missing_rate(&discarded.sequences)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ItemRecord {
    categories: Option<Vec<u32>>,
    brand: Option<u32>,
    title: bool,
    description: bool,
}

#[derive(Serialize, Deserialize)]
struct CatalogRecord {
    n_items: usize,
    n_categories: usize,
    n_brands: usize,
    text_dim: usize,
    item_keys: Vec<String>,
    category_names: Vec<String>,
    brand_names: Vec<String>,
    items: Vec<ItemRecord>,
    miss_text: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct SequenceRecord {
    user: String,
    items: Vec<u32>,
    present: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct LedgerRecord {
    sequence: usize,
    position: usize,
    field: FieldKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    brand: Option<u32>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn save_catalog(catalog: &Catalog, dir: &Path) -> Result<()> {
    let paths = PreparedPaths::new(dir);
    let record = CatalogRecord {
        n_items: catalog.n_items,
        n_categories: catalog.n_categories,
        n_brands: catalog.n_brands,
        text_dim: catalog.text_dim,
        item_keys: catalog.item_keys.clone(),
        category_names: catalog.category_names.clone(),
        brand_names: catalog.brand_names.clone(),
        items: catalog
            .items
            .iter()
            .map(|m| ItemRecord {
                categories: m.categories.as_ref().map(|c| c.to_vec()),
                brand: m.brand,
                title: m.title.is_some(),
                description: m.description.is_some(),
            })
            .collect(),
        miss_text: catalog.miss_text.to_vec(),
    };
    let path = paths.catalog();
    let mut w = create(&path)?;
    serde_json::to_writer(&mut w, &record)?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = paths.vectors();
    let mut w = create(&path)?;
    let zeros = vec![0.0f32; catalog.text_dim];
    for m in &catalog.items {
        for v in [&m.title, &m.description] {
            let v: &[f32] = v.as_deref().unwrap_or(&zeros);
            for x in v {
                w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn load_catalog(dir: &Path) -> Result<Catalog> {
    let paths = PreparedPaths::new(dir);
    let path = paths.catalog();
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let rec: CatalogRecord = serde_json::from_reader(BufReader::new(f))?;
    let path = paths.vectors();
    let mut bytes = Vec::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&path, e))?;
    let d = rec.text_dim;
    if bytes.len() != rec.items.len() * 2 * d * 4 {
        return Err(Error::InvalidInput(format!("{} has unexpected size", path.display())));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let items = rec
        .items
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let base = i * 2 * d;
            ItemMeta {
                categories: r.categories.map(Arc::from),
                brand: r.brand,
                title: r.title.then(|| Arc::from(&floats[base..base + d])),
                description: r.description.then(|| Arc::from(&floats[base + d..base + 2 * d])),
            }
        })
        .collect();
    let catalog = Catalog {
        n_items: rec.n_items,
        n_categories: rec.n_categories,
        n_brands: rec.n_brands,
        text_dim: d,
        item_keys: rec.item_keys,
        category_names: rec.category_names,
        brand_names: rec.brand_names,
        items,
        miss_text: rec.miss_text.into(),
    };
    catalog.validate()?;
    Ok(catalog)
}

fn sequence_records(seqs: &[FieldedSequence]) -> impl Iterator<Item = SequenceRecord> + '_ {
    seqs.iter().map(|s| SequenceRecord {
        user: s.user.clone(),
        items: s.item_ids().collect(),
        present: s.steps.iter().map(|st| st.fields.presence()).collect(),
    })
}

fn rebuild_sequences(records: Vec<SequenceRecord>, catalog: &Catalog) -> Result<Vec<FieldedSequence>> {
    records
        .into_iter()
        .map(|r| {
            if r.items.len() != r.present.len() {
                return Err(Error::InvalidInput(format!("sequence {}: presence length mismatch", r.user)));
            }
            let steps = r
                .items
                .iter()
                .zip(&r.present)
                .map(|(&item, &p)| {
                    if item == 0 || item as usize > catalog.n_items {
                        return Err(Error::InvalidInput(format!("item {item} out of range")));
                    }
                    Ok(Step { item, fields: catalog.item(item).restricted_to(p) })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FieldedSequence { user: r.user, steps })
        })
        .collect()
}

/// Writes the original split, its discarded counterpart and the ledger.
pub fn save_dataset(original: &SplitDataset, discarded: &SplitDataset, dir: &Path) -> Result<()> {
    let paths = PreparedPaths::new(dir);
    write_jsonl(&paths.sequences(), sequence_records(&original.sequences))?;
    write_jsonl(&paths.sequences_discarded(), sequence_records(&discarded.sequences))?;
    write_jsonl(&paths.negatives(), &original.negatives)?;
    write_jsonl(
        &paths.ledger(),
        discarded.discard_ledger.iter().map(|e| LedgerRecord {
            sequence: e.sequence,
            position: e.position,
            field: e.field(),
            categories: match &e.value {
                FieldValue::Categories(c) => Some(c.to_vec()),
                _ => None,
            },
            brand: match &e.value {
                FieldValue::Brand(b) => Some(*b),
                _ => None,
            },
        }),
    )
}

/// Loads either the original or the discarded view. The ledger is only
/// attached to the discarded view.
pub fn load_dataset(dir: &Path, catalog: &Catalog, discarded: bool) -> Result<SplitDataset> {
    let paths = PreparedPaths::new(dir);
    let negatives: Vec<Negatives> = read_jsonl(&paths.negatives())?;
    let seq_path = if discarded { paths.sequences_discarded() } else { paths.sequences() };
    let sequences = rebuild_sequences(read_jsonl(&seq_path)?, catalog)?;
    if negatives.len() != sequences.len() {
        return Err(Error::InvalidInput("negatives and sequences differ in length".into()));
    }
    let mut ledger = Vec::new();
    if discarded {
        let ledger_path = paths.ledger();
        for rec in read_jsonl::<LedgerRecord>(&ledger_path)? {
            let step = sequences
                .get(rec.sequence)
                .and_then(|s| s.steps.get(rec.position))
                .ok_or_else(|| Error::InvalidInput(format!("ledger position {}/{} out of range", rec.sequence, rec.position)))?;
            let meta = catalog.item(step.item);
            let missing = || Error::InvalidInput(format!("ledger entry {}/{} has no value", rec.sequence, rec.position));
            let value = match rec.field {
                FieldKind::Category => FieldValue::Categories(rec.categories.ok_or_else(missing)?.into()),
                FieldKind::Brand => FieldValue::Brand(rec.brand.ok_or_else(missing)?),
                FieldKind::Title => FieldValue::Title(meta.title.clone().ok_or_else(missing)?),
                FieldKind::Description => FieldValue::Description(meta.description.clone().ok_or_else(missing)?),
                FieldKind::Item => return Err(Error::InvalidInput("item IDs are never ledgered".into())),
            };
            ledger.push(LedgerEntry { sequence: rec.sequence, position: rec.position, value });
        }
    }
    Ok(SplitDataset { sequences, negatives, discard_ledger: ledger })
}
