use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::text::MISS_KEY;
use super::{pseudo_vector, Catalog, FieldedSequence, ItemMeta, TextField};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Next item is `(prev mod n_items) + 1`.
    Cyclic,
    /// Items drawn uniformly; item `i` has category `{i mod n_categories}`.
    CategoryById,
    /// Items drawn uniformly, random side information.
    Random,
    /// Item `i` has category `i mod n_categories`; the next item is drawn
    /// uniformly among items of the following category. Side fields carry
    /// part of the transition signal.
    CategoryChain,
}

impl std::str::FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(Pattern::Cyclic),
            "category_by_id" => Ok(Pattern::CategoryById),
            "random" => Ok(Pattern::Random),
            "category_chain" => Ok(Pattern::CategoryChain),
            _ => Err(Error::Config(format!("unknown synthetic pattern {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub n_categories: usize,
    pub n_brands: usize,
    pub n_sequences: usize,
    /// Sequence lengths are uniform in `[min_len, max_len]`.
    pub min_len: usize,
    pub max_len: usize,
    pub pattern: Pattern,
    /// Probability that a side field is Missing in the catalog.
    pub side_missing_rate: f64,
    pub text_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_items: 20,
            n_categories: 4,
            n_brands: 5,
            n_sequences: 100,
            min_len: 5,
            max_len: 12,
            pattern: Pattern::Cyclic,
            side_missing_rate: 0.0,
            text_dim: 16,
            seed: 0,
        }
    }
}

pub fn synth_generate(spec: &SyntheticSpec) -> Result<(Catalog, Vec<FieldedSequence>)> {
    if spec.n_items < 2 {
        return Err(Error::InvalidInput("synthetic corpus needs at least 2 items".into()));
    }
    if spec.n_categories == 0 || spec.n_brands == 0 || spec.text_dim == 0 {
        return Err(Error::InvalidInput("synthetic vocabularies must be non-empty".into()));
    }
    if spec.min_len == 0 || spec.max_len < spec.min_len {
        return Err(Error::InvalidInput("bad synthetic length range".into()));
    }
    if !(0.0..=1.0).contains(&spec.side_missing_rate) {
        return Err(Error::InvalidInput("side_missing_rate not in [0,1]".into()));
    }
    if spec.pattern == Pattern::CategoryChain && spec.n_items < spec.n_categories {
        return Err(Error::InvalidInput("category_chain needs n_items >= n_categories".into()));
    }
    let n = spec.n_items;
    let n_c = spec.n_categories;
    let mut rng = seed::rng(spec.seed, "synth-catalog", &[]);
    let mut items = vec![ItemMeta::default()];
    for i in 1..=n as u32 {
        let categories: Vec<u32> = match spec.pattern {
            Pattern::CategoryById | Pattern::CategoryChain => vec![i % n_c as u32],
            Pattern::Cyclic | Pattern::Random => {
                let first = rng.random_range(0..n_c as u32);
                let second = rng.random_range(0..n_c as u32);
                let mut c = vec![first, second];
                c.sort_unstable();
                c.dedup();
                c
            }
        };
        let brand = match spec.pattern {
            Pattern::CategoryChain => (i % n_c as u32) % spec.n_brands as u32 + 1,
            _ => rng.random_range(1..=spec.n_brands as u32),
        };
        // Chain items share text with their category, so no side field
        // identifies the item on its own.
        let text_key = match spec.pattern {
            Pattern::CategoryChain => (n + 1) as u32 + i % n_c as u32,
            _ => i,
        };
        let mut meta = ItemMeta {
            categories: Some(categories.into()),
            brand: Some(brand),
            title: Some(pseudo_vector(spec.seed, text_key, TextField::Title, spec.text_dim)),
            description: Some(pseudo_vector(spec.seed, text_key, TextField::Description, spec.text_dim)),
        };
        for f in super::FieldKind::SIDE {
            if rng.random::<f64>() < spec.side_missing_rate {
                meta.clear(f);
            }
        }
        items.push(meta);
    }
    let miss_text: Arc<[f32]> = pseudo_vector(spec.seed, 0, TextField::Title, spec.text_dim)
        .iter()
        .map(|v| -v)
        .collect();
    let catalog = Catalog {
        n_items: n,
        n_categories: n_c,
        n_brands: spec.n_brands,
        text_dim: spec.text_dim,
        item_keys: std::iter::once("[MISS]".to_string())
            .chain((1..=n).map(|i| format!("item{i}")))
            .collect(),
        category_names: (0..n_c).map(|c| format!("cat{c}")).collect(),
        brand_names: std::iter::once("[MISS]".to_string())
            .chain((1..=spec.n_brands).map(|b| format!("brand{b}")))
            .collect(),
        items,
        miss_text,
    };

    let by_category: Vec<Vec<u32>> = (0..n_c as u32)
        .map(|c| (1..=n as u32).filter(|i| i % n_c as u32 == c).collect())
        .collect();
    let sequences = (0..spec.n_sequences)
        .map(|s| {
            let mut rng = seed::rng(spec.seed, "synth-sequence", &[s as u64]);
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let mut ids = Vec::with_capacity(len);
            let mut cur = rng.random_range(1..=n as u32);
            ids.push(cur);
            while ids.len() < len {
                cur = match spec.pattern {
                    Pattern::Cyclic => cur % n as u32 + 1,
                    Pattern::Random | Pattern::CategoryById => rng.random_range(1..=n as u32),
                    Pattern::CategoryChain => {
                        let next_cat = ((cur % n_c as u32) + 1) % n_c as u32;
                        let pool = &by_category[next_cat as usize];
                        pool[rng.random_range(0..pool.len())]
                    }
                };
                ids.push(cur);
            }
            FieldedSequence::from_items(format!("user{s}"), &ids, &catalog)
        })
        .collect();
    Ok((catalog, sequences))
}

/// Writes a corpus in the raw ingestion formats: `interactions.tsv`,
/// `metadata.jsonl`, `title.vec` and `description.vec`.
pub fn write_raw_corpus(catalog: &Catalog, sequences: &[FieldedSequence], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let inter_path = dir.join("interactions.tsv");
    let meta_path = dir.join("metadata.jsonl");
    let title_path = dir.join("title.vec");
    let desc_path = dir.join("description.vec");
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p.clone(), e)
    };

    let mut w = BufWriter::new(fs::File::create(&inter_path).map_err(io(&inter_path))?);
    for s in sequences {
        for (t, step) in s.steps.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}", s.user, catalog.item_keys[step.item as usize], t + 1)
                .map_err(io(&inter_path))?;
        }
    }
    w.flush().map_err(io(&inter_path))?;

    let mut w = BufWriter::new(fs::File::create(&meta_path).map_err(io(&meta_path))?);
    for i in 1..=catalog.n_items {
        let m = &catalog.items[i];
        let key = &catalog.item_keys[i];
        let row = serde_json::json!({
            "item": key,
            "categories": m.categories.as_ref().map(|c| c.iter().map(|&c| catalog.category_names[c as usize].clone()).collect::<Vec<_>>()).unwrap_or_default(),
            "brand": m.brand.map(|b| catalog.brand_names[b as usize].clone()),
            "title": m.title.as_ref().map(|_| format!("title of {key}")),
            "description": m.description.as_ref().map(|_| format!("description of {key}")),
        });
        writeln!(w, "{row}").map_err(io(&meta_path))?;
    }
    w.flush().map_err(io(&meta_path))?;

    for (path, field) in [(&title_path, TextField::Title), (&desc_path, TextField::Description)] {
        let mut w = BufWriter::new(fs::File::create(path).map_err(io(path))?);
        writeln!(w, "item_id {}", catalog.text_dim).map_err(io(path))?;
        let mut row = |key: &str, v: &[f32]| -> std::io::Result<()> {
            write!(w, "{key}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)
        };
        if field == TextField::Title {
            row(MISS_KEY, &catalog.miss_text).map_err(io(path))?;
        }
        for i in 1..=catalog.n_items {
            let m = &catalog.items[i];
            let v = match field {
                TextField::Title => &m.title,
                TextField::Description => &m.description,
            };
            if let Some(v) = v {
                row(&catalog.item_keys[i], v).map_err(io(path))?;
            }
        }
        w.flush().map_err(io(path))?;
    }
    Ok(vec![inter_path, meta_path, title_path, desc_path])
}
