use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::{Catalog, FieldedSequence, ItemMeta, Step, TextField, TextVectorProvider};
use crate::{Error, Result};

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct IngestReport {
    /// Items that appear in interactions but have no metadata row.
    pub items_without_metadata: usize,
    /// Text fields present in metadata whose vector could not be found.
    pub absent_text_vectors: usize,
    pub interactions: usize,
}

#[derive(Deserialize)]
struct MetadataRow {
    item: String,
    #[serde(default)]
    categories: Option<Vec<String>>,
    #[serde(default)]
    brand: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    description: Option<String>,
}

pub fn ingest(
    interactions_path: &Path,
    metadata_path: &Path,
    vectors: &TextVectorProvider,
) -> Result<(Catalog, Vec<FieldedSequence>, IngestReport)> {
    let interactions = File::open(interactions_path).map_err(|e| Error::io(interactions_path, e))?;
    let metadata = File::open(metadata_path).map_err(|e| Error::io(metadata_path, e))?;
    ingest_readers(
        BufReader::new(interactions),
        interactions_path,
        BufReader::new(metadata),
        metadata_path,
        vectors,
    )
}

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.trim().is_empty())
}

/// Reader-based ingestion; paths are only used in error messages.
pub fn ingest_readers(
    interactions: impl BufRead,
    interactions_name: &Path,
    metadata: impl BufRead,
    metadata_name: &Path,
    vectors: &TextVectorProvider,
) -> Result<(Catalog, Vec<FieldedSequence>, IngestReport)> {
    let mut report = IngestReport::default();

    // Interactions: user -> [(timestamp, item key)] in input order.
    let mut user_order: Vec<String> = Vec::new();
    let mut records: HashMap<String, Vec<(i64, usize)>> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut item_keys: Vec<String> = vec!["[MISS]".to_string()];

    for (i, line) in interactions.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(interactions_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                interactions_name,
                lineno,
                format!("expected user<TAB>item<TAB>timestamp, found {} columns", cols.len()),
            ));
        }
        let ts: i64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(interactions_name, lineno, format!("bad timestamp {:?}", cols[2])))?;
        let item = *item_index.entry(cols[1].to_string()).or_insert_with(|| {
            item_keys.push(cols[1].to_string());
            (item_keys.len() - 1) as u32
        });
        let user = cols[0].to_string();
        records
            .entry(user.clone())
            .or_insert_with(|| {
                user_order.push(user);
                Vec::new()
            })
            .push((ts, item as usize));
        report.interactions += 1;
    }

    // Metadata: vocabularies in first-seen order.
    let mut category_index: HashMap<String, u32> = HashMap::new();
    let mut category_names: Vec<String> = Vec::new();
    let mut brand_index: HashMap<String, u32> = HashMap::new();
    let mut brand_names: Vec<String> = vec!["[MISS]".to_string()];
    let mut raw_meta: HashMap<u32, (Option<Vec<u32>>, Option<u32>, bool, bool)> = HashMap::new();

    for (i, line) in metadata.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(metadata_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: MetadataRow = serde_json::from_str(&line)
            .map_err(|e| Error::parse(metadata_name, lineno, e.to_string()))?;
        let item = *item_index.entry(row.item.clone()).or_insert_with(|| {
            item_keys.push(row.item.clone());
            (item_keys.len() - 1) as u32
        });
        if raw_meta.contains_key(&item) {
            continue;
        }
        let categories = row.categories.filter(|c| !c.is_empty()).map(|cats| {
            let mut idx: Vec<u32> = cats
                .into_iter()
                .map(|c| {
                    *category_index.entry(c.clone()).or_insert_with(|| {
                        category_names.push(c);
                        (category_names.len() - 1) as u32
                    })
                })
                .collect();
            idx.sort_unstable();
            idx.dedup();
            idx
        });
        let brand = non_empty(row.brand).map(|b| {
            *brand_index.entry(b.clone()).or_insert_with(|| {
                brand_names.push(b);
                (brand_names.len() - 1) as u32
            })
        });
        let has_title = non_empty(row.title).is_some();
        let has_desc = non_empty(row.description).is_some();
        raw_meta.insert(item, (categories, brand, has_title, has_desc));
    }

    let n_items = item_keys.len() - 1;
    let mut items = vec![ItemMeta::default(); n_items + 1];
    let mut has_meta = vec![false; n_items + 1];
    for idx in 1..=n_items as u32 {
        let key = &item_keys[idx as usize];
        let Some((cats, brand, has_title, has_desc)) = raw_meta.remove(&idx) else {
            continue;
        };
        has_meta[idx as usize] = true;
        let absent_before = vectors.absent_count();
        let title = has_title
            .then(|| vectors.lookup(idx, key, TextField::Title))
            .flatten();
        let description = has_desc
            .then(|| vectors.lookup(idx, key, TextField::Description))
            .flatten();
        report.absent_text_vectors += vectors.absent_count() - absent_before;
        items[idx as usize] = ItemMeta {
            categories: cats.map(Arc::from),
            brand,
            title,
            description,
        };
    }

    let mut sequences = Vec::with_capacity(user_order.len());
    let mut in_interactions = vec![false; n_items + 1];
    for user in user_order {
        let mut recs = records.remove(&user).unwrap_or_default();
        // Stable: ties keep input order.
        recs.sort_by_key(|r| r.0);
        let steps = recs
            .into_iter()
            .map(|(_, item)| {
                in_interactions[item] = true;
                Step {
                    item: item as u32,
                    fields: items[item].clone(),
                }
            })
            .collect();
        sequences.push(FieldedSequence { user, steps });
    }
    report.items_without_metadata = (1..=n_items)
        .filter(|&i| in_interactions[i] && !has_meta[i])
        .count();

    let catalog = Catalog {
        n_items,
        n_categories: category_names.len(),
        n_brands: brand_names.len() - 1,
        text_dim: vectors.dim(),
        item_keys,
        category_names,
        brand_names,
        items,
        miss_text: vectors.miss_vector(),
    };
    Ok((catalog, sequences, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn run(inter: &str, meta: &str) -> Result<(Catalog, Vec<FieldedSequence>, IngestReport)> {
        let p = TextVectorProvider::pseudo(1, 8);
        ingest_readers(
            Cursor::new(inter.to_string()),
            Path::new("inter.tsv"),
            Cursor::new(meta.to_string()),
            Path::new("meta.jsonl"),
            &p,
        )
    }

    #[test]
    fn records_are_sorted_by_timestamp() {
        let inter = "u1\ta\t3\nu1\tb\t1\nu1\tc\t2\n";
        let meta = r#"{"item":"a","categories":["x"],"brand":"B","title":"t","description":"d"}"#;
        let (cat, seqs, _) = run(inter, meta).unwrap();
        let keys: Vec<&str> = seqs[0]
            .item_ids()
            .map(|i| cat.item_keys[i as usize].as_str())
            .collect();
        assert_eq!(keys, ["b", "c", "a"]);
    }

    #[test]
    fn timestamp_ties_keep_input_order() {
        let inter = "u\tz\t5\nu\ty\t5\nu\tx\t1\n";
        let (cat, seqs, _) = run(inter, "").unwrap();
        let keys: Vec<&str> = seqs[0]
            .item_ids()
            .map(|i| cat.item_keys[i as usize].as_str())
            .collect();
        assert_eq!(keys, ["x", "z", "y"]);
    }

    #[test]
    fn empty_category_list_is_missing() {
        let inter = "u\ta\t1\n";
        let meta = r#"{"item":"a","categories":[],"brand":null,"title":"hello","description":null}"#;
        let (cat, seqs, report) = run(inter, meta).unwrap();
        let m = &seqs[0].steps[0].fields;
        assert!(m.categories.is_none());
        assert!(m.brand.is_none());
        assert!(m.title.is_some());
        assert!(m.description.is_none());
        assert_eq!(report.items_without_metadata, 0);
        assert_eq!(cat.n_brands, 0);
    }

    #[test]
    fn vocabularies_follow_first_seen_order() {
        let inter = "u\tb\t1\nu\ta\t2\n";
        let meta = concat!(
            r#"{"item":"a","categories":["y","x"],"brand":"B2"}"#,
            "\n",
            r#"{"item":"b","categories":["x"],"brand":"B1"}"#,
            "\n",
            r#"{"item":"c","categories":["z"],"brand":"B1"}"#
        );
        let (cat, _, _) = run(inter, meta).unwrap();
        assert_eq!(cat.item_keys, ["[MISS]", "b", "a", "c"]);
        assert_eq!(cat.category_names, ["y", "x", "z"]);
        assert_eq!(cat.brand_names, ["[MISS]", "B2", "B1"]);
        assert_eq!(&*cat.item(2).categories.clone().unwrap(), &[0, 1]);
        assert_eq!(cat.item(1).brand, Some(2));
        assert_eq!(cat.n_items, 3);
        cat.validate().unwrap();
    }

    #[test]
    fn item_without_metadata_is_kept_and_counted() {
        let (cat, seqs, report) = run("u\tq\t1\nu\tr\t2\n", r#"{"item":"r","brand":"B"}"#).unwrap();
        assert_eq!(seqs[0].len(), 2);
        assert_eq!(cat.item(1).missing_side_fields(), 4);
        assert_eq!(report.items_without_metadata, 1);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let err = run("u\ta\t1\nu\tb\n", "").unwrap_err();
        assert!(err.to_string().contains("inter.tsv:2"), "{err}");
        let err = run("u\ta\tx\n", "").unwrap_err();
        assert!(err.to_string().contains("inter.tsv:1"), "{err}");
        let err = run("u\ta\t1\n", "{\"item\":\"a\"}\n{broken").unwrap_err();
        assert!(err.to_string().contains("meta.jsonl:2"), "{err}");
    }
}
