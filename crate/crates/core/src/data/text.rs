use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextField {
    Title,
    Description,
}

impl TextField {
    fn code(self) -> u64 {
        match self {
            TextField::Title => 1,
            TextField::Description => 2,
        }
    }
}

#[derive(Debug)]
pub enum TextSource {
    /// Vectors loaded from text-vector files, keyed by raw item id.
    File {
        title: HashMap<String, Arc<[f32]>>,
        description: HashMap<String, Arc<[f32]>>,
    },
    /// Deterministic unit vectors derived from `(seed, item, field)`.
    Pseudo { seed: u64 },
}

/// Serves fixed-length title/description vectors.
#[derive(Debug)]
pub struct TextVectorProvider {
    source: TextSource,
    dim: usize,
    miss_vector: Arc<[f32]>,
    absent: AtomicUsize,
}

/// Key under which a file may carry the explicit missing-text vector.
pub const MISS_KEY: &str = "[CLS][SEP]";

/// Unit-norm Gaussian direction keyed by `(seed, item, field)`.
pub fn pseudo_vector(seed: u64, item: u32, field: TextField, dim: usize) -> Arc<[f32]> {
    let mut rng = seed::rng(seed, "text-vector", &[item as u64, field.code()]);
    unit_gaussian(&mut rng, dim)
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Arc<[f32]> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v.into_iter().map(|x| x as f32).collect()
}

impl TextVectorProvider {
    pub fn pseudo(seed: u64, dim: usize) -> Self {
        let mut rng = seed::rng(seed, "text-miss", &[]);
        TextVectorProvider {
            source: TextSource::Pseudo { seed },
            dim,
            miss_vector: unit_gaussian(&mut rng, dim),
            absent: AtomicUsize::new(0),
        }
    }

    /// Loads title and description vector files. The missing vector is the
    /// `[CLS][SEP]` row of the title file when present, zeros otherwise.
    pub fn from_files(title_path: &Path, description_path: &Path) -> Result<Self> {
        let (title, dim_t) = read_vector_file(title_path)?;
        let (description, dim_d) = read_vector_file(description_path)?;
        if dim_t != dim_d {
            return Err(Error::InvalidInput(format!(
                "title vectors have dimension {dim_t} but description vectors have {dim_d}"
            )));
        }
        Ok(Self::from_maps(title, description, dim_t))
    }

    pub fn from_maps(
        mut title: HashMap<String, Arc<[f32]>>,
        mut description: HashMap<String, Arc<[f32]>>,
        dim: usize,
    ) -> Self {
        let miss_vector = title
            .remove(MISS_KEY)
            .unwrap_or_else(|| vec![0.0; dim].into());
        description.remove(MISS_KEY);
        TextVectorProvider {
            source: TextSource::File { title, description },
            dim,
            miss_vector,
            absent: AtomicUsize::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn miss_vector(&self) -> Arc<[f32]> {
        self.miss_vector.clone()
    }

    /// Number of file lookups that found no entry.
    pub fn absent_count(&self) -> usize {
        self.absent.load(Ordering::Relaxed)
    }

    /// The stored vector, or `None` when a file provider has no entry
    /// (the miss is counted).
    pub fn lookup(&self, item_index: u32, item_key: &str, field: TextField) -> Option<Arc<[f32]>> {
        match &self.source {
            TextSource::Pseudo { seed } => Some(pseudo_vector(*seed, item_index, field, self.dim)),
            TextSource::File { title, description } => {
                let map = match field {
                    TextField::Title => title,
                    TextField::Description => description,
                };
                let found = map.get(item_key).cloned();
                if found.is_none() {
                    self.absent.fetch_add(1, Ordering::Relaxed);
                }
                found
            }
        }
    }

    /// Vector for a field; Missing fields and absent entries map to the
    /// miss vector.
    pub fn get_text_vector(
        &self,
        item_index: u32,
        item_key: &str,
        field: TextField,
        present: bool,
    ) -> Arc<[f32]> {
        if !present {
            return self.miss_vector();
        }
        self.lookup(item_index, item_key, field)
            .unwrap_or_else(|| self.miss_vector())
    }
}

fn read_vector_file(path: &Path) -> Result<(HashMap<String, Arc<[f32]>>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty vector file"))?
        .map_err(|e| Error::io(path, e))?;
    let mut head = header.split_whitespace();
    let dim: usize = match (head.next(), head.next(), head.next()) {
        (Some(_), Some(d), None) => d
            .parse()
            .map_err(|_| Error::parse(path, 1, format!("bad dimension {d:?}")))?,
        _ => return Err(Error::parse(path, 1, "header must be `item_id <dim>`")),
    };
    let mut map = HashMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let key = parts.next().unwrap().to_string();
        let values = parts
            .map(|p| p.parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite value"));
        }
        map.insert(key, values.into());
    }
    Ok((map, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::IndexedRandom;
    use std::io::Write;

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn missing_field_returns_shared_miss_vector() {
        let p = TextVectorProvider::pseudo(3, 16);
        let a = p.get_text_vector(4, "a", TextField::Title, false);
        let b = p.get_text_vector(9, "b", TextField::Description, false);
        assert_eq!(a, b);
        assert_eq!(a, p.miss_vector());
    }

    #[test]
    fn pseudo_vectors_are_deterministic_unit_vectors() {
        let a = pseudo_vector(1, 5, TextField::Title, 16);
        let b = pseudo_vector(1, 5, TextField::Title, 16);
        assert_eq!(a, b);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-6);
        assert_ne!(a, pseudo_vector(1, 5, TextField::Description, 16));
        assert_ne!(a, pseudo_vector(2, 5, TextField::Title, 16));
    }

    /// Separation of distinct items. At d_text = 16 an isotropic
    /// construction has E[cos^2] = 1/16, so a few percent of pairs exceed
    /// |cos| = 0.5; the all-pairs bound is asserted from d_text = 128 on
    /// and the second-moment identity at 16.
    #[test]
    fn pseudo_vectors_of_distinct_items_are_nearly_orthogonal() {
        let mut rng = seed::rng(11, "pairs", &[]);
        let items: Vec<u32> = (1..=5000).collect();
        for dim in [128usize, 768] {
            for _ in 0..1000 {
                let pair: Vec<&u32> = items.choose_multiple(&mut rng, 2).collect();
                let a = pseudo_vector(1, *pair[0], TextField::Title, dim);
                let b = pseudo_vector(1, *pair[1], TextField::Title, dim);
                assert!(cosine(&a, &b).abs() < 0.5, "dim {dim}");
            }
        }
        let mut sq = 0.0;
        let mut over = 0usize;
        for _ in 0..1000 {
            let pair: Vec<&u32> = items.choose_multiple(&mut rng, 2).collect();
            let a = pseudo_vector(1, *pair[0], TextField::Title, 16);
            let b = pseudo_vector(1, *pair[1], TextField::Title, 16);
            let c = cosine(&a, &b);
            sq += c * c;
            over += (c.abs() >= 0.5) as usize;
        }
        let mean_sq = sq / 1000.0;
        assert!((mean_sq - 1.0 / 16.0).abs() < 0.015, "mean cos^2 {mean_sq}");
        assert!(over < 100, "{over} pairs at or above 0.5");
    }

    #[test]
    fn file_provider_counts_absent_entries() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.vec");
        let d = dir.path().join("d.vec");
        let mut f = File::create(&t).unwrap();
        writeln!(f, "item_id 3\nA 1 0 0\n[CLS][SEP] 0 0 1").unwrap();
        let mut f = File::create(&d).unwrap();
        writeln!(f, "item_id 3\nA 0 1 0").unwrap();
        let p = TextVectorProvider::from_files(&t, &d).unwrap();
        assert_eq!(&*p.miss_vector(), &[0.0, 0.0, 1.0]);
        assert_eq!(&*p.get_text_vector(1, "A", TextField::Title, true), &[1.0, 0.0, 0.0]);
        assert_eq!(p.get_text_vector(2, "B", TextField::Title, true), p.miss_vector());
        assert_eq!(p.absent_count(), 1);
    }

    #[test]
    fn vector_file_with_wrong_width_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.vec");
        std::fs::write(&t, "item_id 2\nA 1 0\nB 1\n").unwrap();
        let err = TextVectorProvider::from_files(&t, &t).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }
}
