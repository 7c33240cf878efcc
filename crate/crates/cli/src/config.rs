//! Run configuration: flat `key = value` lines grouped under `[section]`
//! headers. Unknown sections or keys are rejected up front.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use miir::data::{Pattern, Split, SplitConfig, SyntheticSpec};
use miir::model::{AttentionScale, MaskKind, ModelConfig};
use miir::seed;
use miir::trainer::{Regime, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSourceKind {
    /// Title and description vectors read from `.vec` files.
    File,
    /// Deterministic pseudo-vectors keyed by item and seed.
    Pseudo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub interactions: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub title_vectors: Option<PathBuf>,
    pub description_vectors: Option<PathBuf>,
    pub text_source: TextSourceKind,
    /// Pseudo-vector dimension; file vectors carry their own.
    pub text_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n_negatives: usize,
    pub discard_prob: f64,
    /// Directory written by `prep`, read by the other commands.
    pub prepared: Option<PathBuf>,
    /// Train and evaluate on the discarded sequences.
    pub use_discarded: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        let split = SplitConfig::default();
        DataSection {
            interactions: None,
            metadata: None,
            title_vectors: None,
            description_vectors: None,
            text_source: TextSourceKind::Pseudo,
            text_dim: 768,
            min_len: split.min_len,
            max_len: split.max_len,
            n_negatives: split.n_negatives,
            discard_prob: 0.5,
            prepared: None,
            use_discarded: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_items: usize,
    pub n_categories: usize,
    pub n_brands: usize,
    pub n_sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub pattern: Pattern,
    pub side_missing_rate: f64,
    pub text_dim: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        SynthSection {
            n_items: s.n_items,
            n_categories: s.n_categories,
            n_brands: s.n_brands,
            n_sequences: s.n_sequences,
            min_len: s.min_len,
            max_len: s.max_len,
            pattern: s.pattern,
            side_missing_rate: s.side_missing_rate,
            text_dim: s.text_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embedding_size: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
    pub mask_kind: MaskKind,
    pub attention_scale: AttentionScale,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            embedding_size: m.embedding_size,
            heads: m.heads,
            layers: m.layers,
            dropout_rate: m.dropout_rate,
            max_len: m.max_len,
            mask_kind: m.mask_kind,
            attention_scale: m.attention_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_min: f64,
    pub clip_max: f64,
    pub mask_probability: f64,
    pub regime: Regime,
    pub finetune_epochs: usize,
    pub max_steps: Option<usize>,
    /// Continue from `checkpoint.bin` in the output directory if present.
    pub resume: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            clip_min: t.clip_min,
            clip_max: t.clip_max,
            mask_probability: t.mask_probability,
            regime: t.regime,
            finetune_epochs: t.finetune_epochs,
            max_steps: t.max_steps,
            resume: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    /// Sequence whose attention `dump-attn` writes.
    pub user: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { checkpoint: None, split: Split::Test, user: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub data: DataSection,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

/// Parses an override value as a config literal, falling back to a bare
/// string so `--set eval.user=alice` needs no quoting.
fn override_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?} is not of the form key=value"))?;
    let value = override_value(value);
    match key.trim().split_once('.') {
        None => {
            table.insert(key.trim().to_string(), value);
        }
        Some((section, field)) => {
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let sec = entry
                .as_table_mut()
                .ok_or_else(|| anyhow!("{section:?} is not a section"))?;
            sec.insert(field.to_string(), value);
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        Self::parse_with(text, origin, &[], None)
    }

    /// Parses `text`, applies `section.key=value` overrides and an optional
    /// seed, then validates everything.
    pub fn parse_with(text: &str, origin: &str, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table: toml::Table = text.parse().with_context(|| format!("parsing {origin}"))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .with_context(|| format!("invalid configuration in {origin}"))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse_with(&text, &p.display().to_string(), overrides, seed)
            }
            None => Self::parse_with("", "<defaults>", overrides, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        // text_dim is taken from the catalog at train time.
        self.model_config(1).validate()?;
        self.train_config().validate()?;
        let d = &self.data;
        if d.min_len < 3 || d.max_len < d.min_len {
            bail!("data.min_len must be >= 3 and <= data.max_len");
        }
        if !(0.0..=1.0).contains(&d.discard_prob) {
            bail!("data.discard_prob {} not in [0, 1]", d.discard_prob);
        }
        if d.text_dim == 0 {
            bail!("data.text_dim must be positive");
        }
        let s = &self.synth;
        if s.min_len == 0 || s.max_len < s.min_len {
            bail!("synth.min_len must be >= 1 and <= synth.max_len");
        }
        if !(0.0..=1.0).contains(&s.side_missing_rate) {
            bail!("synth.side_missing_rate {} not in [0, 1]", s.side_missing_rate);
        }
        Ok(())
    }

    pub fn model_config(&self, text_dim: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            embedding_size: m.embedding_size,
            heads: m.heads,
            layers: m.layers,
            dropout_rate: m.dropout_rate,
            max_len: m.max_len,
            text_dim,
            mask_kind: m.mask_kind,
            attention_scale: m.attention_scale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            clip_min: t.clip_min,
            clip_max: t.clip_max,
            mask_probability: t.mask_probability,
            regime: t.regime,
            finetune_epochs: t.finetune_epochs,
            master_seed: self.seed,
            max_steps: t.max_steps,
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig { min_len: self.data.min_len, max_len: self.data.max_len, n_negatives: self.data.n_negatives }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.synth;
        SyntheticSpec {
            n_items: s.n_items,
            n_categories: s.n_categories,
            n_brands: s.n_brands,
            n_sequences: s.n_sequences,
            min_len: s.min_len,
            max_len: s.max_len,
            pattern: s.pattern,
            side_missing_rate: s.side_missing_rate,
            text_dim: s.text_dim,
            seed: seed::derive(self.seed, "synth", &[]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = RunConfig::parse("", "t").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.data.n_negatives, 99);
    }

    #[test]
    fn sections_and_comments() {
        let text = "seed = 7\n# comment\n[model]\nembedding_size = 32 # inline\nmask_kind = \"sparse\"\n[train]\nregime = \"mii_then_rec\"\nclip_min = -3\n";
        let cfg = RunConfig::parse(text, "t").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.embedding_size, 32);
        assert_eq!(cfg.model.mask_kind, MaskKind::Sparse);
        assert_eq!(cfg.train.regime, Regime::MiiThenRec);
        assert_eq!(cfg.train.clip_min, -3.0);
        assert_eq!(cfg.train_config().master_seed, 7);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[train]\nlearning_rat = 0.1\n", "t").unwrap_err();
        assert!(format!("{err:#}").contains("learning_rat"), "{err:#}");
        assert!(RunConfig::parse("[bogus]\nx = 1\n", "t").is_err());
        assert!(RunConfig::parse("colour = 1\n", "t").is_err());
    }

    #[test]
    fn values_are_validated() {
        assert!(RunConfig::parse("[train]\nclip_min = 5\nclip_max = -5\n", "t").is_err());
        assert!(RunConfig::parse("[model]\nembedding_size = 30\nheads = 4\n", "t").is_err());
        assert!(RunConfig::parse("[model]\nmask_kind = \"diagonal\"\n", "t").is_err());
        assert!(RunConfig::parse("[data]\ndiscard_prob = 1.5\n", "t").is_err());
        assert!(RunConfig::parse("[train]\nbatch_size = -1\n", "t").is_err());
    }

    #[test]
    fn overrides_and_seed_flag() {
        let sets = vec![
            "train.learning_rate=1e-3".to_string(),
            "eval.user=alice".to_string(),
            "synth.pattern=category_by_id".to_string(),
            "seed=3".to_string(),
        ];
        let cfg = RunConfig::parse_with("[train]\nlearning_rate = 0.5\n", "t", &sets, None).unwrap();
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.eval.user.as_deref(), Some("alice"));
        assert_eq!(cfg.synth.pattern, Pattern::CategoryById);
        assert_eq!(cfg.seed, 3);
        let cfg = RunConfig::parse_with("", "t", &sets, Some(11)).unwrap();
        assert_eq!(cfg.seed, 11);
        assert!(RunConfig::parse_with("", "t", &["train.nope=1".into()], None).is_err());
        assert!(RunConfig::parse_with("", "t", &["novalue".into()], None).is_err());
    }
}
