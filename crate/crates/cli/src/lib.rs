//! Command implementations behind the `miir` binary.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use miir::data::{
    filter_and_split, ingest, load_catalog, load_dataset, save_catalog, save_dataset, synth_generate,
    write_raw_corpus, Catalog, DatasetStats, PreparedPaths, Split, SplitDataset, TextVectorProvider,
};
use miir::eval::{dump_attention, eval_imputation, eval_ranking, EvalReport};
use miir::model::{ModelParams, VocabSizes};
use miir::seed;
use miir::trainer::{load_checkpoint, read_checkpoint, save_checkpoint, train_from};

pub use config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Prep,
    Train,
    Eval,
    Impute,
    DumpAttn,
}

/// Files written by a command. Unless `commit` is called, dropping the
/// guard removes every tracked file.
#[derive(Debug, Default)]
pub struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn track(&mut self, path: impl Into<PathBuf>) -> PathBuf {
        let path = path.into();
        if !self.paths.contains(&path) {
            self.paths.push(path.clone());
        }
        path
    }

    pub fn write(&mut self, path: impl Into<PathBuf>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.track(path);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.paths)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.paths {
            let _ = fs::remove_file(p);
        }
    }
}

fn json_pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn prepared_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .prepared
        .as_deref()
        .ok_or_else(|| anyhow!("data.prepared must name a directory written by `prep`"))
}

fn load_prepared(cfg: &RunConfig, discarded: bool) -> Result<(Catalog, SplitDataset)> {
    let dir = prepared_dir(cfg)?;
    let catalog = load_catalog(dir).with_context(|| format!("loading catalog from {}", dir.display()))?;
    let dataset = load_dataset(dir, &catalog, discarded).with_context(|| format!("loading dataset from {}", dir.display()))?;
    Ok((catalog, dataset))
}

fn load_params(cfg: &RunConfig, catalog: &Catalog) -> Result<ModelParams<f32>> {
    let path = cfg
        .eval
        .checkpoint
        .as_deref()
        .ok_or_else(|| anyhow!("eval.checkpoint is required"))?;
    let ckpt = read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let params = ckpt.state.best_params;
    if params.vocab != VocabSizes::of(catalog) || params.config.text_dim != catalog.text_dim {
        bail!("checkpoint {} was trained on a different catalog", path.display());
    }
    Ok(params)
}

fn synth(cfg: &RunConfig, out: &Path, guard: &mut OutputGuard) -> Result<()> {
    let (catalog, seqs) = synth_generate(&cfg.synthetic_spec())?;
    for p in [
        "interactions.tsv",
        "metadata.jsonl",
        "title.vec",
        "description.vec",
    ] {
        guard.track(out.join(p));
    }
    for p in write_raw_corpus(&catalog, &seqs, out)? {
        guard.track(p);
    }
    Ok(())
}

fn prep(cfg: &RunConfig, out: &Path, guard: &mut OutputGuard) -> Result<()> {
    let d = &cfg.data;
    let interactions = d.interactions.as_deref().ok_or_else(|| anyhow!("data.interactions is required"))?;
    let metadata = d.metadata.as_deref().ok_or_else(|| anyhow!("data.metadata is required"))?;
    let provider = match d.text_source {
        config::TextSourceKind::Pseudo => TextVectorProvider::pseudo(seed::derive(cfg.seed, "text", &[]), d.text_dim),
        config::TextSourceKind::File => {
            let t = d.title_vectors.as_deref().ok_or_else(|| anyhow!("data.title_vectors is required"))?;
            let s = d
                .description_vectors
                .as_deref()
                .ok_or_else(|| anyhow!("data.description_vectors is required"))?;
            TextVectorProvider::from_files(t, s)?
        }
    };
    let (catalog, seqs, report) = ingest(interactions, metadata, &provider)?;
    eprintln!(
        "ingested {} interactions; {} items without metadata; {} text vectors absent",
        report.interactions, report.items_without_metadata, report.absent_text_vectors
    );
    let original = filter_and_split(&seqs, catalog.n_items, &cfg.split_config(), seed::derive(cfg.seed, "split", &[]))?;
    let discarded = original.with_discard(d.discard_prob, seed::derive(cfg.seed, "discard", &[]))?;
    let paths = PreparedPaths::new(out);
    for p in paths.all() {
        guard.track(p);
    }
    save_catalog(&catalog, out)?;
    save_dataset(&original, &discarded, out)?;
    let stats = DatasetStats::compute(&catalog, &original, &discarded)?;
    guard.write(paths.stats(), json_pretty(&stats)?)?;
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path, guard: &mut OutputGuard) -> Result<()> {
    let (catalog, dataset) = load_prepared(cfg, cfg.data.use_discarded)?;
    let model = cfg.model_config(catalog.text_dim);
    let tcfg = cfg.train_config();
    let ckpt = out.join("checkpoint.bin");
    let resume = if cfg.train.resume && ckpt.exists() {
        Some(load_checkpoint(&ckpt, &model, &tcfg).with_context(|| format!("resuming from {}", ckpt.display()))?)
    } else {
        // A checkpoint left by an earlier run stays; a new one is ours.
        guard.track(&ckpt);
        None
    };
    let state = train_from(&dataset, &catalog, &model, &tcfg, resume, |s| {
        save_checkpoint(&ckpt, s, &model, &tcfg)
    })?;
    save_checkpoint(&ckpt, &state, &model, &tcfg)?;
    guard.write(out.join("history.csv"), state.history.to_csv())?;
    let report = EvalReport {
        split: Some(Split::Validation),
        ranking: eval_ranking(&state.best_params, &dataset, Split::Validation)?,
        imputation: None,
    };
    guard.write(out.join("report.json"), json_pretty(&report)?)?;
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Path, guard: &mut OutputGuard) -> Result<()> {
    let (catalog, dataset) = load_prepared(cfg, cfg.data.use_discarded)?;
    let params = load_params(cfg, &catalog)?;
    let report = EvalReport {
        split: Some(cfg.eval.split),
        ranking: eval_ranking(&params, &dataset, cfg.eval.split)?,
        imputation: None,
    };
    guard.write(out.join("eval_report.json"), json_pretty(&report)?)?;
    Ok(())
}

fn impute(cfg: &RunConfig, out: &Path, guard: &mut OutputGuard) -> Result<()> {
    let (catalog, dataset) = load_prepared(cfg, true)?;
    let params = load_params(cfg, &catalog)?;
    let (metrics, instances) = eval_imputation(&params, &dataset.sequences, &dataset.discard_ledger)?;
    guard.write(out.join("imputation.json"), json_pretty(&metrics)?)?;
    let mut lines = String::new();
    for inst in &instances {
        lines.push_str(&serde_json::to_string(inst)?);
        lines.push('\n');
    }
    guard.write(out.join("predictions.jsonl"), lines)?;
    Ok(())
}

fn dump_attn(cfg: &RunConfig, out: &Path, guard: &mut OutputGuard) -> Result<()> {
    let (catalog, dataset) = load_prepared(cfg, cfg.data.use_discarded)?;
    let params = load_params(cfg, &catalog)?;
    let user = cfg.eval.user.as_deref().ok_or_else(|| anyhow!("eval.user is required"))?;
    let index = dataset
        .sequences
        .iter()
        .position(|s| s.user == user)
        .ok_or_else(|| anyhow!("no sequence for user {user:?}"))?;
    let (observed, _, _) = dataset.case(index, cfg.eval.split);
    for map in dump_attention(&params, observed)? {
        guard.write(out.join(format!("attn_l{}_h{}.csv", map.layer, map.head)), map.to_csv())?;
    }
    Ok(())
}

/// Runs `command`, writing into `out`. On error every file the command
/// created is removed. Returns the written paths.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let created = !out.exists();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut guard = OutputGuard::default();
    let result = match command {
        Command::Synth => synth(cfg, out, &mut guard),
        Command::Prep => prep(cfg, out, &mut guard),
        Command::Train => train(cfg, out, &mut guard),
        Command::Eval => eval(cfg, out, &mut guard),
        Command::Impute => impute(cfg, out, &mut guard),
        Command::DumpAttn => dump_attn(cfg, out, &mut guard),
    };
    if let Err(e) = result {
        drop(guard);
        if created {
            let _ = fs::remove_dir(out);
        }
        return Err(e);
    }
    let mut paths = guard.commit();
    paths.retain(|p| p.exists());
    Ok(paths)
}
