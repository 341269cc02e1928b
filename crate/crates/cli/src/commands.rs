//! Subcommand implementations over the run directory layout
//! `<output_dir>/<run_id>/fold_<i>/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use casematch_core::aligner::Aligner;
use casematch_core::config::{Component, RunConfig};
use casematch_core::corpus::{
    build_alignment_dataset, build_fsi_dataset, load_dataset, load_predictions, stratified_kfold, write_jsonl,
    CasePair, FoldSplit, PairRecord, PredictionRecord,
};
use casematch_core::encoder::{build_encoder, SentenceEncoder};
use casematch_core::fsi::FsiModel;
use casematch_core::learning::{FgmConfig, HeadArtifact, TrainingConfig};
use casematch_core::matcher::Matcher;
use casematch_core::metrics::{aggregate_folds, evaluate, evaluate_pooled, Aggregation, EvaluationReport};
use casematch_core::pipeline::{fold_pairs, predict_pairs, to_records, train_components, PipelineOptions, TrainedComponents};
use casematch_core::synth::{generate, SyntheticSpec};
use casematch_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::settings::{run_id, sha256_hex};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Paths of one run.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(config: &RunConfig, run_id_override: Option<&str>) -> Self {
        let id = run_id_override.map_or_else(|| run_id(config), str::to_string);
        RunLayout { root: config.output_dir.join(id) }
    }

    pub fn fold(&self, fold_id: usize) -> PathBuf {
        self.root.join(format!("fold_{fold_id}"))
    }

    pub fn split(&self, fold_id: usize) -> PathBuf {
        self.fold(fold_id).join("split.json")
    }

    pub fn head(&self, fold_id: usize, component: Component) -> PathBuf {
        self.fold(fold_id).join("heads").join(format!("{component}.json"))
    }

    pub fn manifest(&self, fold_id: usize) -> PathBuf {
        self.fold(fold_id).join("manifest.json")
    }

    pub fn predictions(&self, fold_id: usize) -> PathBuf {
        self.fold(fold_id).join("predictions.jsonl")
    }
}

/// Per-fold record of everything needed to reproduce the fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub fold_id: usize,
    pub seed: u64,
    pub corpus_sha256: String,
    pub config: RunConfig,
    pub components: BTreeMap<Component, ComponentManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentManifest {
    pub head: PathBuf,
    pub training: TrainingConfig,
    pub fgm: FgmConfig,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub n_pairs: usize,
    /// Cases where no sentence cleared the feature threshold.
    pub fallback_count: usize,
    /// Predictions turned into not-match for lack of aligned evidence.
    pub resolution_count: usize,
    pub conflict_resolution: bool,
}

/// Shared state of a command bound to one run.
pub struct RunContext {
    pub config: RunConfig,
    pub layout: RunLayout,
}

impl RunContext {
    pub fn new(config: RunConfig, run_id_override: Option<&str>) -> Self {
        let layout = RunLayout::new(&config, run_id_override);
        RunContext { config, layout }
    }

    fn run_id(&self) -> String {
        self.layout.root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }

    fn corpus_path(&self) -> Result<&Path> {
        self.config
            .corpus
            .as_deref()
            .ok_or_else(|| Error::Config("no corpus given; set `corpus` in the config or pass --corpus".into()))
    }

    pub fn load_corpus(&self) -> Result<(Vec<CasePair>, String)> {
        let path = self.corpus_path()?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((load_dataset(path)?, sha256_hex(&bytes)))
    }

    fn load_split(&self, fold_id: usize) -> Result<FoldSplit> {
        let path = self.layout.split(fold_id);
        if !path.exists() {
            return Err(Error::State(format!(
                "fold {fold_id} is not prepared ({} missing); run `casematch prepare` first",
                path.display()
            )));
        }
        read_json(&path)
    }

    fn folds(&self, fold: Option<usize>) -> Result<Vec<usize>> {
        match fold {
            Some(f) if f >= self.config.k_folds => {
                Err(Error::Config(format!("fold {f} out of range for k_folds = {}", self.config.k_folds)))
            }
            Some(f) => Ok(vec![f]),
            None => Ok((0..self.config.k_folds).collect()),
        }
    }

    fn encoder(&self) -> Result<Arc<dyn SentenceEncoder>> {
        build_encoder(&self.config.encoder_config())
    }
}

/// Runs `job` for every fold, on scoped threads when `parallel` is set.
/// Results come back in fold order; the first error wins.
fn for_folds<T: Send>(folds: &[usize], parallel: bool, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if !parallel || folds.len() < 2 {
        return folds.iter().map(|&f| job(f)).collect();
    }
    std::thread::scope(|s| {
        let job = &job;
        let handles: Vec<_> = folds.iter().map(|&f| s.spawn(move || job(f))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::State("fold worker panicked".into()))))
            .collect()
    })
}

pub fn generate_corpus(spec: &SyntheticSpec, out: &Path) -> Result<usize> {
    let pairs = generate(spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let records: Vec<PairRecord> = pairs.iter().map(PairRecord::from).collect();
    write_jsonl(out, &records)?;
    Ok(records.len())
}

/// Writes the resolved config, the fold splits and each fold's derived
/// training sets.
pub fn prepare(ctx: &RunContext) -> Result<Vec<FoldSplit>> {
    let (corpus, _) = ctx.load_corpus()?;
    let splits = stratified_kfold(&corpus, ctx.config.k_folds, ctx.config.seed)?;
    create_dir(&ctx.layout.root)?;
    write_json(&ctx.layout.root.join("config.json"), &ctx.config)?;
    for split in &splits {
        let dir = ctx.layout.fold(split.fold_id);
        create_dir(&dir)?;
        write_json(&ctx.layout.split(split.fold_id), split)?;
        let (train, _) = fold_pairs(split, &corpus)?;
        let train: Vec<CasePair> = train.into_iter().cloned().collect();
        write_jsonl(&dir.join("fsi_train.jsonl"), &build_fsi_dataset(&train)?)?;
        write_jsonl(&dir.join("align_train.jsonl"), &build_alignment_dataset(&train))?;
    }
    Ok(splits)
}

fn load_heads(ctx: &RunContext, fold_id: usize, encoder: Arc<dyn SentenceEncoder>) -> Result<TrainedComponents> {
    let dim = encoder.dim();
    let mut out = TrainedComponents::empty(encoder);
    let artifact = |c: Component| -> Result<Option<HeadArtifact>> {
        let path = ctx.layout.head(fold_id, c);
        path.exists().then(|| HeadArtifact::load(&path)).transpose()
    };
    if let Some(a) = artifact(Component::Fsi)? {
        out.fsi = Some(FsiModel::from_artifact(&a, dim)?);
    }
    if let Some(a) = artifact(Component::Matcher)? {
        out.matcher = Some(Matcher::from_artifact(&a, dim)?);
    }
    if let Some(a) = artifact(Component::Aligner)? {
        out.aligner = Some(Aligner::from_artifact(&a, dim)?);
    }
    Ok(out)
}

fn require_heads(ctx: &RunContext, fold_id: usize) -> Result<()> {
    for c in Component::ALL {
        let path = ctx.layout.head(fold_id, c);
        if !path.exists() {
            return Err(Error::State(format!(
                "no trained {c} head for fold {fold_id} ({} missing); run `casematch train` first",
                path.display()
            )));
        }
    }
    Ok(())
}

fn train_fold(ctx: &RunContext, fold_id: usize, which: &[Component], encoder: Arc<dyn SentenceEncoder>) -> Result<Manifest> {
    let (corpus, corpus_sha256) = ctx.load_corpus()?;
    let split = ctx.load_split(fold_id)?;
    let (train, _) = fold_pairs(&split, &corpus)?;
    let train: Vec<CasePair> = train.into_iter().cloned().collect();
    let existing = load_heads(ctx, fold_id, encoder.clone())?;
    let mut manifest = match ctx.layout.manifest(fold_id) {
        p if p.exists() => read_json::<Manifest>(&p)?,
        _ => Manifest {
            run_id: ctx.run_id(),
            fold_id,
            seed: ctx.config.fold_seed(fold_id),
            corpus_sha256: corpus_sha256.clone(),
            config: ctx.config.clone(),
            components: BTreeMap::new(),
            prediction: None,
        },
    };
    manifest.corpus_sha256 = corpus_sha256;
    manifest.prediction = None;
    create_dir(&ctx.layout.fold(fold_id).join("heads"))?;

    let mut components = existing;
    for &c in Component::ALL.iter().filter(|c| which.contains(c)) {
        let start = Instant::now();
        components = train_components(&train, &ctx.config, fold_id, encoder.clone(), &[c], Some(components))?;
        log::info!("fold {fold_id}: trained {c} in {:.1}s", start.elapsed().as_secs_f64());
        let training = ctx.config.training_for(c, fold_id);
        let fgm = ctx.config.fgm_for(c);
        let artifact = match c {
            Component::Fsi => components.fsi()?.to_artifact(&training, &fgm),
            Component::Matcher => components.matcher()?.to_artifact(&training, &fgm),
            Component::Aligner => components.aligner()?.to_artifact(&training, &fgm),
        };
        artifact.save(&ctx.layout.head(fold_id, c))?;
        manifest.components.insert(
            c,
            ComponentManifest {
                head: PathBuf::from("heads").join(format!("{c}.json")),
                training,
                fgm,
                max_len: ctx.config.max_len_for(c),
            },
        );
    }
    write_json(&ctx.layout.manifest(fold_id), &manifest)?;
    Ok(manifest)
}

pub fn train(ctx: &RunContext, fold: Option<usize>, which: &[Component], parallel: bool) -> Result<Vec<Manifest>> {
    let folds = ctx.folds(fold)?;
    let encoder = ctx.encoder()?;
    for_folds(&folds, parallel, |f| {
        train_fold(ctx, f, which, encoder.clone()).map_err(|e| e.in_fold(f))
    })
}

fn predict_fold(ctx: &RunContext, fold_id: usize, encoder: Arc<dyn SentenceEncoder>) -> Result<PredictionSummary> {
    require_heads(ctx, fold_id)?;
    let (corpus, _) = ctx.load_corpus()?;
    let split = ctx.load_split(fold_id)?;
    let (_, test) = fold_pairs(&split, &corpus)?;
    let test: Vec<CasePair> = test.into_iter().cloned().collect();
    let components = load_heads(ctx, fold_id, encoder)?;
    let options = PipelineOptions::from(&ctx.config);
    let outputs = predict_pairs(&test, &components, &options)?;
    let predictions: Vec<_> = outputs.iter().map(|o| o.prediction.clone()).collect();
    write_jsonl(&ctx.layout.predictions(fold_id), &to_records(&predictions, &test)?)?;

    let summary = PredictionSummary {
        n_pairs: test.len(),
        fallback_count: outputs.iter().map(|o| o.fallback_count()).sum(),
        resolution_count: predictions.iter().filter(|p| p.conflict_resolved).count(),
        conflict_resolution: options.conflict_resolution,
    };
    let manifest_path = ctx.layout.manifest(fold_id);
    if manifest_path.exists() {
        let mut manifest: Manifest = read_json(&manifest_path)?;
        manifest.prediction = Some(summary.clone());
        write_json(&manifest_path, &manifest)?;
    }
    Ok(summary)
}

pub fn predict(ctx: &RunContext, fold: Option<usize>, parallel: bool) -> Result<Vec<PredictionSummary>> {
    let folds = ctx.folds(fold)?;
    let encoder = ctx.encoder()?;
    for_folds(&folds, parallel, |f| predict_fold(ctx, f, encoder.clone()).map_err(|e| e.in_fold(f)))
}

/// Scores `predictions` against `golds` and writes `report.json` and
/// `report.txt` into `out_dir`.
pub fn evaluate_files(predictions: &Path, golds: &Path, out_dir: &Path) -> Result<EvaluationReport> {
    let preds = load_predictions(predictions)?;
    let golds = load_dataset(golds)?;
    let report = evaluate(&preds, &golds)?;
    write_report(out_dir, &report)?;
    Ok(report)
}

fn write_report(dir: &Path, report: &EvaluationReport) -> Result<()> {
    report.check()?;
    create_dir(dir)?;
    write_json(&dir.join("report.json"), report)?;
    write_text(&dir.join("report.txt"), &report.summary_table())
}

fn fold_predictions(ctx: &RunContext, corpus: &[CasePair], fold_id: usize) -> Result<(Vec<PredictionRecord>, Vec<CasePair>)> {
    let split = ctx.load_split(fold_id)?;
    let (_, test) = fold_pairs(&split, corpus)?;
    let path = ctx.layout.predictions(fold_id);
    if !path.exists() {
        return Err(Error::State(format!(
            "fold {fold_id} has no predictions ({} missing); run `casematch predict` first",
            path.display()
        )));
    }
    Ok((load_predictions(&path)?, test.into_iter().cloned().collect()))
}

/// Evaluates each fold's predictions and, when every fold was evaluated,
/// writes the run-level report too.
pub fn evaluate_run(ctx: &RunContext, fold: Option<usize>) -> Result<Vec<EvaluationReport>> {
    let (corpus, _) = ctx.load_corpus()?;
    let mut reports = Vec::new();
    for f in ctx.folds(fold)? {
        let inner = || -> Result<EvaluationReport> {
            let (preds, golds) = fold_predictions(ctx, &corpus, f)?;
            let mut report = evaluate(&preds, &golds)?;
            report.fold_id = Some(f);
            write_report(&ctx.layout.fold(f), &report)?;
            Ok(report)
        };
        reports.push(inner().map_err(|e| e.in_fold(f))?);
    }
    if fold.is_none() {
        report(ctx)?;
    }
    Ok(reports)
}

/// Combines the fold reports into the run report using the configured
/// aggregation.
pub fn report(ctx: &RunContext) -> Result<EvaluationReport> {
    let mut folds = Vec::new();
    for f in 0..ctx.config.k_folds {
        let path = ctx.layout.fold(f).join("report.json");
        if !path.exists() {
            return Err(Error::State(format!(
                "fold {f} has no report ({} missing); run `casematch evaluate` first",
                path.display()
            )));
        }
        folds.push(read_json::<EvaluationReport>(&path)?);
    }
    let run_report = match ctx.config.aggregation {
        Aggregation::Mean => aggregate_folds(&folds)?,
        Aggregation::Pooled => {
            let (corpus, _) = ctx.load_corpus()?;
            let mut preds = Vec::new();
            let mut golds = Vec::new();
            for f in 0..ctx.config.k_folds {
                let (p, g) = fold_predictions(ctx, &corpus, f)?;
                preds.extend(p);
                golds.extend(g);
            }
            evaluate_pooled(&preds, &golds, &folds)?
        }
    };
    write_report(&ctx.layout.root, &run_report)?;
    Ok(run_report)
}
