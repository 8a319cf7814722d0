//! Staged, on-disk pipeline: prepare → train → evaluate → analyze → report.
//!
//! Each stage reads the previous stage's artifacts from `output_dir` and
//! refuses them unless the digest embedded in them matches the digest
//! recomputed from the current configuration. Digests cover every setting
//! that affects a stage's output, and never the worker count or output
//! location, so results are byte-identical across machines and thread counts.
//!
//! ```text
//! output_dir/
//!   prepare/   train.jsonl  test.jsonl  stats.json
//!   train/     tfidf.json  featurizer.json  chi_square.csv  summary.json  models/<key>.json
//!   evaluate/  metrics/<key>.json  comparison.csv  comparison.json
//!   analyze/   monthly_series.csv  reviewer_segments.csv  correlation.csv  summary.json
//!   report.json
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, SegmentBounds};
use crate::corpus::{self, CorpusStats, ErrorPolicy, ReviewRecord, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{self, ComparisonTable, ExactRatio, MetricsReport};
use crate::features::{
    self, assemble_matrix, behavioral_features, chi_square_scores, select_top_k, BehavioralFeatures, BehavioralScaler,
    ChiSquareScore, FeatureMatrix, ReviewerCounts,
};
use crate::models::{ModelKind, TrainConfig, TrainedModel};
use crate::textproc::{self, remove_stopwords, tokenize, StopWords, TfIdfModel};

const ARTIFACT_VERSION: u32 = 1;

/// Optional per-model overrides of the built-in hyperparameter defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2_penalty: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: Option<usize>,
    pub n_trees: Option<usize>,
    pub feature_subsample_ratio: Option<f64>,
    pub bootstrap: Option<bool>,
}

impl ModelOverrides {
    fn apply(&self, base: TrainConfig<f64>, seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            seed: self.seed.unwrap_or(seed),
            epochs: self.epochs.unwrap_or(base.epochs),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            l2_penalty: self.l2_penalty.unwrap_or(base.l2_penalty),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            max_depth: self.max_depth.unwrap_or(base.max_depth),
            min_samples_leaf: self.min_samples_leaf.unwrap_or(base.min_samples_leaf),
            n_trees: self.n_trees.unwrap_or(base.n_trees),
            feature_subsample_ratio: self.feature_subsample_ratio.or(base.feature_subsample_ratio),
            bootstrap: self.bootstrap.unwrap_or(base.bootstrap),
        }
    }
}

/// Pipeline settings, loaded from a flat TOML file. Every key is optional.
///
/// Per-model hyperparameters use dotted keys, e.g. `rf.n_trees = 200`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Thread cap; 0 uses every available core.
    pub workers: usize,
    pub on_error: ErrorPolicy,
    pub train_fraction: f64,
    pub stratified: bool,
    pub max_terms: usize,
    pub min_df: u64,
    pub selection_k: usize,
    pub models: Vec<ModelKind>,
    pub segment_bounds: SegmentBounds,
    pub lr: ModelOverrides,
    pub svm: ModelOverrides,
    pub rf: ModelOverrides,
    pub gb: ModelOverrides,
    pub dt: ModelOverrides,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input_path: None,
            output_dir: PathBuf::from("revspam-out"),
            seed: 42,
            workers: 0,
            on_error: ErrorPolicy::Skip,
            train_fraction: 0.8,
            stratified: true,
            max_terms: 20_000,
            min_df: 2,
            selection_k: 2_000,
            models: ModelKind::ALL.to_vec(),
            segment_bounds: SegmentBounds::default(),
            lr: ModelOverrides::default(),
            svm: ModelOverrides::default(),
            rf: ModelOverrides::default(),
            gb: ModelOverrides::default(),
            dt: ModelOverrides::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: self.seed,
            stratified: self.stratified,
        }
    }

    fn overrides(&self, kind: ModelKind) -> &ModelOverrides {
        match kind {
            ModelKind::Logistic => &self.lr,
            ModelKind::LinearSvm => &self.svm,
            ModelKind::RandomForest => &self.rf,
            ModelKind::GradientBoosting => &self.gb,
            ModelKind::DecisionTree => &self.dt,
        }
    }

    /// Resolved hyperparameters of one model.
    pub fn train_config(&self, kind: ModelKind) -> TrainConfig<f64> {
        self.overrides(kind).apply(kind.default_config(), self.seed)
    }

    /// Configured models, first occurrence order, duplicates removed.
    pub fn model_list(&self) -> Vec<ModelKind> {
        let mut out: Vec<ModelKind> = Vec::new();
        for &k in &self.models {
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec().validate()?;
        self.segment_bounds.validate()?;
        if self.max_terms == 0 {
            return Err(Error::Config("max_terms must be >= 1".into()));
        }
        if self.selection_k == 0 {
            return Err(Error::Config("selection_k must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("models must list at least one model".into()));
        }
        for kind in self.model_list() {
            self.train_config(kind).validate(kind)?;
        }
        Ok(())
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", self.workers)))
    }

    /// Runs `f` with parallelism capped at `workers`.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
        self.thread_pool()?.install(f)
    }
}

/// Artifact locations under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn prepare_dir(&self) -> PathBuf {
        self.root.join("prepare")
    }
    pub fn train_split(&self) -> PathBuf {
        self.prepare_dir().join("train.jsonl")
    }
    pub fn test_split(&self) -> PathBuf {
        self.prepare_dir().join("test.jsonl")
    }
    pub fn stats(&self) -> PathBuf {
        self.prepare_dir().join("stats.json")
    }
    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn tfidf(&self) -> PathBuf {
        self.train_dir().join("tfidf.json")
    }
    pub fn featurizer(&self) -> PathBuf {
        self.train_dir().join("featurizer.json")
    }
    pub fn chi_square(&self) -> PathBuf {
        self.train_dir().join("chi_square.csv")
    }
    pub fn train_summary(&self) -> PathBuf {
        self.train_dir().join("summary.json")
    }
    pub fn model(&self, kind: ModelKind) -> PathBuf {
        self.train_dir().join("models").join(format!("{}.json", kind.key()))
    }
    pub fn evaluate_dir(&self) -> PathBuf {
        self.root.join("evaluate")
    }
    pub fn metrics(&self, kind: ModelKind) -> PathBuf {
        self.evaluate_dir().join("metrics").join(format!("{}.json", kind.key()))
    }
    pub fn comparison_csv(&self) -> PathBuf {
        self.evaluate_dir().join("comparison.csv")
    }
    pub fn comparison_json(&self) -> PathBuf {
        self.evaluate_dir().join("comparison.json")
    }
    pub fn analyze_dir(&self) -> PathBuf {
        self.root.join("analyze")
    }
    pub fn monthly_series(&self) -> PathBuf {
        self.analyze_dir().join("monthly_series.csv")
    }
    pub fn reviewer_segments(&self) -> PathBuf {
        self.analyze_dir().join("reviewer_segments.csv")
    }
    pub fn correlation(&self) -> PathBuf {
        self.analyze_dir().join("correlation.csv")
    }
    pub fn analyze_summary(&self) -> PathBuf {
        self.analyze_dir().join("summary.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

// ---------------------------------------------------------------------------
// Digests and artifact I/O

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_of<S: Serialize>(value: &S) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("digest input serializes"))
}

/// SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Digest of everything that determines the prepare outputs.
pub fn prepare_digest(config: &PipelineConfig, input_sha256: &str) -> String {
    digest_of(&("prepare", input_sha256, config.split_spec(), config.on_error))
}

/// Digest of everything that determines the train outputs.
pub fn train_digest(config: &PipelineConfig, prepare_digest: &str) -> String {
    let models: Vec<(ModelKind, TrainConfig<f64>)> = config
        .model_list()
        .into_iter()
        .map(|k| (k, config.train_config(k)))
        .collect();
    digest_of(&(
        "train",
        prepare_digest,
        config.max_terms,
        config.min_df,
        config.selection_k,
        models,
    ))
}

pub fn analyze_digest(config: &PipelineConfig, prepare_digest: &str) -> String {
    digest_of(&("analyze", prepare_digest, config.segment_bounds))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    f(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(path, e))
}

fn check_version(path: &Path, found: u32) -> Result<()> {
    if found == ARTIFACT_VERSION {
        Ok(())
    } else {
        Err(Error::ArtifactVersion {
            path: path.into(),
            found,
        })
    }
}

fn check_digest(path: &Path, expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::StaleArtifact {
            path: path.into(),
            expected: expected.into(),
            found: found.into(),
        })
    }
}

fn write_records(path: &Path, records: &[ReviewRecord]) -> Result<()> {
    let lines: Vec<String> = records.par_iter().map(|r| r.to_json_line()).collect();
    write_with(path, |out| {
        for line in &lines {
            out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    })
}

fn read_records(path: &Path) -> Result<Vec<ReviewRecord>> {
    Ok(corpus::load_corpus(path, ErrorPolicy::Abort)?.records)
}

// ---------------------------------------------------------------------------
// Featurization

/// Everything fitted on the training split that turns records into rows.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub tfidf: TfIdfModel<f64>,
    pub stopwords: StopWords,
    pub reviewer_counts: ReviewerCounts,
    pub scaler: BehavioralScaler<f64>,
    /// Columns of the full (text + behavioral) matrix kept by selection.
    pub selected: Vec<usize>,
    /// Names of the selected columns, in matrix order.
    pub column_names: Vec<String>,
}

/// Result of fitting a [`Featurizer`] on the training split.
#[derive(Debug, Clone)]
pub struct FittedFeatures {
    pub featurizer: Featurizer,
    /// Chi-square scores of every column of the full matrix.
    pub scores: Vec<ChiSquareScore<f64>>,
    /// Names of every column of the full matrix.
    pub full_column_names: Vec<String>,
    /// Training matrix restricted to the selected columns.
    pub matrix: FeatureMatrix<f64>,
}

fn token_streams(records: &[ReviewRecord], stopwords: &StopWords) -> Vec<textproc::TokenSeq> {
    records
        .par_iter()
        .map(|r| remove_stopwords(tokenize(&r.review_text), stopwords))
        .collect()
}

fn labels_of(records: &[ReviewRecord]) -> Vec<corpus::Label> {
    records.iter().map(|r| r.label).collect()
}

impl Featurizer {
    /// Fits vocabulary, IDF, reviewer counts, scaling and chi-square selection
    /// on `train` only.
    pub fn fit(train: &[ReviewRecord], max_terms: usize, min_df: u64, selection_k: usize) -> Result<FittedFeatures> {
        if train.is_empty() {
            return Err(Error::EmptyInput("training split is empty"));
        }
        let stopwords = StopWords::english();
        let tokens = token_streams(train, &stopwords);
        let vocabulary = textproc::build_vocabulary(&tokens, max_terms, min_df);
        let tfidf: TfIdfModel<f64> = textproc::fit_idf(vocabulary)?;
        let text: Vec<_> = tokens.par_iter().map(|t| tfidf.transform(t)).collect();
        drop(tokens);

        let reviewer_counts = ReviewerCounts::from_records(train);
        let behavioral: Vec<BehavioralFeatures<f64>> = train
            .par_iter()
            .map(|r| behavioral_features(r, &reviewer_counts))
            .collect();
        let scaler = BehavioralScaler::fit(&behavioral)?;
        let terms = tfidf.vocabulary().terms().to_vec();
        let full = assemble_matrix(&text, &behavioral, &labels_of(train), &scaler, Some(&terms), None)?;
        drop(text);

        let scores = chi_square_scores(&full)?;
        let selected = select_top_k(&scores, selection_k);
        let matrix = full.select_columns(&selected)?;
        Ok(FittedFeatures {
            featurizer: Featurizer {
                tfidf,
                stopwords,
                reviewer_counts,
                scaler,
                column_names: matrix.column_names.clone(),
                selected,
            },
            scores,
            full_column_names: full.column_names,
            matrix,
        })
    }

    /// Feature matrix of arbitrary records under the fitted transformation.
    pub fn transform(&self, records: &[ReviewRecord]) -> Result<FeatureMatrix<f64>> {
        let text: Vec<_> = records
            .par_iter()
            .map(|r| {
                self.tfidf
                    .transform(&remove_stopwords(tokenize(&r.review_text), &self.stopwords))
            })
            .collect();
        let behavioral: Vec<BehavioralFeatures<f64>> = records
            .par_iter()
            .map(|r| behavioral_features(r, &self.reviewer_counts))
            .collect();
        let terms = self.tfidf.vocabulary().terms();
        assemble_matrix(
            &text,
            &behavioral,
            &labels_of(records),
            &self.scaler,
            Some(terms),
            Some(&self.selected),
        )
    }

    fn document(&self, digest: &str) -> FeaturizerDocument {
        FeaturizerDocument {
            version: ARTIFACT_VERSION,
            digest: digest.to_string(),
            reviewer_counts: self.reviewer_counts.clone(),
            scaler: self.scaler,
            selected: self.selected.clone(),
            column_names: self.column_names.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FeaturizerDocument {
    version: u32,
    digest: String,
    reviewer_counts: ReviewerCounts,
    scaler: BehavioralScaler<f64>,
    selected: Vec<usize>,
    column_names: Vec<String>,
}

// ---------------------------------------------------------------------------
// Stage documents

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub version: u32,
    pub digest: String,
    pub input_sha256: String,
    pub split: SplitSpec,
    pub stats: CorpusStats,
    pub train_rows: u64,
    pub test_rows: u64,
    pub train_spam: u64,
    pub test_spam: u64,
    /// First rejected lines, in file order.
    pub rejections: Vec<RejectedLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelStatus {
    Trained,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: ModelKind,
    pub status: ModelStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub version: u32,
    pub digest: String,
    pub prepare_digest: String,
    pub train_rows: u64,
    pub vocabulary_size: usize,
    pub dimension: usize,
    pub models: Vec<ModelOutcome>,
}

#[derive(Debug, Clone, Serialize)]
struct MetricsDocument<'a> {
    version: u32,
    digest: &'a str,
    #[serde(flatten)]
    report: &'a MetricsReport<ExactRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDocument {
    pub version: u32,
    pub digest: String,
    pub test_rows: u64,
    pub rows: Vec<eval::ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub version: u32,
    pub digest: String,
    pub records: u64,
    pub months: usize,
    pub distinct_reviewers: u64,
    pub segment_bounds: SegmentBounds,
}

// ---------------------------------------------------------------------------
// Stages

fn input_path(config: &PipelineConfig) -> Result<&Path> {
    let path = config
        .input_path
        .as_deref()
        .ok_or_else(|| Error::Config("no input corpus given (set input_path or pass --input)".into()))?;
    if !path.is_file() {
        return Err(Error::Config(format!("input corpus {} does not exist", path.display())));
    }
    Ok(path)
}

/// Ingests, cleans and splits the corpus; writes the splits and statistics.
pub fn run_prepare(config: &PipelineConfig) -> Result<PrepareSummary> {
    config.validate()?;
    let input = input_path(config)?;
    config.install(|| {
        let layout = Layout::new(&config.output_dir);
        let input_sha256 = file_sha256(input)?;
        let digest = prepare_digest(config, &input_sha256);

        let loaded = corpus::load_corpus(input, config.on_error)?;
        let (kept, clean_stats) = corpus::clean(loaded.records);
        let stats = loaded.stats.then(clean_stats);
        if kept.is_empty() {
            return Err(Error::EmptyInput("no records survived ingestion and cleaning"));
        }
        let (train, test) = corpus::split(kept, &config.split_spec())?;

        create_dir(&layout.prepare_dir())?;
        write_records(&layout.train_split(), &train)?;
        write_records(&layout.test_split(), &test)?;
        let summary = PrepareSummary {
            version: ARTIFACT_VERSION,
            digest,
            input_sha256,
            split: config.split_spec(),
            stats,
            train_rows: train.len() as u64,
            test_rows: test.len() as u64,
            train_spam: train.iter().filter(|r| r.label.is_spam()).count() as u64,
            test_spam: test.iter().filter(|r| r.label.is_spam()).count() as u64,
            rejections: loaded
                .rejections
                .iter()
                .map(|r| RejectedLine {
                    line: r.line,
                    error: r.error.to_string(),
                })
                .collect(),
        };
        write_json(&layout.stats(), &summary)?;
        Ok(summary)
    })
}

/// Loads the prepare summary and checks it against the current configuration.
pub fn load_prepare_summary(config: &PipelineConfig) -> Result<PrepareSummary> {
    let path = Layout::new(&config.output_dir).stats();
    let summary: PrepareSummary = read_json(&path)?;
    check_version(&path, summary.version)?;
    let expected = prepare_digest(config, &summary.input_sha256);
    check_digest(&path, &expected, &summary.digest)?;
    Ok(summary)
}

/// Fits the featurizer on the training split and trains every configured model.
///
/// A model that fails to train is recorded in the summary without stopping
/// the others; the stage then returns [`Error::TrainingFailed`].
pub fn run_train(config: &PipelineConfig) -> Result<TrainSummary> {
    config.validate()?;
    let prepared = load_prepare_summary(config)?;
    config.install(|| {
        let layout = Layout::new(&config.output_dir);
        let digest = train_digest(config, &prepared.digest);
        let train = read_records(&layout.train_split())?;
        let fitted = Featurizer::fit(&train, config.max_terms, config.min_df, config.selection_k)?;
        drop(train);

        write_text(&layout.tfidf(), &(fitted.featurizer.tfidf.to_json() + "\n"))?;
        write_json(&layout.featurizer(), &fitted.featurizer.document(&digest))?;
        let chi_path = layout.chi_square();
        write_with(&chi_path, |out| {
            features::write_chi_square_csv(out, &fitted.scores, &fitted.full_column_names)
        })?;

        let mut outcomes = Vec::new();
        for kind in config.model_list() {
            let path = layout.model(kind);
            let trained = kind
                .train(&fitted.matrix, &config.train_config(kind))
                .and_then(|model| {
                    let accuracy = model.accuracy(&fitted.matrix)?;
                    write_text(&path, &(model.to_json(&digest) + "\n"))?;
                    Ok(accuracy)
                });
            outcomes.push(match trained {
                Ok(accuracy) => ModelOutcome {
                    model: kind,
                    status: ModelStatus::Trained,
                    training_accuracy: Some(accuracy),
                    error: None,
                },
                Err(e) => {
                    if path.exists() {
                        fs::remove_file(&path).map_err(|io| Error::io(&path, io))?;
                    }
                    ModelOutcome {
                        model: kind,
                        status: ModelStatus::Failed,
                        training_accuracy: None,
                        error: Some(e.to_string()),
                    }
                }
            });
        }
        let summary = TrainSummary {
            version: ARTIFACT_VERSION,
            digest,
            prepare_digest: prepared.digest.clone(),
            train_rows: fitted.matrix.n_rows() as u64,
            vocabulary_size: fitted.featurizer.tfidf.dimension(),
            dimension: fitted.matrix.dimension(),
            models: outcomes,
        };
        write_json(&layout.train_summary(), &summary)?;
        let failed: Vec<String> = summary
            .models
            .iter()
            .filter(|m| m.status == ModelStatus::Failed)
            .map(|m| format!("{}: {}", m.model.key(), m.error.as_deref().unwrap_or("")))
            .collect();
        if failed.is_empty() {
            Ok(summary)
        } else {
            Err(Error::TrainingFailed(failed.join("; ")))
        }
    })
}

/// Loads the train summary and checks it against the current configuration.
pub fn load_train_summary(config: &PipelineConfig) -> Result<TrainSummary> {
    let prepared = load_prepare_summary(config)?;
    let path = Layout::new(&config.output_dir).train_summary();
    let summary: TrainSummary = read_json(&path)?;
    check_version(&path, summary.version)?;
    check_digest(&path, &train_digest(config, &prepared.digest), &summary.digest)?;
    Ok(summary)
}

/// Restores the featurizer written by the train stage.
pub fn load_featurizer(config: &PipelineConfig) -> Result<Featurizer> {
    let summary = load_train_summary(config)?;
    let layout = Layout::new(&config.output_dir);
    let path = layout.featurizer();
    let doc: FeaturizerDocument = read_json(&path)?;
    check_version(&path, doc.version)?;
    check_digest(&path, &summary.digest, &doc.digest)?;
    let tfidf_path = layout.tfidf();
    let tfidf = TfIdfModel::from_json(&tfidf_path, &read_text(&tfidf_path)?)?;
    Ok(Featurizer {
        tfidf,
        stopwords: StopWords::english(),
        reviewer_counts: doc.reviewer_counts,
        scaler: doc.scaler,
        selected: doc.selected,
        column_names: doc.column_names,
    })
}

/// Evaluation outputs.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<MetricsReport<ExactRatio>>,
    pub comparison: ComparisonTable,
}

/// Scores every trained model on the test split at its threshold (0.5).
pub fn run_evaluate(config: &PipelineConfig) -> Result<Evaluation> {
    config.validate()?;
    let summary = load_train_summary(config)?;
    let featurizer = load_featurizer(config)?;
    config.install(|| {
        let layout = Layout::new(&config.output_dir);
        let test = read_records(&layout.test_split())?;
        let matrix = featurizer.transform(&test)?;
        drop(test);

        let mut reports = Vec::new();
        for outcome in summary.models.iter().filter(|m| m.status == ModelStatus::Trained) {
            let path = layout.model(outcome.model);
            let (model, provenance) = TrainedModel::<f64>::from_json(&path, &read_text(&path)?)?;
            check_digest(&path, &summary.digest, &provenance)?;
            let scores = model.predict_matrix(&matrix)?;
            let cm = eval::confusion(&scores, &matrix.labels, model.threshold)?;
            let report = eval::metrics::<ExactRatio>(model.kind.display_name(), &cm);
            write_json(
                &layout.metrics(model.kind),
                &MetricsDocument {
                    version: ARTIFACT_VERSION,
                    digest: &summary.digest,
                    report: &report,
                },
            )?;
            reports.push(report);
        }
        let comparison = eval::compare_models(&reports);
        write_with(&layout.comparison_csv(), |out| comparison.write_csv(out))?;
        write_json(
            &layout.comparison_json(),
            &ComparisonDocument {
                version: ARTIFACT_VERSION,
                digest: summary.digest.clone(),
                test_rows: matrix.n_rows() as u64,
                rows: comparison.rows.clone(),
            },
        )?;
        Ok(Evaluation { reports, comparison })
    })
}

/// Variables of the correlation matrix: behavioral features, rating and class.
fn correlation_variables(records: &[ReviewRecord]) -> Vec<(String, Vec<f64>)> {
    let counts = ReviewerCounts::from_records(records);
    let behavioral: Vec<[f64; 4]> = records
        .par_iter()
        .map(|r| behavioral_features::<f64>(r, &counts).values())
        .collect();
    let mut vars: Vec<(String, Vec<f64>)> = features::BEHAVIORAL_COLUMNS
        .iter()
        .enumerate()
        .map(|(j, name)| (name.to_string(), behavioral.iter().map(|b| b[j]).collect()))
        .collect();
    vars.push(("rating".into(), records.iter().map(|r| r.rating as f64).collect()));
    vars.push(("class".into(), records.iter().map(|r| r.label.code() as f64).collect()));
    vars
}

/// Monthly series, reviewer segments and the behavioral correlation matrix
/// over the full cleaned corpus (train and test splits together).
pub fn run_analyze(config: &PipelineConfig) -> Result<AnalyzeSummary> {
    config.validate()?;
    let prepared = load_prepare_summary(config)?;
    config.install(|| {
        let layout = Layout::new(&config.output_dir);
        let mut records = read_records(&layout.train_split())?;
        records.extend(read_records(&layout.test_split())?);

        let series = analysis::monthly_series(&records)?;
        let segments = analysis::segment_reviewers(&records, config.segment_bounds)?;
        write_with(&layout.monthly_series(), |out| analysis::write_series_csv(&series, out))?;
        write_with(&layout.reviewer_segments(), |out| {
            analysis::write_segments_csv(&segments, out)
        })?;
        if records.len() >= 2 {
            let corr = features::pearson_correlation_matrix(&correlation_variables(&records))?;
            write_with(&layout.correlation(), |out| corr.write_csv(out))?;
        }
        let summary = AnalyzeSummary {
            version: ARTIFACT_VERSION,
            digest: analyze_digest(config, &prepared.digest),
            records: records.len() as u64,
            months: series.len(),
            distinct_reviewers: segments.iter().map(|s| s.reviewer_count).sum(),
            segment_bounds: config.segment_bounds,
        };
        write_json(&layout.analyze_summary(), &summary)?;
        Ok(summary)
    })
}

fn read_checked_value(path: &Path, expected_digest: &str) -> Result<serde_json::Value> {
    let value: serde_json::Value = read_json(path)?;
    let found = value.get("digest").and_then(|d| d.as_str()).unwrap_or_default();
    check_digest(path, expected_digest, found)?;
    Ok(value)
}

/// Aggregates every stage's outputs into `report.json`.
pub fn run_report(config: &PipelineConfig) -> Result<serde_json::Value> {
    config.validate()?;
    let prepared = load_prepare_summary(config)?;
    let trained = load_train_summary(config)?;
    let layout = Layout::new(&config.output_dir);

    let mut metrics = serde_json::Map::new();
    for outcome in trained.models.iter().filter(|m| m.status == ModelStatus::Trained) {
        let value = read_checked_value(&layout.metrics(outcome.model), &trained.digest)?;
        metrics.insert(outcome.model.key().to_string(), value);
    }
    let comparison = read_checked_value(&layout.comparison_json(), &trained.digest)?;
    let analysis = read_checked_value(&layout.analyze_summary(), &analyze_digest(config, &prepared.digest))?;
    let models: Vec<serde_json::Value> = config
        .model_list()
        .into_iter()
        .map(|k| serde_json::json!({ "model": k.key(), "hyperparameters": config.train_config(k) }))
        .collect();

    let report = serde_json::json!({
        "version": ARTIFACT_VERSION,
        "prepare": prepared,
        "train": trained,
        "models": models,
        "metrics": metrics,
        "comparison": comparison,
        "analysis": analysis,
    });
    write_json(&layout.report(), &report)?;
    Ok(report)
}

/// Runs every stage in order.
pub fn run_all(config: &PipelineConfig) -> Result<serde_json::Value> {
    run_prepare(config)?;
    run_train(config)?;
    run_evaluate(config)?;
    run_analyze(config)?;
    run_report(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn flat_keys_and_dotted_model_overrides() {
        let c = PipelineConfig::from_toml(
            r#"
            seed = 9
            models = ["lr", "rf"]
            segment_bounds = [2, 6]
            rf.n_trees = 7
            lr.learning_rate = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(c.models, [ModelKind::Logistic, ModelKind::RandomForest]);
        assert_eq!(c.segment_bounds, SegmentBounds(2, 6));
        assert_eq!(c.train_config(ModelKind::RandomForest).n_trees, 7);
        assert_eq!(c.train_config(ModelKind::RandomForest).seed, 9);
        assert_eq!(c.train_config(ModelKind::Logistic).learning_rate, 0.5);
        assert_eq!(
            c.train_config(ModelKind::DecisionTree),
            TrainConfig::decision_tree().with_seed(9)
        );
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for text in ["sed = 1", "rf.trees = 3", "models = [\"knn\"]"] {
            assert!(
                matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = [
            PipelineConfig {
                train_fraction: 1.0,
                ..Default::default()
            },
            PipelineConfig {
                selection_k: 0,
                ..Default::default()
            },
            PipelineConfig {
                segment_bounds: SegmentBounds(3, 3),
                ..Default::default()
            },
            PipelineConfig {
                models: vec![],
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        let mut c = PipelineConfig::default();
        c.gb.learning_rate = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn digests_ignore_workers_and_output_location() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            workers: 3,
            output_dir: "elsewhere".into(),
            ..Default::default()
        };
        assert_eq!(prepare_digest(&a, "x"), prepare_digest(&b, "x"));
        assert_eq!(train_digest(&a, "p"), train_digest(&b, "p"));
        let c = PipelineConfig {
            seed: 1,
            ..Default::default()
        };
        assert_ne!(prepare_digest(&a, "x"), prepare_digest(&c, "x"));
        assert_ne!(train_digest(&a, "p"), train_digest(&c, "p"));
        let mut d = PipelineConfig::default();
        d.rf.max_depth = Some(3);
        assert_ne!(train_digest(&a, "p"), train_digest(&d, "p"));
        assert_eq!(prepare_digest(&a, "x"), prepare_digest(&d, "x"));
    }
}
