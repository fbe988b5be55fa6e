//! Pipeline stages shared by the command line and the service.
//!
//! A mutating stage copies the latest snapshot into staging, rewrites the
//! artifacts it owns, drops the ones it invalidates and publishes the
//! result as a new snapshot. Read-only stages write under `run_dir` only.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use indexmap::IndexSet;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stressorlens_core::corpus::{
    self, group_counts, modeling_posts, read_clean_jsonl, write_clean_jsonl, CleanPost, CorpusError, FlairSource,
};
use stressorlens_core::flairclf::{self, FeatureLayout, FlairError, CLASSES};
use stressorlens_core::lexicon::{
    annotate_corpus, default_lexicon, read_annotations_csv, write_annotations_csv, Lexicon, LexiconAnnotation,
    LexiconError,
};
use stressorlens_core::textprep::{
    build_vocabulary, count_matrix, tfidf_matrix, FeatureConfig, TextprepError, Vocabulary,
};
use stressorlens_core::topicmodel::{
    fit_gibbs, fit_vb, infer_theta, select_review_samples, LdaConfig, LdaModel, ReviewSelection, TopicModelError,
};
use stressorlens_core::trends::{
    compare_methods, default_pairs, export_dashboard, lda_monthly_sum, lexicon_monthly_count, load_external_csv,
    monthly_proportions, Dashboard, ExternalSeries, PairCorrelation, TrendError,
};
use thiserror::Error;

use crate::config::{ConfigError, LdaMethod, PipelineConfig};
use crate::snapshot::{Snapshot, SnapshotError, SnapshotStore};

/// Artifact names inside a snapshot.
pub mod artifacts {
    pub const CONFIG: &str = "config.txt";
    pub const INGEST_REPORT: &str = "ingest.json";
    pub const POSTS: &str = "posts.jsonl";
    pub const FEATURES: &str = "features.json";
    pub const VOCABULARY_CSV: &str = "vocabulary.csv";
    pub const VOCABULARY: &str = "vocabulary.json";
    pub const LDA: &str = "lda";
    pub const CLASSIFIER: &str = "classifier";
    pub const FLAIR_COUNTS: &str = "flair_counts.csv";
    pub const SUBSET: &str = "subset.jsonl";
    pub const ANNOTATIONS: &str = "annotations.csv";
    pub const LEXICON: &str = "lexicon.json";
    pub const DASHBOARD: &str = "dashboard.json";
}

use artifacts as a;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no snapshot in {0}; run `ingest` first")]
    NoSnapshot(PathBuf),
    #[error("missing {artifact}; run `{stage}` first")]
    Missing { artifact: &'static str, stage: &'static str },
    #[error("{artifact} is out of date; re-run `{stage}`")]
    Stale { artifact: &'static str, stage: &'static str },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Textprep(#[from] TextprepError),
    #[error(transparent)]
    TopicModel(#[from] TopicModelError),
    #[error(transparent)]
    Flair(#[from] FlairError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Trend(#[from] TrendError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PipelineError {
    /// 2 for an absent or outdated prerequisite, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::NoSnapshot(_)
            | PipelineError::Missing { .. }
            | PipelineError::Stale { .. }
            | PipelineError::Snapshot(SnapshotError::NotFound(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// One-line `key=value` report printed by every command.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub fields: Vec<(String, String)>,
}

impl Summary {
    pub fn new(command: &str) -> Self {
        Summary {
            fields: vec![("command".into(), command.into())],
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.fields.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Analyst-curated token lists, stored per snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLists {
    pub include: Vec<String>,
    pub exclude: Vec<String>,
}

impl FeatureLists {
    pub fn from_config(features: &FeatureConfig) -> Self {
        FeatureLists {
            include: features.include_tokens.iter().cloned().collect(),
            exclude: features.exclude_tokens.iter().cloned().collect(),
        }
    }

    pub fn apply(&self, base: &FeatureConfig) -> FeatureConfig {
        FeatureConfig {
            include_tokens: self.include.iter().cloned().collect::<IndexSet<_>>(),
            exclude_tokens: self.exclude.iter().cloned().collect(),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Train,
    ImputeFlairs,
    Subset,
    LexiconLabel,
    Trends,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::ImputeFlairs => "impute-flairs",
            Stage::Subset => "subset",
            Stage::LexiconLabel => "lexicon-label",
            Stage::Trends => "trends",
        }
    }
}

fn require(ws: &Path, artifact: &'static str, stage: &'static str) -> Result<PathBuf> {
    let path = ws.join(artifact);
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::Missing { artifact, stage })
    }
}

fn remove(ws: &Path, names: &[&str]) -> Result<()> {
    for name in names {
        let path = ws.join(name);
        if path.is_dir() {
            fs::remove_dir_all(&path)?;
        } else if path.exists() {
            fs::remove_file(&path)?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn read_posts(ws: &Path) -> Result<Vec<CleanPost>> {
    let path = require(ws, a::POSTS, "ingest")?;
    Ok(read_clean_jsonl(BufReader::new(fs::File::open(path)?))?)
}

fn write_posts(path: &Path, posts: &[CleanPost]) -> Result<()> {
    let mut buf = Vec::new();
    write_clean_jsonl(&mut buf, posts)?;
    fs::write(path, buf)?;
    Ok(())
}

/// The support subset when it exists, otherwise every modeling post.
pub fn analysis_posts(ws: &Path) -> Result<Vec<CleanPost>> {
    let subset = ws.join(a::SUBSET);
    if subset.exists() {
        Ok(read_clean_jsonl(BufReader::new(fs::File::open(subset)?))?)
    } else {
        Ok(modeling_posts(&read_posts(ws)?))
    }
}

pub fn feature_lists(cfg: &PipelineConfig, ws: &Path) -> Result<FeatureLists> {
    let path = ws.join(a::FEATURES);
    if path.exists() {
        read_json(&path)
    } else {
        Ok(FeatureLists::from_config(&cfg.features))
    }
}

pub fn feature_config(cfg: &PipelineConfig, ws: &Path) -> Result<FeatureConfig> {
    Ok(feature_lists(cfg, ws)?.apply(&cfg.features))
}

pub fn load_lda(ws: &Path) -> Result<LdaModel> {
    require(ws, "lda/manifest.json", "train")?;
    Ok(LdaModel::load(&ws.join(a::LDA))?)
}

pub fn load_vocabulary(ws: &Path) -> Result<Vocabulary> {
    read_json(&require(ws, a::VOCABULARY, "train")?)
}

pub fn load_lexicon_labels(ws: &Path) -> Result<Lexicon> {
    let path = require(ws, a::LEXICON, "lexicon-label")?;
    Ok(Lexicon::from_json(&fs::read_to_string(path)?)?)
}

pub fn load_annotations(ws: &Path) -> Result<Vec<LexiconAnnotation>> {
    let path = require(ws, a::ANNOTATIONS, "lexicon-label")?;
    Ok(read_annotations_csv(fs::File::open(path)?)?)
}

pub fn load_dashboard(ws: &Path) -> Result<Dashboard> {
    read_json(&require(ws, a::DASHBOARD, "trends")?)
}

/// Hash identifying the configuration a snapshot was produced under,
/// including its curated token lists.
pub fn snapshot_config_hash(cfg: &PipelineConfig, ws: &Path) -> Result<String> {
    let mut h = Sha256::new();
    h.update(cfg.canonical().as_bytes());
    h.update(serde_json::to_vec(&feature_lists(cfg, ws)?)?);
    Ok(hex::encode(h.finalize()))
}

pub fn ingest(cfg: &PipelineConfig, ws: &Path) -> Result<Summary> {
    let path = cfg.corpus_path.as_ref().ok_or(ConfigError::Missing("corpus_path"))?;
    let loaded = corpus::load_corpus(path)?;
    let posts = corpus::clean(&loaded.posts);
    write_posts(&ws.join(a::POSTS), &posts)?;
    write_json(&ws.join(a::FEATURES), &FeatureLists::from_config(&cfg.features))?;
    fs::write(ws.join(a::CONFIG), cfg.canonical())?;
    let counts: BTreeMap<String, usize> = group_counts(&posts).into_iter().map(|(g, n)| (g.to_string(), n)).collect();
    write_json(
        &ws.join(a::INGEST_REPORT),
        &serde_json::json!({
            "raw": loaded.posts.len(),
            "malformed": loaded.warnings.malformed,
            "duplicates": loaded.warnings.duplicates,
            "clean": posts.len(),
            "groups": counts,
        }),
    )?;
    let unlabelled = posts.iter().filter(|p| p.flair_source == FlairSource::Unlabelled).count();
    Ok(Summary::new("ingest")
        .with("raw", loaded.posts.len())
        .with("malformed", loaded.warnings.malformed)
        .with("duplicates", loaded.warnings.duplicates)
        .with("clean", posts.len())
        .with("modeling", posts.iter().filter(|p| p.is_modeling_post()).count())
        .with("unlabelled", unlabelled))
}

fn fit(x: &stressorlens_core::textprep::DocTermMatrix, config: &LdaConfig, method: LdaMethod) -> Result<LdaModel> {
    Ok(match method {
        LdaMethod::Vb => fit_vb(x, config)?,
        LdaMethod::Gibbs => fit_gibbs(x, config)?,
    })
}

/// Fits the topic model on the analysis posts. Analyst topic names and
/// the group map carry over when the topic count is unchanged.
pub fn train(cfg: &PipelineConfig, ws: &Path) -> Result<Summary> {
    let posts = analysis_posts(ws)?;
    let features = feature_config(cfg, ws)?;
    let docs: Vec<Vec<String>> = posts.iter().map(|p| features.tokenize(&p.text)).collect();
    let vocab = build_vocabulary(&docs, &features)?;
    let counts = count_matrix(&docs, &vocab)?;
    let mut model = fit(&counts, &cfg.lda, cfg.lda_method)?.with_doc_ids(posts.iter().map(|p| p.id.clone()).collect());
    if ws.join("lda/manifest.json").exists() {
        let previous = LdaModel::load(&ws.join(a::LDA))?;
        carry_curation(&previous, &mut model);
    }
    remove(ws, &[a::LDA, a::DASHBOARD])?;
    model.save(&ws.join(a::LDA))?;
    let mut csv = Vec::new();
    vocab.write_csv(&mut csv)?;
    fs::write(ws.join(a::VOCABULARY_CSV), csv)?;
    write_json(&ws.join(a::VOCABULARY), &vocab)?;
    Ok(Summary::new("train")
        .with("docs", posts.len())
        .with("terms", vocab.len())
        .with("topics", model.n_topics())
        .with("iterations", model.elbo_trace.len())
        .with("elbo", model.elbo_trace.last().map_or("none".to_string(), |e| format!("{e:.6}")))
        .with("vocabulary_hash", &model.vocabulary_hash[..12]))
}

/// Copies analyst names and grouping onto a refitted model of equal size.
pub fn carry_curation(from: &LdaModel, to: &mut LdaModel) {
    if from.n_topics() == to.n_topics() {
        to.topic_names = from.topic_names.clone();
        to.group_map = from.group_map.clone();
    }
}

/// Trains the flair classifier on labelled modeling posts and labels the
/// rest. Features are a fresh topic model's mixtures, a top-N TF-IDF block
/// and a hyperlink flag, all computed over the modeling posts.
pub fn impute_flairs(cfg: &PipelineConfig, ws: &Path) -> Result<Summary> {
    let posts = read_posts(ws)?;
    let modeling = modeling_posts(&posts);
    let features = feature_config(cfg, ws)?;
    let docs: Vec<Vec<String>> = modeling.iter().map(|p| features.tokenize(&p.text)).collect();

    let vocab = build_vocabulary(&docs, &features)?;
    let counts = count_matrix(&docs, &vocab)?;
    let mut lda_config = LdaConfig::new(cfg.classifier.lda_topics).with_seed(cfg.lda.seed);
    lda_config.max_iters = cfg.lda.max_iters;
    lda_config.elbo_rel_tol = cfg.lda.elbo_rel_tol;
    let lda = fit_vb(&counts, &lda_config)?.with_doc_ids(modeling.iter().map(|p| p.id.clone()).collect());

    let tfidf_features = FeatureConfig {
        max_features: cfg.classifier.tfidf_features.max(features.include_tokens.len()),
        ..features.clone()
    };
    let tfidf_vocab = build_vocabulary(&docs, &tfidf_features)?;
    let tfidf = tfidf_matrix(&docs, &tfidf_vocab)?;
    let layout = FeatureLayout {
        lda: lda.n_topics(),
        tfidf: tfidf_vocab.len(),
    };
    let x = flairclf::assemble_features(&modeling, &lda, &tfidf, layout)?;

    let labelled: Vec<usize> = (0..modeling.len())
        .filter(|&i| modeling[i].flair_source == FlairSource::Labelled && CLASSES.contains(&modeling[i].flair_group))
        .collect();
    let train_x = x.select(Axis(0), &labelled);
    let train_y: Vec<_> = labelled.iter().map(|&i| modeling[i].flair_group).collect();
    let model = flairclf::train(&train_x, &train_y, &cfg.classifier.train)?;
    let train_accuracy = flairclf::accuracy(&model, &train_x, &train_y)?;

    let imputed: HashMap<String, CleanPost> = flairclf::impute_flairs(&modeling, &model, &x)?
        .into_iter()
        .map(|p| (p.id.clone(), p))
        .collect();
    let after: Vec<CleanPost> = posts.iter().map(|p| imputed.get(&p.id).cloned().unwrap_or_else(|| p.clone())).collect();
    let predicted = after.iter().filter(|p| p.flair_source == FlairSource::Predicted).count();

    remove(ws, &[a::CLASSIFIER, a::SUBSET, a::ANNOTATIONS, a::LEXICON, a::DASHBOARD])?;
    write_posts(&ws.join(a::POSTS), &after)?;
    model.save(&ws.join(a::CLASSIFIER))?;
    fs::write(ws.join(a::FLAIR_COUNTS), flairclf::class_count_csv(&posts, &after))?;
    Ok(Summary::new("impute-flairs")
        .with("labelled", labelled.len())
        .with("predicted", predicted)
        .with("features", layout.dim())
        .with("epochs", model.loss_trace.len())
        .with("train_accuracy", format!("{train_accuracy:.4}")))
}

pub fn subset(_cfg: &PipelineConfig, ws: &Path) -> Result<Summary> {
    require(ws, "classifier/manifest.json", "impute-flairs")?;
    let posts = read_posts(ws)?;
    let chosen = flairclf::select_support_subset(&posts)?;
    remove(ws, &[a::ANNOTATIONS, a::LEXICON, a::DASHBOARD])?;
    write_posts(&ws.join(a::SUBSET), &chosen)?;
    let predicted = chosen.iter().filter(|p| p.flair_source == FlairSource::Predicted).count();
    Ok(Summary::new("subset")
        .with("posts", chosen.len())
        .with("labelled", chosen.len() - predicted)
        .with("predicted", predicted))
}

pub fn lexicon_label(cfg: &PipelineConfig, ws: &Path) -> Result<Summary> {
    let lexicon = match &cfg.lexicon_path {
        Some(p) => Lexicon::load(p)?,
        None => default_lexicon(),
    };
    let posts = analysis_posts(ws)?;
    let annotations = annotate_corpus(posts.iter().map(|p| (p.id.as_str(), p.text.as_str())), &lexicon);
    let mut csv = Vec::new();
    write_annotations_csv(&mut csv, &annotations, &lexicon)?;
    remove(ws, &[a::DASHBOARD])?;
    fs::write(ws.join(a::ANNOTATIONS), csv)?;
    fs::write(ws.join(a::LEXICON), lexicon.to_json() + "\n")?;
    let matched = annotations.iter().filter(|a| !a.topics.is_empty()).count();
    Ok(Summary::new("lexicon-label")
        .with("posts", posts.len())
        .with("matched", matched)
        .with("topics", lexicon.topics.len()))
}

/// Topic mixtures for `posts`: the fitted row when the model saw the post,
/// otherwise a fresh inference against the model's vocabulary.
pub fn theta_for_posts(cfg: &PipelineConfig, ws: &Path, model: &LdaModel, posts: &[CleanPost]) -> Result<(Array2<f64>, usize)> {
    let mut theta = Array2::zeros((posts.len(), model.n_topics()));
    let index: HashMap<&str, usize> = model.doc_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut inferred = 0;
    let mut unseen_vocab: Option<(Vocabulary, FeatureConfig)> = None;
    for (row, post) in posts.iter().enumerate() {
        let values = match index.get(post.id.as_str()) {
            Some(&d) => model.theta(d),
            None => {
                if unseen_vocab.is_none() {
                    unseen_vocab = Some((load_vocabulary(ws)?, feature_config(cfg, ws)?));
                }
                let (vocab, features) = unseen_vocab.as_ref().expect("just set");
                let counts = count_matrix(&[features.tokenize(&post.text)], vocab)?;
                inferred += 1;
                infer_theta(model, &counts.rows[0])?.theta
            }
        };
        theta.row_mut(row).assign(&ndarray::Array1::from(values));
    }
    Ok((theta, inferred))
}

/// Builds the dashboard bundle for the snapshot in `ws` without writing.
pub fn compute_dashboard(cfg: &PipelineConfig, ws: &Path) -> Result<(Dashboard, usize)> {
    let model = load_lda(ws)?;
    let lexicon = load_lexicon_labels(ws)?;
    let annotations = load_annotations(ws)?;
    let posts = analysis_posts(ws)?;
    if annotations.len() != posts.len() || annotations.iter().zip(&posts).any(|(a, p)| a.post_id != p.id) {
        return Err(PipelineError::Stale {
            artifact: a::ANNOTATIONS,
            stage: "lexicon-label",
        });
    }
    let (theta, inferred) = theta_for_posts(cfg, ws, &model, &posts)?;
    let lda_series = lda_monthly_sum(&posts, &theta, &model.group_map)?;
    let lex_series = lexicon_monthly_count(&posts, &annotations, &lexicon.labels())?;
    let external = match &cfg.external_csv_path {
        Some(p) => load_external_csv(p, &cfg.locations)?,
        None => ExternalSeries::empty(&cfg.locations),
    };
    let dashboard = Dashboard::build(lda_series, lex_series, &external, &default_pairs(), cfg.correlate_proportions);
    Ok((dashboard, inferred))
}

fn format_r(c: &PairCorrelation) -> String {
    c.r.map_or("nan".to_string(), |r| format!("{r:.4}"))
}

fn slug(s: &str) -> String {
    s.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

fn with_correlations(mut summary: Summary, correlations: &[PairCorrelation]) -> Summary {
    for c in correlations {
        summary = summary.with(format!("r_{}", slug(&c.lda_group)), format_r(c));
    }
    summary
}

pub fn trends(cfg: &PipelineConfig, ws: &Path) -> Result<Summary> {
    let (dashboard, inferred) = compute_dashboard(cfg, ws)?;
    write_json(&ws.join(a::DASHBOARD), &dashboard)?;
    let summary = Summary::new("trends")
        .with("months", dashboard.months.len())
        .with("posts", dashboard.lda.total().round())
        .with("inferred", inferred)
        .with("external_months", dashboard.external.months.len() - dashboard.external.filled_months.len());
    Ok(with_correlations(summary, &dashboard.correlations))
}

pub fn run_mutating(cfg: &PipelineConfig, ws: &Path, stage: Stage) -> Result<Summary> {
    match stage {
        Stage::Ingest => ingest(cfg, ws),
        Stage::Train => train(cfg, ws),
        Stage::ImputeFlairs => impute_flairs(cfg, ws),
        Stage::Subset => subset(cfg, ws),
        Stage::LexiconLabel => lexicon_label(cfg, ws),
        Stage::Trends => trends(cfg, ws),
    }
}

/// Resolves `--snapshot` or the latest snapshot.
pub fn base_snapshot(store: &SnapshotStore, id: Option<u64>) -> Result<Option<Snapshot>> {
    match id.map_or_else(|| store.latest(), |id| Ok(Some(id)))? {
        Some(id) => Ok(Some(store.read(id)?)),
        None => Ok(None),
    }
}

/// Runs a mutating stage against the chosen snapshot and publishes the
/// result as a new snapshot.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, snapshot: Option<u64>) -> Result<Summary> {
    let store = SnapshotStore::open(&cfg.run_dir)?;
    let base = base_snapshot(&store, snapshot)?;
    let staged = match (&base, stage) {
        (_, Stage::Ingest) => store.begin(base.as_ref(), false, stage.name())?,
        (Some(b), _) => store.begin(Some(b), true, stage.name())?,
        (None, _) => return Err(PipelineError::NoSnapshot(cfg.run_dir.clone())),
    };
    let summary = run_mutating(cfg, staged.dir(), stage)?;
    let hash = snapshot_config_hash(cfg, staged.dir())?;
    let published = staged.commit(&hash)?;
    Ok(summary.with("snapshot", published.id()))
}

fn readonly_base(cfg: &PipelineConfig, snapshot: Option<u64>) -> Result<Snapshot> {
    let store = SnapshotStore::open(&cfg.run_dir)?;
    base_snapshot(&store, snapshot)?.ok_or_else(|| PipelineError::NoSnapshot(cfg.run_dir.clone()))
}

fn export_dir(cfg: &PipelineConfig, snap: &Snapshot) -> Result<PathBuf> {
    let dir = cfg.run_dir.join("exports").join(format!("snapshot-{:06}", snap.id()));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn correlate(cfg: &PipelineConfig, snapshot: Option<u64>) -> Result<(Summary, Vec<PairCorrelation>)> {
    let snap = readonly_base(cfg, snapshot)?;
    let dashboard = load_dashboard(&snap.dir)?;
    let correlations = if cfg.correlate_proportions {
        compare_methods(
            &monthly_proportions(&dashboard.lda).series,
            &monthly_proportions(&dashboard.lexicon).series,
            &default_pairs(),
        )
    } else {
        compare_methods(&dashboard.lda, &dashboard.lexicon, &default_pairs())
    };
    let mut out = String::from("lda_group,lexicon_topic,months,r,error\n");
    for c in &correlations {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record([
            c.lda_group.clone(),
            c.lexicon_topic.clone(),
            c.months.to_string(),
            c.r.map(|r| r.to_string()).unwrap_or_default(),
            c.error.clone().unwrap_or_default(),
        ])?;
        out.push_str(&String::from_utf8(w.into_inner().map_err(|e| io::Error::other(e.to_string()))?).expect("utf-8"));
    }
    fs::write(export_dir(cfg, &snap)?.join("correlations.csv"), out)?;
    let summary = Summary::new("correlate").with("snapshot", snap.id()).with("months", correlations.first().map_or(0, |c| c.months));
    Ok((with_correlations(summary, &correlations), correlations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWithText {
    pub post_id: String,
    pub theta_value: f64,
    pub selection: stressorlens_core::topicmodel::SampleSelection,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub topic: usize,
    pub seed: u64,
    pub complete: bool,
    pub samples: Vec<SampleWithText>,
}

pub fn attach_texts(topic: usize, seed: u64, selection: ReviewSelection, posts: &HashMap<String, CleanPost>) -> SampleReport {
    SampleReport {
        topic,
        seed,
        complete: selection.complete,
        samples: selection
            .samples
            .into_iter()
            .map(|s| SampleWithText {
                text: posts.get(&s.post_id).map(|p| p.text.clone()).unwrap_or_default(),
                post_id: s.post_id,
                theta_value: s.theta_value,
                selection: s.selection,
            })
            .collect(),
    }
}

pub fn samples(cfg: &PipelineConfig, snapshot: Option<u64>, topic: usize, seed: Option<u64>) -> Result<(Summary, SampleReport)> {
    let snap = readonly_base(cfg, snapshot)?;
    let model = load_lda(&snap.dir)?;
    let seed = seed.unwrap_or(cfg.lda.seed);
    let selection = select_review_samples(&model, topic, seed)?;
    let posts: HashMap<String, CleanPost> = read_posts(&snap.dir)?.into_iter().map(|p| (p.id.clone(), p)).collect();
    let report = attach_texts(topic, seed, selection, &posts);
    let path = export_dir(cfg, &snap)?.join(format!("samples-topic{topic}-seed{seed}.json"));
    write_json(&path, &report)?;
    let summary = Summary::new("samples")
        .with("snapshot", snap.id())
        .with("topic", topic)
        .with("seed", seed)
        .with("samples", report.samples.len())
        .with("complete", report.complete)
        .with("output", path.display());
    Ok((summary, report))
}

pub fn export(cfg: &PipelineConfig, snapshot: Option<u64>, out: Option<&Path>) -> Result<Summary> {
    let snap = readonly_base(cfg, snapshot)?;
    let dashboard = load_dashboard(&snap.dir)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.run_dir.join("dashboard"));
    let files = export_dashboard(&dashboard, &out)?;
    let json = fs::read(out.join(a::DASHBOARD))?;
    Ok(Summary::new("export-dashboard")
        .with("snapshot", snap.id())
        .with("files", files.len())
        .with("out", out.display())
        .with("dashboard_sha256", hex::encode(Sha256::digest(&json))))
}
