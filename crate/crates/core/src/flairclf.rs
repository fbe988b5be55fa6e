//! Flair imputation: a multinomial logistic regression over
//! `[topic mixture | TF-IDF | hyperlink]` features, trained by full-batch
//! gradient descent on the labelled posts.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CleanPost, FlairGroup, FlairSource};
use crate::matrix_io;
use crate::textprep::{has_hyperlink, DocTermMatrix};
use crate::topicmodel::LdaModel;

#[derive(Debug, Error)]
pub enum FlairError {
    #[error("feature dimension mismatch: {0}")]
    Dimension(String),
    #[error("training needs at least two distinct classes, found {0}")]
    SingleClass(usize),
    #[error("label {0} is not a classifier class")]
    BadLabel(FlairGroup),
    #[error("loss became non-finite at epoch {epoch}; lower the learning rate (currently {learning_rate})")]
    Diverged { epoch: usize, learning_rate: f64 },
    #[error("post {0} is still unlabelled; run flair imputation first")]
    Unlabelled(String),
    #[error("classifier file error: {0}")]
    Persist(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = FlairError> = std::result::Result<T, E>;

pub const CLASSES: [FlairGroup; 4] = [
    FlairGroup::MentalHealthSupport,
    FlairGroup::DiscussionQuestions,
    FlairGroup::NewsResources,
    FlairGroup::Experience,
];

/// Widths of the three feature blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub lda: usize,
    pub tfidf: usize,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        self.lda + self.tfidf + 1
    }
}

impl Default for FeatureLayout {
    fn default() -> Self {
        FeatureLayout { lda: 10, tfidf: 200 }
    }
}

/// Builds one `[theta | tfidf | hyperlink]` row per post. The topic model
/// must have been trained on exactly these posts, in this order.
pub fn assemble_features(
    posts: &[CleanPost],
    lda: &LdaModel,
    tfidf: &DocTermMatrix,
    layout: FeatureLayout,
) -> Result<Array2<f64>> {
    if lda.n_topics() != layout.lda {
        return Err(FlairError::Dimension(format!(
            "topic model has {} topics, layout expects {}",
            lda.n_topics(),
            layout.lda
        )));
    }
    if tfidf.n_terms() != layout.tfidf {
        return Err(FlairError::Dimension(format!(
            "TF-IDF vocabulary has {} terms, layout expects {}",
            tfidf.n_terms(),
            layout.tfidf
        )));
    }
    if lda.n_docs() != posts.len() || tfidf.n_docs() != posts.len() {
        return Err(FlairError::Dimension(format!(
            "{} posts, {} topic rows, {} TF-IDF rows",
            posts.len(),
            lda.n_docs(),
            tfidf.n_docs()
        )));
    }
    if let Some((p, id)) = posts.iter().zip(&lda.doc_ids).find(|(p, id)| p.id != **id) {
        return Err(FlairError::Dimension(format!(
            "topic row for {id} does not belong to post {}",
            p.id
        )));
    }
    let mut x = Array2::zeros((posts.len(), layout.dim()));
    for (i, post) in posts.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.slice_mut(s![..layout.lda]).assign(&lda.doc_topic.row(i));
        for (c, v) in tfidf.rows[i].iter() {
            row[layout.lda + c] = v;
        }
        row[layout.dim() - 1] = if has_hyperlink(&post.text) { 1.0 } else { 0.0 };
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 strength on non-bias weights.
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop once the largest gradient component falls below this.
    pub tolerance: f64,
    /// Reserved for shuffled variants; full-batch training ignores it.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            l2: 1.0,
            max_epochs: 500,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub classes: Vec<FlairGroup>,
    /// One row per class; the last column is the bias.
    pub weights: Array2<f64>,
    pub train_config: TrainConfig,
    pub loss_trace: Vec<f64>,
}

impl LogRegModel {
    pub fn n_features(&self) -> usize {
        self.weights.ncols() - 1
    }
}

fn class_index(label: FlairGroup) -> Result<usize> {
    CLASSES
        .iter()
        .position(|c| *c == label)
        .ok_or(FlairError::BadLabel(label))
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    scores.iter_mut().for_each(|s| *s /= total);
}

fn class_scores(weights: &Array2<f64>, x: ArrayView1<f64>) -> Vec<f64> {
    let d = x.len();
    weights
        .rows()
        .into_iter()
        .map(|w| w.slice(s![..d]).dot(&x) + w[d])
        .collect()
}

/// Regularized cross-entropy averaged over samples,
/// `(sum_i CE_i + l2/2 * |W_nonbias|^2) / n`, and its gradient.
pub fn loss_and_gradient(
    weights: &Array2<f64>,
    features: &Array2<f64>,
    labels: &[usize],
    l2: f64,
) -> (f64, Array2<f64>) {
    let n = features.nrows() as f64;
    let d = features.ncols();
    let mut grad = Array2::zeros(weights.dim());
    let mut loss = 0.0;
    for (x, &y) in features.axis_iter(Axis(0)).zip(labels) {
        let mut p = class_scores(weights, x);
        let log_norm = {
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + p.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
        };
        loss += log_norm - p[y];
        softmax_in_place(&mut p);
        for (c, pc) in p.iter().enumerate() {
            let r = pc - if c == y { 1.0 } else { 0.0 };
            let mut g = grad.row_mut(c);
            g.slice_mut(s![..d]).scaled_add(r, &x);
            g[d] += r;
        }
    }
    let reg = weights.slice(s![.., ..d]);
    loss += 0.5 * l2 * reg.iter().map(|w| w * w).sum::<f64>();
    grad.slice_mut(s![.., ..d]).scaled_add(l2, &reg);
    (loss / n, grad / n)
}

/// Full-batch gradient descent from zero weights.
pub fn train(features: &Array2<f64>, labels: &[FlairGroup], config: &TrainConfig) -> Result<LogRegModel> {
    if features.nrows() != labels.len() {
        return Err(FlairError::Dimension(format!(
            "{} feature rows, {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    let y: Vec<usize> = labels.iter().map(|l| class_index(*l)).collect::<Result<_>>()?;
    let mut distinct = y.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(FlairError::SingleClass(distinct.len()));
    }
    let mut weights = Array2::zeros((CLASSES.len(), features.ncols() + 1));
    let mut loss_trace = Vec::new();
    for epoch in 0..config.max_epochs {
        let (loss, grad) = loss_and_gradient(&weights, features, &y, config.l2);
        if !loss.is_finite() {
            return Err(FlairError::Diverged {
                epoch,
                learning_rate: config.learning_rate,
            });
        }
        loss_trace.push(loss);
        let max_grad = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if max_grad < config.tolerance {
            break;
        }
        weights.scaled_add(-config.learning_rate, &grad);
    }
    Ok(LogRegModel {
        classes: CLASSES.to_vec(),
        weights,
        train_config: config.clone(),
        loss_trace,
    })
}

/// Softmax class probabilities in [`CLASSES`] order.
pub fn predict_proba(model: &LogRegModel, row: &[f64]) -> Result<Vec<f64>> {
    if row.len() != model.n_features() {
        return Err(FlairError::Dimension(format!(
            "row has {} features, model expects {}",
            row.len(),
            model.n_features()
        )));
    }
    let mut p = class_scores(&model.weights, ArrayView1::from(row));
    softmax_in_place(&mut p);
    Ok(p)
}

pub fn predict(model: &LogRegModel, row: &[f64]) -> Result<FlairGroup> {
    let p = predict_proba(model, row)?;
    let best = p
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > p[b] { i } else { b });
    Ok(model.classes[best])
}

/// Labels every `Unlabelled` post with its most probable class. Feature
/// rows align with `posts`.
pub fn impute_flairs(posts: &[CleanPost], model: &LogRegModel, features: &Array2<f64>) -> Result<Vec<CleanPost>> {
    if features.nrows() != posts.len() {
        return Err(FlairError::Dimension(format!(
            "{} posts, {} feature rows",
            posts.len(),
            features.nrows()
        )));
    }
    posts
        .iter()
        .zip(features.axis_iter(Axis(0)))
        .map(|(post, x)| {
            if post.flair_group != FlairGroup::Unlabelled {
                return Ok(post.clone());
            }
            let row = x.to_vec();
            Ok(CleanPost {
                flair_group: predict(model, &row)?,
                flair_source: FlairSource::Predicted,
                ..post.clone()
            })
        })
        .collect()
}

/// Posts in the mental-health-support group, labelled or predicted.
pub fn select_support_subset(posts: &[CleanPost]) -> Result<Vec<CleanPost>> {
    if let Some(p) = posts.iter().find(|p| p.flair_group == FlairGroup::Unlabelled) {
        return Err(FlairError::Unlabelled(p.id.clone()));
    }
    Ok(posts
        .iter()
        .filter(|p| p.flair_group == FlairGroup::MentalHealthSupport)
        .cloned()
        .collect())
}

/// CSV of per-group counts before and after imputation.
pub fn class_count_csv(before: &[CleanPost], after: &[CleanPost]) -> String {
    let mut out = String::from("flair_group,labelled,predicted,before,after\n");
    for g in FlairGroup::ALL {
        let count = |posts: &[CleanPost]| posts.iter().filter(|p| p.flair_group == g).count();
        let by_source = |src| after.iter().filter(|p| p.flair_group == g && p.flair_source == src).count();
        out.push_str(&format!(
            "{g},{},{},{},{}\n",
            by_source(FlairSource::Labelled),
            by_source(FlairSource::Predicted),
            count(before),
            count(after)
        ));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ClassifierManifest {
    format_version: u32,
    classes: Vec<FlairGroup>,
    train_config: TrainConfig,
    loss_trace: Vec<f64>,
}

impl LogRegModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = ClassifierManifest {
            format_version: 1,
            classes: self.classes.clone(),
            train_config: self.train_config.clone(),
            loss_trace: self.loss_trace.clone(),
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| FlairError::Persist(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json)?;
        fs::write(dir.join("weights.bin"), matrix_io::encode_matrix(&self.weights))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ClassifierManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
            .map_err(|e| FlairError::Persist(e.to_string()))?;
        let weights = matrix_io::read_matrix(&fs::read(dir.join("weights.bin"))?[..])?;
        if weights.nrows() != manifest.classes.len() {
            return Err(FlairError::Persist("weight rows do not match classes".into()));
        }
        Ok(LogRegModel {
            classes: manifest.classes,
            weights,
            train_config: manifest.train_config,
            loss_trace: manifest.loss_trace,
        })
    }
}

/// Fraction of rows whose prediction equals the label.
pub fn accuracy(model: &LogRegModel, features: &Array2<f64>, labels: &[FlairGroup]) -> Result<f64> {
    let mut hits = 0usize;
    for (x, l) in features.axis_iter(Axis(0)).zip(labels) {
        if predict(model, &x.to_vec())? == *l {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Euclidean norm of the non-bias weights.
pub fn weight_norm(model: &LogRegModel) -> f64 {
    let d = model.n_features();
    let w: Array1<f64> = model.weights.slice(s![.., ..d]).iter().copied().collect();
    w.dot(&w).sqrt()
}
