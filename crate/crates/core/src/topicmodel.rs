//! LDA topic models.
//!
//! [`fit_vb`] runs batch mean-field variational Bayes and accepts any
//! nonnegative weights, so it can be trained on TF-IDF rows. [`fit_gibbs`]
//! is a collapsed Gibbs sampler for integer count matrices. Both produce an
//! [`LdaModel`] holding Dirichlet concentrations for documents and topics
//! together with their normalized means.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::matrix_io;
use crate::textprep::{DocTermMatrix, SparseRow, Weighting};

#[derive(Debug, Error)]
pub enum TopicModelError {
    #[error("invalid LDA configuration: {0}")]
    BadConfig(String),
    #[error("document-term matrix has no documents")]
    NoDocuments,
    #[error("document-term matrix is all zero")]
    AllZero,
    #[error("document-term matrix has a negative or non-finite entry at row {row}")]
    BadEntry { row: usize },
    #[error("ELBO became NaN at iteration {iteration}; the fit diverged numerically")]
    NumericalFailure { iteration: usize },
    #[error("collapsed Gibbs sampling needs an integer count matrix; use fit_vb for weighted input")]
    NotCounts,
    #[error("topic {topic} out of range for a {k}-topic model")]
    NoSuchTopic { topic: usize, k: usize },
    #[error("invalid topic group map: {0}")]
    BadGroupMap(String),
    #[error("row has {got} columns, model vocabulary has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model file error: {0}")]
    Persist(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = TopicModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub n_topics: usize,
    /// Symmetric document-topic prior.
    pub alpha: f64,
    /// Symmetric topic-word prior.
    pub eta: f64,
    pub max_iters: usize,
    pub elbo_rel_tol: f64,
    pub seed: u64,
}

impl LdaConfig {
    /// Priors default to `1/K`.
    pub fn new(n_topics: usize) -> Self {
        let prior = 1.0 / n_topics.max(1) as f64;
        LdaConfig {
            n_topics,
            alpha: prior,
            eta: prior,
            max_iters: 200,
            elbo_rel_tol: 1e-5,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics == 0 {
            return Err(TopicModelError::BadConfig("n_topics must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(TopicModelError::BadConfig("alpha must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(TopicModelError::BadConfig("eta must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(TopicModelError::BadConfig("max_iters must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig::new(10)
    }
}

/// Analyst grouping of topics into named themes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicGroupMap {
    pub groups: Vec<String>,
    /// Group index for each topic.
    pub assignment: Vec<usize>,
}

pub const DEFAULT_GROUPS: [&str; 6] = [
    "Fear of coronavirus",
    "Educational and occupational problems",
    "Family problems",
    "Problems related to social environment",
    "Mental health symptoms",
    "Uncertainty on development of pandemic",
];

impl TopicGroupMap {
    /// The six default groups with topics dealt round-robin. Analysts are
    /// expected to replace the assignment after reviewing samples.
    pub fn default_for(n_topics: usize) -> Self {
        TopicGroupMap {
            groups: DEFAULT_GROUPS.iter().map(|g| g.to_string()).collect(),
            assignment: (0..n_topics).map(|k| k % DEFAULT_GROUPS.len()).collect(),
        }
    }

    pub fn validate(&self, n_topics: usize) -> Result<()> {
        if self.groups.is_empty() {
            return Err(TopicModelError::BadGroupMap("no groups".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(g) = self.groups.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(TopicModelError::BadGroupMap(format!("duplicate group {g:?}")));
        }
        if self.assignment.len() != n_topics {
            return Err(TopicModelError::BadGroupMap(format!(
                "assignment covers {} topics, model has {n_topics}",
                self.assignment.len()
            )));
        }
        if let Some((k, g)) = self
            .assignment
            .iter()
            .enumerate()
            .find(|(_, g)| **g >= self.groups.len())
        {
            return Err(TopicModelError::BadGroupMap(format!(
                "topic {k} assigned to missing group {g}"
            )));
        }
        Ok(())
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == name)
    }
}

/// Sums a document's topic proportions within each group.
pub fn group_mass(theta: &[f64], map: &TopicGroupMap) -> Vec<f64> {
    let mut out = vec![0.0; map.groups.len()];
    for (k, t) in theta.iter().enumerate() {
        out[map.assignment[k]] += t;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    VariationalBayes,
    CollapsedGibbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub config: LdaConfig,
    pub method: FitMethod,
    pub terms: Vec<String>,
    pub vocabulary_hash: String,
    pub doc_ids: Vec<String>,
    /// Dirichlet parameters of each topic's word distribution (K x V).
    pub topic_word_concentration: Array2<f64>,
    /// Dirichlet parameters of each document's topic mixture (N x K).
    pub doc_topic_concentration: Array2<f64>,
    /// Normalized topic-word distributions (K x V).
    pub topic_word: Array2<f64>,
    /// Normalized document-topic distributions (N x K).
    pub doc_topic: Array2<f64>,
    pub elbo_trace: Vec<f64>,
    pub topic_names: Vec<Option<String>>,
    pub group_map: TopicGroupMap,
}

fn normalize_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let s: f64 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn validate_matrix(x: &DocTermMatrix) -> Result<()> {
    if x.n_docs() == 0 {
        return Err(TopicModelError::NoDocuments);
    }
    for (d, row) in x.rows.iter().enumerate() {
        if row.vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(TopicModelError::BadEntry { row: d });
        }
    }
    if x.rows.iter().all(|r| r.vals.iter().all(|v| *v == 0.0)) {
        return Err(TopicModelError::AllZero);
    }
    Ok(())
}

impl LdaModel {
    fn assemble(
        config: &LdaConfig,
        method: FitMethod,
        x: &DocTermMatrix,
        lambda: Array2<f64>,
        gamma: Array2<f64>,
        elbo_trace: Vec<f64>,
    ) -> Self {
        LdaModel {
            config: config.clone(),
            method,
            terms: x.vocabulary.terms.clone(),
            vocabulary_hash: x.vocabulary.content_hash(),
            doc_ids: (0..x.n_docs()).map(|d| d.to_string()).collect(),
            topic_word: normalize_rows(&lambda),
            doc_topic: normalize_rows(&gamma),
            topic_word_concentration: lambda,
            doc_topic_concentration: gamma,
            elbo_trace,
            topic_names: vec![None; config.n_topics],
            group_map: TopicGroupMap::default_for(config.n_topics),
        }
    }

    pub fn with_doc_ids(mut self, ids: Vec<String>) -> Self {
        assert_eq!(ids.len(), self.n_docs(), "one id per training document");
        self.doc_ids = ids;
        self
    }

    pub fn n_topics(&self) -> usize {
        self.topic_word.nrows()
    }

    pub fn n_terms(&self) -> usize {
        self.topic_word.ncols()
    }

    pub fn n_docs(&self) -> usize {
        self.doc_topic.nrows()
    }

    pub fn theta(&self, d: usize) -> Vec<f64> {
        self.doc_topic.row(d).to_vec()
    }

    pub fn doc_index(&self, id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == id)
    }

    pub fn set_group_map(&mut self, map: TopicGroupMap) -> Result<()> {
        map.validate(self.n_topics())?;
        self.group_map = map;
        Ok(())
    }

    pub fn set_topic_name(&mut self, topic: usize, name: Option<String>) -> Result<()> {
        let k = self.n_topics();
        let slot = self
            .topic_names
            .get_mut(topic)
            .ok_or(TopicModelError::NoSuchTopic { topic, k })?;
        *slot = name;
        Ok(())
    }
}

/// `psi(a) - psi(sum(a))` for each row.
fn dirichlet_expectation(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.mapv(digamma);
    for (mut row, src) in out.rows_mut().into_iter().zip(a.rows()) {
        let psi_total = digamma(src.sum());
        row.mapv_inplace(|v| v - psi_total);
    }
    out
}

fn dirichlet_expectation_1d(a: &[f64]) -> Vec<f64> {
    let psi_total = digamma(a.iter().sum());
    a.iter().map(|&v| digamma(v) - psi_total).collect()
}

struct DocUpdate {
    /// x_w * phi_wk for each nonzero column, row-major over (nnz, K).
    suff_stats: Vec<f64>,
}

const INNER_MAX_ITERS: usize = 200;
const INNER_TOL: f64 = 1e-7;

/// Coordinate ascent on one document's topic mixture with topics fixed.
/// `gamma` is updated in place from its current value. Returns the
/// expected topic counts consistent with the final `gamma`.
fn doc_estep(
    row: &SparseRow,
    exp_elog_beta: &Array2<f64>,
    alpha: f64,
    gamma: &mut [f64],
    max_iters: usize,
    tol: f64,
) -> DocUpdate {
    let k = gamma.len();
    let nnz = row.nnz();
    let mut exp_elog_theta: Vec<f64> = dirichlet_expectation_1d(gamma).into_iter().map(f64::exp).collect();
    let phinorm_of = |eet: &[f64]| -> Vec<f64> {
        row.cols
            .iter()
            .map(|&w| (0..k).map(|t| eet[t] * exp_elog_beta[[t, w]]).sum::<f64>() + 1e-100)
            .collect()
    };
    let mut phinorm = phinorm_of(&exp_elog_theta);
    for _ in 0..max_iters {
        let mut change = 0.0;
        for t in 0..k {
            let s: f64 = row
                .cols
                .iter()
                .zip(&row.vals)
                .zip(&phinorm)
                .map(|((&w, &x), &pn)| x / pn * exp_elog_beta[[t, w]])
                .sum();
            let updated = alpha + exp_elog_theta[t] * s;
            change += (updated - gamma[t]).abs();
            gamma[t] = updated;
        }
        exp_elog_theta = dirichlet_expectation_1d(gamma).into_iter().map(f64::exp).collect();
        phinorm = phinorm_of(&exp_elog_theta);
        if change / (k as f64) < tol {
            break;
        }
    }
    let mut suff_stats = vec![0.0; nnz * k];
    for (i, ((&w, &x), &pn)) in row.cols.iter().zip(&row.vals).zip(&phinorm).enumerate() {
        for t in 0..k {
            suff_stats[i * k + t] = exp_elog_theta[t] * x / pn * exp_elog_beta[[t, w]];
        }
    }
    DocUpdate { suff_stats }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Evidence lower bound with the word-level responsibilities optimized out.
fn elbo(x: &DocTermMatrix, gamma: &Array2<f64>, lambda: &Array2<f64>, alpha: f64, eta: f64) -> f64 {
    let k = lambda.nrows();
    let v = lambda.ncols();
    let elog_beta = dirichlet_expectation(lambda);
    let per_doc: Vec<f64> = x
        .rows
        .par_iter()
        .enumerate()
        .map(|(d, row)| {
            let g = gamma.row(d);
            let g = g.as_slice().expect("standard layout");
            let elog_theta = dirichlet_expectation_1d(g);
            let mut s = 0.0;
            for (w, xw) in row.iter() {
                s += xw * log_sum_exp((0..k).map(|t| elog_theta[t] + elog_beta[[t, w]]));
            }
            for t in 0..k {
                s += (alpha - g[t]) * elog_theta[t] + ln_gamma(g[t]) - ln_gamma(alpha);
            }
            s + ln_gamma(k as f64 * alpha) - ln_gamma(g.iter().sum())
        })
        .collect();
    let mut total: f64 = per_doc.iter().sum();
    for t in 0..k {
        let lam = lambda.row(t);
        for w in 0..v {
            total += (eta - lam[w]) * elog_beta[[t, w]] + ln_gamma(lam[w]) - ln_gamma(eta);
        }
        total += ln_gamma(v as f64 * eta) - ln_gamma(lam.sum());
    }
    total
}

/// Seed for one vocabulary column, derived from the term text so that a
/// permutation of columns permutes the initialization with it.
fn column_seed(seed: u64, term: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(term.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Share of each initial topic taken from its seed document.
const SEED_DOC_SHARE: f64 = 0.5;

/// Picks one seed document per topic by greedy D^2 sampling on cosine
/// distance: each step draws a few candidates in proportion to squared
/// distance from the seeds so far and keeps the one that lowers the total
/// potential most. Distances do not depend on column order.
fn seed_documents(x: &DocTermMatrix, k: usize, seed: u64) -> Vec<usize> {
    let norms: Vec<f64> = x.rows.iter().map(|r| r.vals.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let candidates: Vec<usize> = (0..x.n_docs()).filter(|&d| norms[d] > 0.0).collect();
    let mut dense = vec![0.0; x.n_terms()];
    // cosine distance from document `c` to every candidate
    let mut distances = |c: usize| -> Vec<f64> {
        for (w, v) in x.rows[c].iter() {
            dense[w] = v / norms[c];
        }
        let out = candidates
            .iter()
            .map(|&d| {
                let cos: f64 = x.rows[d].iter().map(|(w, v)| v * dense[w]).sum::<f64>() / norms[d];
                (1.0 - cos).max(0.0)
            })
            .collect();
        for (w, _) in x.rows[c].iter() {
            dense[w] = 0.0;
        }
        out
    };
    let trials = 2 + (k as f64).ln() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(column_seed(seed, "\0seed-documents"));
    let first = rng.random_range(0..candidates.len());
    let mut chosen = vec![candidates[first]];
    let mut nearest = distances(candidates[first]);
    while chosen.len() < k {
        let weights: Vec<f64> = nearest.iter().map(|d| d * d).collect();
        let draws: Vec<usize> = match WeightedIndex::new(&weights) {
            Ok(dist) => (0..trials).map(|_| dist.sample(&mut rng)).collect(),
            // every document duplicates a seed already
            Err(_) => vec![rng.random_range(0..candidates.len())],
        };
        let (best, best_nearest) = draws
            .into_iter()
            .map(|i| {
                let merged: Vec<f64> = nearest.iter().zip(distances(candidates[i])).map(|(a, b)| a.min(b)).collect();
                (i, merged)
            })
            .min_by(|(_, a), (_, b)| {
                let pa: f64 = a.iter().map(|d| d * d).sum();
                let pb: f64 = b.iter().map(|d| d * d).sum();
                pa.total_cmp(&pb)
            })
            .expect("at least one draw");
        chosen.push(candidates[best]);
        nearest = best_nearest;
    }
    chosen
}

/// Each topic starts with the average topic mass, half spread over the
/// vocabulary with per-term jitter and half shaped like one seed document.
/// Starting from near-uniform topics alone, batch updates settle in mixed
/// local optima on well-separated corpora far too often.
fn init_lambda(x: &DocTermMatrix, config: &LdaConfig) -> Array2<f64> {
    let k = config.n_topics;
    let v = x.n_terms();
    let jitter = Gamma::new(100.0, 0.01).expect("valid gamma parameters");
    let mass = x.rows.iter().map(SparseRow::sum).sum::<f64>() / k as f64;
    let mut lambda = Array2::zeros((k, v));
    for (w, term) in x.vocabulary.terms.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(column_seed(config.seed, term));
        for t in 0..k {
            lambda[[t, w]] = mass * (1.0 - SEED_DOC_SHARE) * jitter.sample(&mut rng) / v as f64;
        }
    }
    for (t, d) in seed_documents(x, k, config.seed).into_iter().enumerate() {
        let row = &x.rows[d];
        let total = row.sum();
        for (w, val) in row.iter() {
            lambda[[t, w]] += mass * SEED_DOC_SHARE * val / total;
        }
    }
    lambda
}

/// Batch variational Bayes. Each iteration updates every document's
/// mixture to convergence against the current topics, then re-estimates the
/// topics from the weighted responsibilities. The seed only affects the
/// topic initialization.
pub fn fit_vb(x: &DocTermMatrix, config: &LdaConfig) -> Result<LdaModel> {
    config.validate()?;
    validate_matrix(x)?;
    let k = config.n_topics;
    let v = x.n_terms();
    let mut lambda = init_lambda(x, config);
    let mut gamma = Array2::zeros((x.n_docs(), k));
    for (d, row) in x.rows.iter().enumerate() {
        let start = config.alpha + row.sum() / k as f64;
        gamma.row_mut(d).fill(start);
    }

    let mut trace: Vec<f64> = Vec::new();
    for iteration in 0..config.max_iters {
        let exp_elog_beta = dirichlet_expectation(&lambda).mapv(f64::exp);
        let updates: Vec<DocUpdate> = gamma
            .as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(k)
            .zip(x.rows.par_iter())
            .map(|(g, row)| {
                doc_estep(row, &exp_elog_beta, config.alpha, g, INNER_MAX_ITERS, INNER_TOL)
            })
            .collect();

        let mut sstats = Array2::<f64>::zeros((k, v));
        for (row, upd) in x.rows.iter().zip(&updates) {
            for (i, &w) in row.cols.iter().enumerate() {
                for t in 0..k {
                    sstats[[t, w]] += upd.suff_stats[i * k + t];
                }
            }
        }
        lambda = sstats.mapv(|s| s + config.eta);

        let bound = elbo(x, &gamma, &lambda, config.alpha, config.eta);
        if bound.is_nan() {
            return Err(TopicModelError::NumericalFailure { iteration });
        }
        let converged = trace
            .last()
            .is_some_and(|prev: &f64| ((bound - prev) / prev.abs()).abs() < config.elbo_rel_tol);
        trace.push(bound);
        if converged {
            break;
        }
    }
    Ok(LdaModel::assemble(
        config,
        FitMethod::VariationalBayes,
        x,
        lambda,
        gamma,
        trace,
    ))
}

/// Collapsed Gibbs sampling over token assignments for `max_iters` sweeps.
pub fn fit_gibbs(x: &DocTermMatrix, config: &LdaConfig) -> Result<LdaModel> {
    config.validate()?;
    if x.weighting != Weighting::Count || !x.is_integral() {
        return Err(TopicModelError::NotCounts);
    }
    validate_matrix(x)?;
    let k = config.n_topics;
    let v = x.n_terms();
    let (alpha, eta) = (config.alpha, config.eta);
    let v_eta = v as f64 * eta;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // (doc, word) per token, documents in order.
    let tokens: Vec<(usize, usize)> = x
        .rows
        .iter()
        .enumerate()
        .flat_map(|(d, row)| {
            row.iter()
                .flat_map(move |(w, c)| std::iter::repeat_n((d, w), c as usize))
        })
        .collect();
    let mut doc_topic = Array2::<f64>::zeros((x.n_docs(), k));
    let mut topic_word = Array2::<f64>::zeros((k, v));
    let mut topic_total = Array1::<f64>::zeros(k);
    let mut z: Vec<usize> = Vec::with_capacity(tokens.len());
    for &(d, w) in &tokens {
        let t = rng.random_range(0..k);
        z.push(t);
        doc_topic[[d, t]] += 1.0;
        topic_word[[t, w]] += 1.0;
        topic_total[t] += 1.0;
    }

    let mut weights = vec![0.0; k];
    for _ in 0..config.max_iters {
        for (i, &(d, w)) in tokens.iter().enumerate() {
            let old = z[i];
            doc_topic[[d, old]] -= 1.0;
            topic_word[[old, w]] -= 1.0;
            topic_total[old] -= 1.0;

            let mut total = 0.0;
            for t in 0..k {
                total += (doc_topic[[d, t]] + alpha) * (topic_word[[t, w]] + eta) / (topic_total[t] + v_eta);
                weights[t] = total;
            }
            let u = rng.random::<f64>() * total;
            let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

            z[i] = new;
            doc_topic[[d, new]] += 1.0;
            topic_word[[new, w]] += 1.0;
            topic_total[new] += 1.0;
        }
    }
    Ok(LdaModel::assemble(
        config,
        FitMethod::CollapsedGibbs,
        x,
        topic_word.mapv(|c| c + eta),
        doc_topic.mapv(|c| c + alpha),
        Vec::new(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaInference {
    pub theta: Vec<f64>,
    /// Set when the row had no mass and the uniform fallback was returned.
    pub degenerate: bool,
}

/// Infers a topic mixture for a new row with the topics held fixed.
pub fn infer_theta(model: &LdaModel, row: &SparseRow) -> Result<ThetaInference> {
    let k = model.n_topics();
    if let Some(&c) = row.cols.iter().find(|&&c| c >= model.n_terms()) {
        return Err(TopicModelError::DimensionMismatch {
            expected: model.n_terms(),
            got: c + 1,
        });
    }
    if row.vals.iter().all(|v| *v == 0.0) {
        return Ok(ThetaInference {
            theta: vec![1.0 / k as f64; k],
            degenerate: true,
        });
    }
    let exp_elog_beta = dirichlet_expectation(&model.topic_word_concentration).mapv(f64::exp);
    let alpha = model.config.alpha;
    let mut gamma = vec![alpha + row.sum() / k as f64; k];
    doc_estep(row, &exp_elog_beta, alpha, &mut gamma, 10_000, 1e-10);
    let total: f64 = gamma.iter().sum();
    Ok(ThetaInference {
        theta: gamma.iter().map(|g| g / total).collect(),
        degenerate: false,
    })
}

/// Index of the largest entry; the lowest index wins ties.
pub fn dominant_topic(theta: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in theta.iter().enumerate() {
        if v > theta[best] {
            best = k;
        }
    }
    best
}

/// The `n` most probable terms of a topic, ties broken lexicographically.
pub fn top_terms(model: &LdaModel, topic: usize, n: usize) -> Result<Vec<(String, f64)>> {
    let k = model.n_topics();
    if topic >= k {
        return Err(TopicModelError::NoSuchTopic { topic, k });
    }
    let row = model.topic_word.row(topic);
    let mut order: Vec<usize> = (0..model.n_terms()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .total_cmp(&row[a])
            .then_with(|| model.terms[a].cmp(&model.terms[b]))
    });
    Ok(order
        .into_iter()
        .take(n)
        .map(|w| (model.terms[w].clone(), row[w]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSelection {
    TopRanked,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSample {
    pub topic: usize,
    pub post_id: String,
    pub theta_value: f64,
    pub selection: SampleSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSelection {
    pub samples: Vec<ReviewSample>,
    /// False when fewer than six documents have this dominant topic.
    pub complete: bool,
}

pub const TOP_SAMPLES: usize = 3;
pub const RANDOM_SAMPLES: usize = 3;

/// Three highest-proportion documents among those dominated by `topic`,
/// plus three drawn uniformly from the rest of that set.
pub fn select_review_samples(model: &LdaModel, topic: usize, seed: u64) -> Result<ReviewSelection> {
    let k = model.n_topics();
    if topic >= k {
        return Err(TopicModelError::NoSuchTopic { topic, k });
    }
    let column = model.doc_topic.column(topic);
    let mut members: Vec<usize> = (0..model.n_docs())
        .filter(|&d| dominant_topic(model.doc_topic.row(d).as_slice().expect("standard layout")) == topic)
        .collect();
    members.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));

    let make = |d: usize, selection| ReviewSample {
        topic,
        post_id: model.doc_ids[d].clone(),
        theta_value: column[d],
        selection,
    };
    let split = members.len().min(TOP_SAMPLES);
    let mut samples: Vec<ReviewSample> = members[..split]
        .iter()
        .map(|&d| make(d, SampleSelection::TopRanked))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = &members[split..];
    samples.extend(
        rest.choose_multiple(&mut rng, RANDOM_SAMPLES)
            .map(|&d| make(d, SampleSelection::Random)),
    );
    Ok(ReviewSelection {
        complete: samples.len() == TOP_SAMPLES + RANDOM_SAMPLES,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    method: FitMethod,
    config: LdaConfig,
    terms: Vec<String>,
    vocabulary_hash: String,
    doc_ids: Vec<String>,
    elbo_trace: Vec<f64>,
    topic_names: Vec<Option<String>>,
    group_map: TopicGroupMap,
}

const MANIFEST: &str = "manifest.json";
const TOPIC_WORD: &str = "topic_word.bin";
const DOC_TOPIC: &str = "doc_topic.bin";
const TOPIC_WORD_CONC: &str = "topic_word_concentration.bin";
const DOC_TOPIC_CONC: &str = "doc_topic_concentration.bin";

impl LdaModel {
    /// Writes the manifest and matrix files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = ModelManifest {
            format_version: 1,
            method: self.method,
            config: self.config.clone(),
            terms: self.terms.clone(),
            vocabulary_hash: self.vocabulary_hash.clone(),
            doc_ids: self.doc_ids.clone(),
            elbo_trace: self.elbo_trace.clone(),
            topic_names: self.topic_names.clone(),
            group_map: self.group_map.clone(),
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| TopicModelError::Persist(e.to_string()))?;
        fs::write(dir.join(MANIFEST), json)?;
        for (name, m) in [
            (TOPIC_WORD, &self.topic_word),
            (DOC_TOPIC, &self.doc_topic),
            (TOPIC_WORD_CONC, &self.topic_word_concentration),
            (DOC_TOPIC_CONC, &self.doc_topic_concentration),
        ] {
            fs::write(dir.join(name), matrix_io::encode_matrix(m))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ModelManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)
            .map_err(|e| TopicModelError::Persist(e.to_string()))?;
        let read = |name: &str| -> Result<Array2<f64>> {
            Ok(matrix_io::read_matrix(&fs::read(dir.join(name))?[..])?)
        };
        let model = LdaModel {
            topic_word: read(TOPIC_WORD)?,
            doc_topic: read(DOC_TOPIC)?,
            topic_word_concentration: read(TOPIC_WORD_CONC)?,
            doc_topic_concentration: read(DOC_TOPIC_CONC)?,
            config: manifest.config,
            method: manifest.method,
            terms: manifest.terms,
            vocabulary_hash: manifest.vocabulary_hash,
            doc_ids: manifest.doc_ids,
            elbo_trace: manifest.elbo_trace,
            topic_names: manifest.topic_names,
            group_map: manifest.group_map,
        };
        let (k, v) = model.topic_word.dim();
        if model.terms.len() != v
            || model.doc_topic.ncols() != k
            || model.doc_ids.len() != model.doc_topic.nrows()
            || model.topic_names.len() != k
        {
            return Err(TopicModelError::Persist("model files disagree on dimensions".into()));
        }
        model.group_map.validate(k)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::{NgramRange, Vocabulary};

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::new(
            (0..n).map(|i| format!("w{i}")).collect(),
            vec![1; n],
            vec![0.0; n],
            1,
            NgramRange { min: 1, max: 1 },
        )
    }

    fn matrix(rows: &[Vec<f64>], weighting: Weighting) -> DocTermMatrix {
        DocTermMatrix::from_dense(rows, vocab(rows[0].len()), weighting)
    }

    fn assert_rows_normalized(m: &Array2<f64>) {
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn single_topic_is_degenerate() {
        let x = matrix(&[vec![2.0, 1.0, 0.0], vec![1.0, 0.0, 3.0]], Weighting::Count);
        let cfg = LdaConfig::new(1);
        let m = fit_vb(&x, &cfg).unwrap();
        assert!(m.doc_topic.iter().all(|v| (*v - 1.0).abs() < 1e-12));
        // eta + term mass, normalized
        let mass = [3.0, 1.0, 3.0];
        let total = 7.0 + 3.0 * cfg.eta;
        for (w, n) in mass.iter().enumerate() {
            assert!((m.topic_word[[0, w]] - (n + cfg.eta) / total).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_documents_get_identical_theta() {
        let x = matrix(
            &[vec![3.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0, 2.0], vec![3.0, 1.0, 0.0, 0.0]],
            Weighting::Count,
        );
        let m = fit_vb(&x, &LdaConfig::new(2).with_seed(3)).unwrap();
        assert_eq!(m.doc_topic.row(0), m.doc_topic.row(2));
    }

    #[test]
    fn vb_rejects_bad_input() {
        let zero = matrix(&[vec![0.0, 0.0]], Weighting::TfIdf);
        assert!(matches!(fit_vb(&zero, &LdaConfig::new(2)), Err(TopicModelError::AllZero)));
        let neg = matrix(&[vec![1.0, -0.5]], Weighting::TfIdf);
        assert!(matches!(fit_vb(&neg, &LdaConfig::new(2)), Err(TopicModelError::BadEntry { row: 0 })));
        let ok = matrix(&[vec![1.0, 0.5]], Weighting::TfIdf);
        assert!(fit_vb(&ok, &LdaConfig::new(0)).is_err());
    }

    #[test]
    fn vb_accepts_weights_and_elbo_rises() {
        let x = matrix(
            &[
                vec![0.9, 0.4, 0.0, 0.0, 0.1],
                vec![0.8, 0.6, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.7, 0.7, 0.1],
                vec![0.0, 0.1, 0.6, 0.8, 0.0],
            ],
            Weighting::TfIdf,
        );
        let m = fit_vb(&x, &LdaConfig::new(2).with_seed(11)).unwrap();
        assert_rows_normalized(&m.doc_topic);
        assert_rows_normalized(&m.topic_word);
        for w in m.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - w[0].abs() * 1e-6, "{} -> {}", w[0], w[1]);
        }
        assert_eq!(dominant_topic(&m.theta(0)), dominant_topic(&m.theta(1)));
        assert_ne!(dominant_topic(&m.theta(0)), dominant_topic(&m.theta(2)));
    }

    #[test]
    fn vb_is_seed_deterministic() {
        let x = matrix(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 4.0], vec![2.0, 0.0, 1.0]], Weighting::Count);
        let cfg = LdaConfig::new(2).with_seed(5);
        assert_eq!(fit_vb(&x, &cfg).unwrap(), fit_vb(&x, &cfg).unwrap());
    }

    #[test]
    fn gibbs_forced_counts() {
        let x = matrix(&[vec![3.0, 0.0]], Weighting::Count);
        let cfg = LdaConfig::new(1);
        let m = fit_gibbs(&x, &cfg).unwrap();
        assert_eq!(m.theta(0), [1.0]);
        let expected = (3.0 + cfg.eta) / (3.0 + 2.0 * cfg.eta);
        assert!((m.topic_word[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn gibbs_rejects_weights() {
        let x = matrix(&[vec![0.5, 0.5]], Weighting::TfIdf);
        assert!(matches!(fit_gibbs(&x, &LdaConfig::new(2)), Err(TopicModelError::NotCounts)));
        let x = matrix(&[vec![1.5, 2.0]], Weighting::Count);
        assert!(matches!(fit_gibbs(&x, &LdaConfig::new(2)), Err(TopicModelError::NotCounts)));
    }

    #[test]
    fn gibbs_is_seed_deterministic() {
        let x = matrix(&[vec![3.0, 1.0, 0.0], vec![0.0, 2.0, 5.0]], Weighting::Count);
        let cfg = LdaConfig::new(2).with_seed(9);
        let a = fit_gibbs(&x, &cfg).unwrap();
        assert_eq!(a, fit_gibbs(&x, &cfg).unwrap());
        assert_rows_normalized(&a.doc_topic);
        assert_rows_normalized(&a.topic_word);
    }

    #[test]
    fn dominant_topic_ties() {
        assert_eq!(dominant_topic(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(dominant_topic(&[0.5, 0.5]), 0);
        assert_eq!(dominant_topic(&[0.25; 4]), 0);
    }

    #[test]
    fn top_terms_order() {
        let x = matrix(&[vec![2.0, 1.0]], Weighting::Count);
        let m = fit_vb(&x, &LdaConfig::new(1)).unwrap();
        let top = top_terms(&m, 0, 5).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].0, "w0");
        assert!(top_terms(&m, 0, 0).unwrap().is_empty());
        assert!(top_terms(&m, 1, 3).is_err());
    }

    #[test]
    fn infer_theta_zero_row_is_uniform() {
        let x = matrix(&[vec![2.0, 1.0], vec![0.0, 3.0]], Weighting::Count);
        let m = fit_vb(&x, &LdaConfig::new(4)).unwrap();
        let inf = infer_theta(&m, &SparseRow::default()).unwrap();
        assert!(inf.degenerate);
        assert_eq!(inf.theta, [0.25; 4]);
        let bad = SparseRow { cols: vec![7], vals: vec![1.0] };
        assert!(infer_theta(&m, &bad).is_err());
    }

    #[test]
    fn infer_theta_matches_training() {
        let x = matrix(
            &[
                vec![4.0, 3.0, 0.0, 0.0, 1.0, 0.0],
                vec![5.0, 2.0, 1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 4.0, 5.0, 0.0, 1.0],
                vec![0.0, 1.0, 3.0, 4.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0, 5.0, 4.0],
                vec![0.0, 0.0, 1.0, 0.0, 4.0, 4.0],
            ],
            Weighting::Count,
        );
        let mut cfg = LdaConfig::new(3).with_seed(2);
        cfg.elbo_rel_tol = 1e-10;
        cfg.max_iters = 500;
        let m = fit_vb(&x, &cfg).unwrap();
        for d in 0..x.n_docs() {
            let inf = infer_theta(&m, &x.rows[d]).unwrap();
            let tv: f64 = inf.theta.iter().zip(m.theta(d)).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
            assert!(tv < 1e-3, "doc {d}: tv {tv}");
            assert_eq!(inf, infer_theta(&m, &x.rows[d].clone()).unwrap());
        }
    }

    #[test]
    fn column_permutation_permutes_topics_words() {
        let rows = vec![
            vec![4.0, 3.0, 0.0, 0.0, 1.0],
            vec![5.0, 2.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 4.0, 5.0, 0.0],
            vec![0.0, 1.0, 3.0, 4.0, 2.0],
        ];
        let perm = [3usize, 0, 4, 1, 2];
        let terms: Vec<String> = (0..5).map(|i| format!("w{i}")).collect();
        let permuted_rows: Vec<Vec<f64>> = rows.iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect();
        let permuted_vocab = Vocabulary::new(
            perm.iter().map(|&p| terms[p].clone()).collect(),
            vec![1; 5],
            vec![0.0; 5],
            4,
            NgramRange { min: 1, max: 1 },
        );
        let a = fit_vb(&matrix(&rows, Weighting::Count), &LdaConfig::new(2).with_seed(4)).unwrap();
        let b = fit_vb(
            &DocTermMatrix::from_dense(&permuted_rows, permuted_vocab, Weighting::Count),
            &LdaConfig::new(2).with_seed(4),
        )
        .unwrap();
        for t in 0..2 {
            for (j, &p) in perm.iter().enumerate() {
                assert!((a.topic_word[[t, p]] - b.topic_word[[t, j]]).abs() < 1e-9);
            }
        }
        for (x, y) in a.doc_topic.iter().zip(b.doc_topic.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    fn model_with_theta(theta: Vec<Vec<f64>>) -> LdaModel {
        let n = theta.len();
        let k = theta[0].len();
        let flat: Vec<f64> = theta.into_iter().flatten().collect();
        let doc_topic = Array2::from_shape_vec((n, k), flat).unwrap();
        LdaModel {
            config: LdaConfig::new(k),
            method: FitMethod::VariationalBayes,
            terms: vec!["a".into()],
            vocabulary_hash: String::new(),
            doc_ids: (0..n).map(|d| format!("post{d}")).collect(),
            topic_word_concentration: Array2::ones((k, 1)),
            doc_topic_concentration: doc_topic.clone(),
            topic_word: Array2::ones((k, 1)),
            doc_topic,
            elbo_trace: vec![],
            topic_names: vec![None; k],
            group_map: TopicGroupMap::default_for(k),
        }
    }

    #[test]
    fn review_samples_three_plus_three() {
        let theta: Vec<Vec<f64>> = (0..10)
            .map(|d| {
                let v = 0.5 + d as f64 * 0.04;
                vec![(1.0 - v) / 2.0, (1.0 - v) / 2.0, v]
            })
            .collect();
        let m = model_with_theta(theta);
        let sel = select_review_samples(&m, 2, 7).unwrap();
        assert!(sel.complete);
        assert_eq!(sel.samples.len(), 6);
        let top: Vec<&str> = sel.samples[..3].iter().map(|s| s.post_id.as_str()).collect();
        assert_eq!(top, ["post9", "post8", "post7"]);
        assert!(sel.samples[3..].iter().all(|s| s.selection == SampleSelection::Random));
        let mut ids: Vec<&str> = sel.samples.iter().map(|s| s.post_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 6);
        for s in &sel.samples {
            let d = m.doc_index(&s.post_id).unwrap();
            assert_eq!(s.theta_value, m.doc_topic[[d, 2]]);
        }
        assert_eq!(sel, select_review_samples(&m, 2, 7).unwrap());
    }

    #[test]
    fn review_samples_exhaustion() {
        let mut theta = vec![vec![0.1, 0.1, 0.8]; 4];
        theta.push(vec![0.8, 0.1, 0.1]);
        let m = model_with_theta(theta);
        let sel = select_review_samples(&m, 2, 1).unwrap();
        assert!(!sel.complete);
        assert_eq!(sel.samples.len(), 4);
        assert_eq!(sel.samples.iter().filter(|s| s.selection == SampleSelection::TopRanked).count(), 3);
        let none = select_review_samples(&m, 1, 1).unwrap();
        assert!(none.samples.is_empty() && !none.complete);
    }

    #[test]
    fn group_mass_examples() {
        let map = TopicGroupMap { groups: vec!["A".into(), "B".into()], assignment: vec![0, 0, 1] };
        let g = group_mass(&[0.2, 0.3, 0.5], &map);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        let one = TopicGroupMap { groups: vec!["all".into()], assignment: vec![0; 3] };
        assert!((group_mass(&[0.2, 0.3, 0.5], &one)[0] - 1.0).abs() < 1e-15);
        // permuting topics together with the assignment
        let permuted = TopicGroupMap { groups: map.groups.clone(), assignment: vec![1, 0, 0] };
        assert_eq!(group_mass(&[0.5, 0.3, 0.2], &permuted), group_mass(&[0.2, 0.3, 0.5], &map));
    }

    #[test]
    fn group_map_validation() {
        assert!(TopicGroupMap::default_for(10).validate(10).is_ok());
        let bad = TopicGroupMap { groups: vec!["a".into()], assignment: vec![0, 1] };
        assert!(bad.validate(2).is_err());
        assert!(bad.validate(3).is_err());
        let dup = TopicGroupMap { groups: vec!["a".into(), "a".into()], assignment: vec![0] };
        assert!(dup.validate(1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let x = matrix(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 4.0]], Weighting::Count);
        let mut m = fit_vb(&x, &LdaConfig::new(2).with_seed(1))
            .unwrap()
            .with_doc_ids(vec!["a".into(), "b".into()]);
        m.set_topic_name(1, Some("family problems".into())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = LdaModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
    }
}
