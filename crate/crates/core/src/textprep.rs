//! Tokenization, n-grams, curated vocabulary selection and document-term
//! matrices (raw counts or L2-normalized TF-IDF).

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::LazyLock;

use indexmap::IndexSet;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S*").unwrap());

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("invalid n-gram range {min}..{max}")]
    BadNgramRange { min: usize, max: usize },
    #[error("{0}")]
    BadConfig(String),
    #[error("no candidate terms survive filtering (min_df={min_df}, {excluded} excluded); loosen the feature configuration")]
    EmptyCandidates { min_df: usize, excluded: usize },
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("corpus has no non-empty documents")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Stopwords = HashSet<String>;

/// The bundled English list.
pub fn default_stopwords() -> Stopwords {
    parse_stopwords(DEFAULT_STOPWORDS)
}

pub fn parse_stopwords(text: &str) -> Stopwords {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_stopwords(path: impl AsRef<Path>) -> Result<Stopwords, TextprepError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    Ok(parse_stopwords(&text))
}

/// Lowercases, strips URLs, splits on anything outside `[a-z0-9']`, trims
/// edge apostrophes, and drops one-character tokens and stopwords.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let lowered = text.to_lowercase();
    let stripped = URL.replace_all(&lowered, " ");
    stripped
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| t.len() >= 2 && !stopwords.contains(*t))
        .map(str::to_string)
        .collect()
}

/// True when the text carries a link marker.
pub fn has_hyperlink(text: &str) -> bool {
    let lowered = text.to_lowercase();
    ["http://", "https://", "www."]
        .iter()
        .any(|m| lowered.contains(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramRange {
    pub min: usize,
    pub max: usize,
}

impl NgramRange {
    pub fn new(min: usize, max: usize) -> Result<Self, TextprepError> {
        let r = NgramRange { min, max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), TextprepError> {
        if self.min == 0 || self.min > self.max {
            Err(TextprepError::BadNgramRange {
                min: self.min,
                max: self.max,
            })
        } else {
            Ok(())
        }
    }
}

impl Default for NgramRange {
    fn default() -> Self {
        NgramRange { min: 1, max: 2 }
    }
}

/// All contiguous n-grams, grouped by n and then by position.
pub fn extract_ngrams(tokens: &[String], range: NgramRange) -> Vec<String> {
    let mut out = Vec::new();
    for n in range.min..=range.max {
        if n > tokens.len() {
            break;
        }
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub max_features: usize,
    pub ngram_range: NgramRange,
    pub min_df: usize,
    #[serde(skip, default = "default_stopwords")]
    pub stopwords: Stopwords,
    pub include_tokens: IndexSet<String>,
    pub exclude_tokens: BTreeSet<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            max_features: 300,
            ngram_range: NgramRange::default(),
            min_df: 2,
            stopwords: default_stopwords(),
            include_tokens: IndexSet::new(),
            exclude_tokens: BTreeSet::new(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), TextprepError> {
        self.ngram_range.validate()?;
        if self.max_features == 0 {
            return Err(TextprepError::BadConfig("max_features must be positive".into()));
        }
        if self.min_df == 0 {
            return Err(TextprepError::BadConfig("min_df must be positive".into()));
        }
        if let Some(t) = self.include_tokens.iter().find(|t| self.exclude_tokens.contains(*t)) {
            return Err(TextprepError::BadConfig(format!(
                "token {t:?} is both included and excluded"
            )));
        }
        if self.include_tokens.len() > self.max_features {
            return Err(TextprepError::BadConfig(format!(
                "{} include tokens exceed max_features={}",
                self.include_tokens.len(),
                self.max_features
            )));
        }
        Ok(())
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text, &self.stopwords)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr")]
pub struct Vocabulary {
    pub terms: Vec<String>,
    /// Document frequency per column.
    pub df: Vec<usize>,
    /// Selection score (total TF-IDF mass) per column.
    pub score: Vec<f64>,
    /// Documents the statistics were computed on.
    pub n_docs: usize,
    pub ngram_range: NgramRange,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(
        terms: Vec<String>,
        df: Vec<usize>,
        score: Vec<f64>,
        n_docs: usize,
        ngram_range: NgramRange,
    ) -> Self {
        let mut v = Vocabulary {
            terms,
            df,
            score,
            n_docs,
            ngram_range,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    /// Smoothed inverse document frequency of column `col`.
    pub fn idf(&self, col: usize) -> f64 {
        smoothed_idf(self.n_docs, self.df[col])
    }

    /// Hex SHA-256 over the newline-joined terms.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.terms {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TextprepError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["term", "index", "df", "score"])?;
        for (i, term) in self.terms.iter().enumerate() {
            w.write_record([
                term.clone(),
                i.to_string(),
                self.df[i].to_string(),
                self.score[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV written by [`Vocabulary::write_csv`]. Statistics not
    /// present in the file (document count, n-gram range) are supplied.
    pub fn read_csv<R: Read>(
        reader: R,
        n_docs: usize,
        ngram_range: NgramRange,
    ) -> Result<Self, TextprepError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut rows: Vec<(usize, String, usize, f64)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse_err = |what: &str| TextprepError::BadConfig(format!("bad vocabulary {what}"));
            let index = rec[1].parse().map_err(|_| parse_err("index"))?;
            let df = rec[2].parse().map_err(|_| parse_err("df"))?;
            let score = rec[3].parse().map_err(|_| parse_err("score"))?;
            rows.push((index, rec[0].to_string(), df, score));
        }
        rows.sort_by_key(|r| r.0);
        let (terms, df, score) = rows.into_iter().fold(
            (Vec::new(), Vec::new(), Vec::new()),
            |(mut t, mut d, mut s), (_, term, df, score)| {
                t.push(term);
                d.push(df);
                s.push(score);
                (t, d, s)
            },
        );
        Ok(Vocabulary::new(terms, df, score, n_docs, ngram_range))
    }
}

#[derive(Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    df: Vec<usize>,
    score: Vec<f64>,
    n_docs: usize,
    ngram_range: NgramRange,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::new(r.terms, r.df, r.score, r.n_docs, r.ngram_range)
    }
}

pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

fn term_counts(tokens: &[String], range: NgramRange) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for g in extract_ngrams(tokens, range) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Chooses the feature columns: present include tokens first, in their
/// given order, then the remaining candidates by descending total TF-IDF
/// mass (ties lexicographic) until `max_features` columns exist.
pub fn build_vocabulary(
    docs: &[Vec<String>],
    config: &FeatureConfig,
) -> Result<Vocabulary, TextprepError> {
    config.validate()?;
    if docs.iter().all(|d| d.is_empty()) {
        return Err(TextprepError::EmptyCorpus);
    }
    let n_docs = docs.len();
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut total: HashMap<String, usize> = HashMap::new();
    for doc in docs {
        for (term, count) in term_counts(doc, config.ngram_range) {
            *df.entry(term.clone()).or_insert(0) += 1;
            *total.entry(term).or_insert(0) += count;
        }
    }
    let mass = |term: &str| total[term] as f64 * smoothed_idf(n_docs, df[term]);

    let includes: Vec<&String> = config
        .include_tokens
        .iter()
        .filter(|t| df.contains_key(*t))
        .collect();
    let mut candidates: Vec<(&String, f64)> = df
        .iter()
        .filter(|(t, n)| {
            **n >= config.min_df
                && !config.exclude_tokens.contains(*t)
                && !config.include_tokens.contains(*t)
        })
        .map(|(t, _)| (t, mass(t)))
        .collect();
    if includes.is_empty() && candidates.is_empty() {
        return Err(TextprepError::EmptyCandidates {
            min_df: config.min_df,
            excluded: config.exclude_tokens.len(),
        });
    }
    candidates.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });

    let remaining = config.max_features.saturating_sub(includes.len());
    let chosen: Vec<&String> = includes
        .into_iter()
        .chain(candidates.into_iter().take(remaining).map(|(t, _)| t))
        .collect();
    let terms: Vec<String> = chosen.iter().map(|t| (*t).clone()).collect();
    let dfs = chosen.iter().map(|t| df[*t]).collect();
    let scores = chosen.iter().map(|t| mass(t)).collect();
    Ok(Vocabulary::new(terms, dfs, scores, n_docs, config.ngram_range))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    Count,
    TfIdf,
}

/// One sparse matrix row; columns strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseRow {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cols.iter().copied().zip(self.vals.iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn sum(&self) -> f64 {
        self.vals.iter().sum()
    }

    pub fn to_dense(&self, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for (c, v) in self.iter() {
            out[c] = v;
        }
        out
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let mut row = SparseRow::default();
        for (c, &v) in values.iter().enumerate() {
            if v != 0.0 {
                row.cols.push(c);
                row.vals.push(v);
            }
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocTermMatrix {
    pub vocabulary: Vocabulary,
    pub rows: Vec<SparseRow>,
    pub weighting: Weighting,
}

impl DocTermMatrix {
    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_terms(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn dense_row(&self, d: usize) -> Vec<f64> {
        self.rows[d].to_dense(self.n_terms())
    }

    /// Builds a matrix from dense rows, e.g. for synthetic corpora.
    pub fn from_dense(rows: &[Vec<f64>], vocabulary: Vocabulary, weighting: Weighting) -> Self {
        DocTermMatrix {
            vocabulary,
            rows: rows.iter().map(|r| SparseRow::from_dense(r)).collect(),
            weighting,
        }
    }

    pub fn is_integral(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.vals.iter().all(|v| v.fract() == 0.0 && *v >= 0.0))
    }
}

fn count_row(doc: &[String], vocab: &Vocabulary) -> SparseRow {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for g in extract_ngrams(doc, vocab.ngram_range) {
        if let Some(c) = vocab.index_of(&g) {
            *counts.entry(c).or_insert(0.0) += 1.0;
        }
    }
    let mut entries: Vec<(usize, f64)> = counts.into_iter().collect();
    entries.sort_by_key(|e| e.0);
    SparseRow {
        cols: entries.iter().map(|e| e.0).collect(),
        vals: entries.iter().map(|e| e.1).collect(),
    }
}

pub fn count_matrix(docs: &[Vec<String>], vocab: &Vocabulary) -> Result<DocTermMatrix, TextprepError> {
    if vocab.is_empty() {
        return Err(TextprepError::EmptyVocabulary);
    }
    Ok(DocTermMatrix {
        vocabulary: vocab.clone(),
        rows: docs.iter().map(|d| count_row(d, vocab)).collect(),
        weighting: Weighting::Count,
    })
}

/// Raw count times smoothed idf, each nonzero row scaled to unit L2 norm.
/// The idf uses the document statistics stored in the vocabulary.
pub fn tfidf_matrix(docs: &[Vec<String>], vocab: &Vocabulary) -> Result<DocTermMatrix, TextprepError> {
    let mut m = count_matrix(docs, vocab)?;
    for row in &mut m.rows {
        for (c, v) in row.cols.iter().zip(row.vals.iter_mut()) {
            *v *= vocab.idf(*c);
        }
        let norm = row.vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.vals.iter_mut().for_each(|v| *v /= norm);
        }
    }
    m.weighting = Weighting::TfIdf;
    Ok(m)
}
