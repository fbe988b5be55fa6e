//! Pipeline configuration.
//!
//! One INI file with a fixed set of sections. Every key can be overridden
//! by a command-line flag of the same name or by an environment variable
//! `STRESSORLENS_<KEY>`; precedence is flag, then environment, then file,
//! then the built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indexmap::IndexSet;
use sha2::{Digest, Sha256};
use stressorlens_core::flairclf::TrainConfig;
use stressorlens_core::textprep::{default_stopwords, load_stopwords, FeatureConfig, NgramRange};
use stressorlens_core::topicmodel::LdaConfig;
use stressorlens_core::trends::DEFAULT_LOCATIONS;
use thiserror::Error;

pub const ENV_PREFIX: &str = "STRESSORLENS_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("unknown config section [{0}]")]
    UnknownSection(String),
    #[error("unknown config key {key:?} in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("key {key:?} belongs in [{expected}], found in [{found}]")]
    WrongSection { key: String, expected: String, found: String },
    #[error("invalid value {value:?} for {key}: {message}")]
    Invalid { key: String, value: String, message: String },
    #[error("{0} is required but not set")]
    Missing(&'static str),
}

/// Key, owning section, default value (empty for unset).
pub const KEYS: &[(&str, &str, &str)] = &[
    ("corpus_path", "corpus", ""),
    ("stopwords_path", "corpus", ""),
    ("max_features", "features", "300"),
    ("ngram_min", "features", "1"),
    ("ngram_max", "features", "2"),
    ("min_df", "features", "2"),
    ("include", "features", ""),
    ("exclude", "features", ""),
    ("n_topics", "lda", "10"),
    ("alpha", "lda", ""),
    ("eta", "lda", ""),
    ("max_iters", "lda", "200"),
    ("elbo_rel_tol", "lda", "1e-5"),
    ("method", "lda", "vb"),
    ("seed", "lda", "42"),
    ("learning_rate", "classifier", "0.1"),
    ("l2", "classifier", "1.0"),
    ("max_epochs", "classifier", "500"),
    ("tolerance", "classifier", "1e-6"),
    ("classifier_topics", "classifier", "10"),
    ("classifier_features", "classifier", "200"),
    ("lexicon_path", "lexicon", ""),
    ("external_csv_path", "trends", ""),
    ("locations", "trends", ""),
    ("correlate_proportions", "trends", "false"),
    ("run_dir", "service", "run"),
    ("host", "service", "127.0.0.1"),
    ("port", "service", "8080"),
];

const PATH_KEYS: &[&str] = &["corpus_path", "stopwords_path", "lexicon_path", "external_csv_path", "run_dir"];

pub const SECTIONS: &[&str] = &["corpus", "features", "lda", "classifier", "lexicon", "trends", "service"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdaMethod {
    Vb,
    Gibbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub train: TrainConfig,
    pub lda_topics: usize,
    pub tfidf_features: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub corpus_path: Option<PathBuf>,
    pub stopwords_path: Option<PathBuf>,
    pub features: FeatureConfig,
    pub lda: LdaConfig,
    pub lda_method: LdaMethod,
    pub classifier: ClassifierConfig,
    pub lexicon_path: Option<PathBuf>,
    pub external_csv_path: Option<PathBuf>,
    pub locations: Vec<String>,
    pub correlate_proportions: bool,
    pub run_dir: PathBuf,
    pub host: String,
    pub port: u16,
    /// Resolved key/value pairs, used for hashing and display.
    pub resolved: BTreeMap<String, String>,
}

/// Raw values gathered from the file, environment and flags.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: BTreeMap<String, String>,
    pub env: BTreeMap<String, String>,
    pub flags: BTreeMap<String, String>,
    /// Directory relative file paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl ConfigSources {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut sources = ConfigSources::from_ini_str(&text)?;
        sources.base_dir = path.parent().map(Path::to_path_buf);
        Ok(sources)
    }

    pub fn from_ini_str(text: &str) -> Result<Self, ConfigError> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| ConfigError::Read {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        let mut file = BTreeMap::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(ConfigError::UnknownKey {
                        section: String::new(),
                        key: key.to_string(),
                    });
                }
                continue;
            };
            if !SECTIONS.contains(&section) {
                return Err(ConfigError::UnknownSection(section.to_string()));
            }
            for (key, value) in props.iter() {
                match KEYS.iter().find(|(k, _, _)| *k == key) {
                    None => {
                        return Err(ConfigError::UnknownKey {
                            section: section.to_string(),
                            key: key.to_string(),
                        })
                    }
                    Some((_, owner, _)) if *owner != section => {
                        return Err(ConfigError::WrongSection {
                            key: key.to_string(),
                            expected: owner.to_string(),
                            found: section.to_string(),
                        })
                    }
                    Some(_) => {
                        file.insert(key.to_string(), value.trim().to_string());
                    }
                }
            }
        }
        Ok(ConfigSources {
            file,
            ..Default::default()
        })
    }

    /// Picks up `STRESSORLENS_<KEY>` variables from the given environment.
    pub fn with_env<I: IntoIterator<Item = (String, String)>>(mut self, vars: I) -> Self {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = rest.to_ascii_lowercase();
            if KEYS.iter().any(|(k, _, _)| *k == key) {
                self.env.insert(key, value);
            }
        }
        self
    }

    pub fn with_flags(mut self, flags: BTreeMap<String, String>) -> Self {
        self.flags.extend(flags);
        self
    }

    fn raw(&self, key: &str) -> (String, bool) {
        if let Some(v) = self.flags.get(key).or_else(|| self.env.get(key)) {
            return (v.clone(), false);
        }
        if let Some(v) = self.file.get(key) {
            return (v.clone(), true);
        }
        let default = KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, _, d)| *d).unwrap_or("");
        (default.to_string(), false)
    }

    pub fn resolve(&self) -> Result<PipelineConfig, ConfigError> {
        let mut resolved = BTreeMap::new();
        for (key, _, _) in KEYS {
            let (mut value, from_file) = self.raw(key);
            if from_file && PATH_KEYS.contains(key) && !value.is_empty() {
                if let Some(base) = &self.base_dir {
                    let p = Path::new(&value);
                    if p.is_relative() {
                        value = base.join(p).display().to_string();
                    }
                }
            }
            resolved.insert(key.to_string(), value);
        }
        PipelineConfig::from_resolved(resolved)
    }
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let value = &map[key];
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key: key.into(),
        value: value.clone(),
        message: e.to_string(),
    })
}

fn optional_path(map: &BTreeMap<String, String>, key: &str) -> Option<PathBuf> {
    Some(&map[key]).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Comma-separated list, blanks dropped.
pub fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl PipelineConfig {
    pub fn from_resolved(map: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::Invalid {
            key: key.into(),
            value: map[key].clone(),
            message,
        };
        let stopwords_path = optional_path(&map, "stopwords_path");
        let stopwords = match &stopwords_path {
            Some(p) => load_stopwords(p).map_err(|e| invalid("stopwords_path", e.to_string()))?,
            None => default_stopwords(),
        };
        let ngram_range = NgramRange::new(parse(&map, "ngram_min")?, parse(&map, "ngram_max")?)
            .map_err(|e| invalid("ngram_max", e.to_string()))?;
        let features = FeatureConfig {
            max_features: parse(&map, "max_features")?,
            ngram_range,
            min_df: parse(&map, "min_df")?,
            stopwords,
            include_tokens: split_list(&map["include"]).into_iter().collect::<IndexSet<_>>(),
            exclude_tokens: split_list(&map["exclude"]).into_iter().collect(),
        };
        features.validate().map_err(|e| invalid("include", e.to_string()))?;

        let mut lda = LdaConfig::new(parse(&map, "n_topics")?).with_seed(parse(&map, "seed")?);
        if !map["alpha"].is_empty() {
            lda.alpha = parse(&map, "alpha")?;
        }
        if !map["eta"].is_empty() {
            lda.eta = parse(&map, "eta")?;
        }
        lda.max_iters = parse(&map, "max_iters")?;
        lda.elbo_rel_tol = parse(&map, "elbo_rel_tol")?;
        lda.validate().map_err(|e| invalid("n_topics", e.to_string()))?;
        let lda_method = match map["method"].as_str() {
            "vb" => LdaMethod::Vb,
            "gibbs" => LdaMethod::Gibbs,
            other => return Err(invalid("method", format!("expected vb or gibbs, got {other:?}"))),
        };

        let classifier = ClassifierConfig {
            train: TrainConfig {
                learning_rate: parse(&map, "learning_rate")?,
                l2: parse(&map, "l2")?,
                max_epochs: parse(&map, "max_epochs")?,
                tolerance: parse(&map, "tolerance")?,
                seed: lda.seed,
            },
            lda_topics: parse(&map, "classifier_topics")?,
            tfidf_features: parse(&map, "classifier_features")?,
        };
        if classifier.lda_topics == 0 || classifier.tfidf_features == 0 {
            return Err(invalid("classifier_topics", "classifier feature widths must be positive".into()));
        }

        let mut locations = split_list(&map["locations"]);
        if locations.is_empty() {
            locations = DEFAULT_LOCATIONS.iter().map(|s| s.to_string()).collect();
        }
        let run_dir = PathBuf::from(&map["run_dir"]);
        if run_dir.as_os_str().is_empty() {
            return Err(ConfigError::Missing("run_dir"));
        }
        Ok(PipelineConfig {
            corpus_path: optional_path(&map, "corpus_path"),
            stopwords_path,
            features,
            lda,
            lda_method,
            classifier,
            lexicon_path: optional_path(&map, "lexicon_path"),
            external_csv_path: optional_path(&map, "external_csv_path"),
            locations,
            correlate_proportions: parse(&map, "correlate_proportions")?,
            run_dir,
            host: map["host"].clone(),
            port: parse(&map, "port")?,
            resolved: map,
        })
    }

    /// Defaults only, with `run_dir` set.
    pub fn with_run_dir(run_dir: &Path) -> Self {
        let mut flags = BTreeMap::new();
        flags.insert("run_dir".to_string(), run_dir.display().to_string());
        ConfigSources::default()
            .with_flags(flags)
            .resolve()
            .expect("defaults are valid")
    }

    /// Canonical `key=value` listing of the resolved configuration.
    pub fn canonical(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
