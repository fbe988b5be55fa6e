//! Post ingestion, cleaning and the flair taxonomy.
//!
//! Input is a JSON-lines export in the Pushshift submission shape. Each line
//! is parsed independently so a truncated or malformed record costs one post,
//! not the file.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Unreadable { path: String, source: io::Error },
    #[error("invalid month key {0:?}, expected YYYY-MM")]
    BadMonth(String),
    #[error("malformed clean-corpus record on line {line}: {message}")]
    BadCleanRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One submission as exported by the collection API.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub created_utc: i64,
    pub title: String,
    #[serde(rename = "selftext", default)]
    pub body: String,
    #[serde(rename = "link_flair_text", default)]
    pub flair: Option<String>,
    #[serde(default)]
    pub permalink: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadWarnings {
    pub malformed: usize,
    pub duplicates: usize,
}

impl LoadWarnings {
    pub fn total(&self) -> usize {
        self.malformed + self.duplicates
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub posts: Vec<RawPost>,
    pub warnings: LoadWarnings,
}

/// Reads a JSON-lines export. Blank lines are ignored; lines that fail to
/// parse, or carry an empty id or non-positive timestamp, are counted as
/// malformed. Later records repeating an earlier id are dropped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<LoadedCorpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(BufReader::new(file)).map_err(|source| CorpusError::Unreadable {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_corpus<R: BufRead>(reader: R) -> io::Result<LoadedCorpus> {
    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    let mut warnings = LoadWarnings::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawPost>(&line) {
            Ok(post) if !post.id.is_empty() && post.created_utc > 0 => {
                if seen.insert(post.id.clone()) {
                    posts.push(post);
                } else {
                    warnings.duplicates += 1;
                }
            }
            _ => warnings.malformed += 1,
        }
    }
    Ok(LoadedCorpus { posts, warnings })
}

/// Coarse flair categories used as classifier classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlairGroup {
    MentalHealthSupport,
    DiscussionQuestions,
    NewsResources,
    Experience,
    Other,
    Unlabelled,
}

impl FlairGroup {
    pub const ALL: [FlairGroup; 6] = [
        FlairGroup::MentalHealthSupport,
        FlairGroup::DiscussionQuestions,
        FlairGroup::NewsResources,
        FlairGroup::Experience,
        FlairGroup::Other,
        FlairGroup::Unlabelled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FlairGroup::MentalHealthSupport => "MentalHealthSupport",
            FlairGroup::DiscussionQuestions => "DiscussionQuestions",
            FlairGroup::NewsResources => "NewsResources",
            FlairGroup::Experience => "Experience",
            FlairGroup::Other => "Other",
            FlairGroup::Unlabelled => "Unlabelled",
        }
    }
}

impl fmt::Display for FlairGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const FLAIR_TABLE: &[(&str, FlairGroup)] = &[
    ("support", FlairGroup::MentalHealthSupport),
    ("trigger warning", FlairGroup::MentalHealthSupport),
    ("questions", FlairGroup::DiscussionQuestions),
    ("discussion", FlairGroup::DiscussionQuestions),
    ("vaccines are safe", FlairGroup::DiscussionQuestions),
    ("good news", FlairGroup::NewsResources),
    ("resources", FlairGroup::NewsResources),
    ("news", FlairGroup::NewsResources),
    ("firsthand account", FlairGroup::Experience),
    ("biosafety request", FlairGroup::Experience),
    ("the answer is no", FlairGroup::Other),
    ("misinformation-debunked", FlairGroup::Other),
    ("desperate mod", FlairGroup::Other),
];

/// Maps a raw flair string onto its group. Matching ignores case and
/// collapses runs of whitespace; anything unrecognised is `Unlabelled`.
pub fn map_flair(flair: Option<&str>) -> FlairGroup {
    let Some(flair) = flair else {
        return FlairGroup::Unlabelled;
    };
    let normalized = flair
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    FLAIR_TABLE
        .iter()
        .find(|(name, _)| *name == normalized)
        .map(|(_, group)| *group)
        .unwrap_or(FlairGroup::Unlabelled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlairSource {
    Labelled,
    Predicted,
    Unlabelled,
}

/// Calendar month in UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self, CorpusError> {
        if (1..=12).contains(&month) {
            Ok(Month { year, month })
        } else {
            Err(CorpusError::BadMonth(format!("{year}-{month}")))
        }
    }

    pub fn of<Tz: TimeZone>(ts: &DateTime<Tz>) -> Self {
        let utc = ts.with_timezone(&Utc);
        Month {
            year: utc.year(),
            month: utc.month(),
        }
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Month {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Month {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Every month from `first` to `last`, inclusive.
    pub fn range_inclusive(first: Month, last: Month) -> Vec<Month> {
        let mut out = Vec::new();
        let mut m = first;
        while m <= last {
            out.push(m);
            m = m.succ();
        }
        out
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::BadMonth(s.to_string());
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        Month::new(year, month).map_err(|_| bad())
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanPost {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub month: Month,
    pub text: String,
    pub flair_group: FlairGroup,
    pub flair_source: FlairSource,
}

impl CleanPost {
    pub fn is_modeling_post(&self) -> bool {
        self.flair_group != FlairGroup::Other
    }
}

fn is_tombstone(s: &str) -> bool {
    matches!(s.trim(), "[removed]" | "[deleted]")
}

fn clean_one(post: &RawPost) -> Option<CleanPost> {
    if is_tombstone(&post.title) || is_tombstone(&post.body) {
        return None;
    }
    let text = format!("{} {}", post.title, post.body).trim().to_string();
    if text.is_empty() {
        return None;
    }
    let timestamp = Utc.timestamp_opt(post.created_utc, 0).single()?;
    let flair_group = map_flair(post.flair.as_deref());
    let flair_source = if flair_group == FlairGroup::Unlabelled {
        FlairSource::Unlabelled
    } else {
        FlairSource::Labelled
    };
    Some(CleanPost {
        id: post.id.clone(),
        month: Month::of(&timestamp),
        timestamp,
        text,
        flair_group,
        flair_source,
    })
}

/// Drops removed/deleted and empty posts and assigns flair groups.
pub fn clean(posts: &[RawPost]) -> Vec<CleanPost> {
    posts.iter().filter_map(clean_one).collect()
}

/// Posts that take part in modeling: everything except the `Other` group.
pub fn modeling_posts(posts: &[CleanPost]) -> Vec<CleanPost> {
    posts.iter().filter(|p| p.is_modeling_post()).cloned().collect()
}

/// Number of posts per flair group, in [`FlairGroup::ALL`] order.
pub fn group_counts(posts: &[CleanPost]) -> Vec<(FlairGroup, usize)> {
    FlairGroup::ALL
        .iter()
        .map(|g| (*g, posts.iter().filter(|p| p.flair_group == *g).count()))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CleanRecord {
    id: String,
    timestamp: String,
    month: Month,
    text: String,
    flair_group: FlairGroup,
    flair_source: FlairSource,
}

pub fn write_clean_jsonl<W: Write>(mut writer: W, posts: &[CleanPost]) -> io::Result<()> {
    for post in posts {
        let record = CleanRecord {
            id: post.id.clone(),
            timestamp: post
                .timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            month: post.month,
            text: post.text.clone(),
            flair_group: post.flair_group,
            flair_source: post.flair_source,
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_clean_jsonl<R: BufRead>(reader: R) -> Result<Vec<CleanPost>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::BadCleanRecord {
            line: i + 1,
            message,
        };
        let record: CleanRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let timestamp = DateTime::parse_from_rfc3339(&record.timestamp)
            .map_err(|e| bad(e.to_string()))?
            .with_timezone(&Utc);
        out.push(CleanPost {
            id: record.id,
            timestamp,
            month: record.month,
            text: record.text,
            flair_group: record.flair_group,
            flair_source: record.flair_source,
        });
    }
    Ok(out)
}
