//! Keyword-sequence lexicons and the per-post topic annotator.
//!
//! Entries are matched on whole tokens. A multiword entry matches when its
//! tokens occur in order with at most one unrelated token between
//! neighbours, so "back normal" fires on "back to normal".

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::{tokenize, Stopwords};

const DEFAULT_LEXICON: &str = include_str!("../data/covid_stressors_lexicon.json");

/// Largest number of foreign tokens allowed between consecutive entry tokens.
pub const MAX_GAP: usize = 1;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("invalid lexicon file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("lexicon entry {entry:?} under {topic:?} has no usable tokens")]
    EmptyEntry { topic: String, entry: String },
    #[error("annotation count {annotations} does not match {posts} posts")]
    Misaligned { annotations: usize, posts: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    pub name: String,
    /// Topic label to token-sequence entries, in file order.
    pub topics: IndexMap<String, Vec<Vec<String>>>,
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    name: String,
    topics: IndexMap<String, Vec<String>>,
}

impl Lexicon {
    /// Parses the JSON form, tokenizing entries and collapsing duplicates.
    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile = serde_json::from_str(text)?;
        let none = Stopwords::new();
        let mut topics = IndexMap::new();
        for (label, entries) in file.topics {
            let mut parsed: Vec<Vec<String>> = Vec::new();
            for entry in entries {
                let tokens = tokenize(&entry, &none);
                if tokens.is_empty() {
                    return Err(LexiconError::EmptyEntry { topic: label, entry });
                }
                if !parsed.contains(&tokens) {
                    parsed.push(tokens);
                }
            }
            topics.insert(label, parsed);
        }
        Ok(Lexicon { name: file.name, topics })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Lexicon::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = LexiconFile {
            name: self.name.clone(),
            topics: self
                .topics
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|e| e.join(" ")).collect()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("lexicon serializes")
    }

    pub fn labels(&self) -> Vec<String> {
        self.topics.keys().cloned().collect()
    }
}

/// The bundled COVID-19 stressor lexicon.
pub fn default_lexicon() -> Lexicon {
    Lexicon::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
}

fn matches_from(tokens: &[String], entry: &[String], pos: usize) -> bool {
    let Some((first, rest)) = entry.split_first() else {
        return true;
    };
    if tokens.get(pos) != Some(first) {
        return false;
    }
    if rest.is_empty() {
        return true;
    }
    (pos + 1..=pos + 1 + MAX_GAP).any(|next| matches_from(tokens, rest, next))
}

pub fn entry_matches(tokens: &[String], entry: &[String]) -> bool {
    (0..tokens.len()).any(|start| matches_from(tokens, entry, start))
}

/// Labels of every topic with at least one matching entry.
pub fn match_post(text: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    let tokens = tokenize(text, &Stopwords::new());
    lexicon
        .topics
        .iter()
        .filter(|(_, entries)| entries.iter().any(|e| entry_matches(&tokens, e)))
        .map(|(label, _)| label.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconAnnotation {
    pub post_id: String,
    pub topics: BTreeSet<String>,
}

/// One annotation per `(id, text)` pair, in input order.
pub fn annotate_corpus<'a, I>(posts: I, lexicon: &Lexicon) -> Vec<LexiconAnnotation>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let posts: Vec<(&str, &str)> = posts.into_iter().collect();
    posts
        .par_iter()
        .map(|(id, text)| LexiconAnnotation {
            post_id: id.to_string(),
            topics: match_post(text, lexicon),
        })
        .collect()
}

/// Wide CSV: `post_id` then one 0/1 column per lexicon topic.
pub fn write_annotations_csv<W: Write>(
    writer: W,
    annotations: &[LexiconAnnotation],
    lexicon: &Lexicon,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let labels = lexicon.labels();
    w.write_record(std::iter::once("post_id").chain(labels.iter().map(String::as_str)))?;
    for a in annotations {
        let mut rec = vec![a.post_id.clone()];
        rec.extend(labels.iter().map(|l| if a.topics.contains(l) { "1" } else { "0" }.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_annotations_csv<R: io::Read>(reader: R) -> Result<Vec<LexiconAnnotation>, csv::Error> {
    let mut r = csv::Reader::from_reader(reader);
    let labels: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let topics = labels
            .iter()
            .zip(rec.iter().skip(1))
            .filter(|(_, v)| *v == "1")
            .map(|(l, _)| l.clone())
            .collect();
        out.push(LexiconAnnotation {
            post_id: rec[0].to_string(),
            topics,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(labels: &[&str]) -> BTreeSet<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn default_lexicon_shape() {
        let lex = default_lexicon();
        assert_eq!(lex.topics.len(), 5);
        assert!(lex.topics["Fear of coronavirus"].contains(&vec!["no".to_string(), "mask".to_string()]));
        assert!(lex.topics["Pandemic Development"].contains(&vec!["back".to_string(), "normal".to_string()]));
        assert!(lex.topics["Fear of coronavirus"].contains(&vec!["ocd".to_string()]));
        // 'friendless' is listed twice in the source table
        assert_eq!(lex.topics["Lonely"].len(), 13);
    }

    #[test]
    fn match_examples() {
        let lex = default_lexicon();
        assert_eq!(match_post("people maskless at the grocery store", &lex), set(&["Fear of coronavirus"]));
        assert_eq!(match_post("will we ever get back to normal", &lex), set(&["Pandemic Development"]));
        assert!(match_post("", &lex).is_empty());
    }

    #[test]
    fn whole_word_only() {
        let lex = default_lexicon();
        assert!(match_post("the classroom was quiet", &lex).is_empty());
        assert_eq!(match_post("my class moved online", &lex), set(&["Education Problems"]));
    }

    #[test]
    fn gap_limit() {
        let lex = default_lexicon();
        assert!(match_post("is it ever going to end", &lex).is_empty());
        assert_eq!(match_post("will it ever end", &lex), set(&["Pandemic Development"]));
        assert_eq!(match_post("will it ever really end", &lex), set(&["Pandemic Development"]));
    }

    #[test]
    fn multi_topic_post() {
        let lex = default_lexicon();
        assert_eq!(
            match_post("college is online and I am so lonely", &lex),
            set(&["Education Problems", "Lonely"])
        );
    }

    #[test]
    fn annotate_preserves_order() {
        let lex = default_lexicon();
        let posts = [("a", "nothing here"), ("b", "I lost my job"), ("c", "lost job again")];
        let ann = annotate_corpus(posts.iter().copied(), &lex);
        assert_eq!(ann.len(), 3);
        assert_eq!(ann[0].post_id, "a");
        assert!(ann[0].topics.is_empty());
        assert_eq!(ann[1].topics, set(&["Occupation Problems"]));
        assert_eq!(ann[2].topics, set(&["Occupation Problems"]));
    }

    #[test]
    fn csv_round_trip() {
        let lex = default_lexicon();
        let ann = annotate_corpus([("p1", "panic at college"), ("p2", "fine")], &lex);
        let mut buf = Vec::new();
        write_annotations_csv(&mut buf, &ann, &lex).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "post_id,Education Problems,Occupation Problems,Lonely,Fear of coronavirus,Pandemic Development"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "p1,1,0,0,1,0");
        assert_eq!(read_annotations_csv(&buf[..]).unwrap(), ann);
    }

    #[test]
    fn json_round_trip_and_errors() {
        let lex = default_lexicon();
        assert_eq!(Lexicon::from_json(&lex.to_json()).unwrap(), lex);
        assert!(Lexicon::from_json(r#"{"name":"x","topics":{"t":["!!"]}}"#).is_err());
        assert!(Lexicon::from_json("not json").is_err());
    }

    proptest! {
        #[test]
        fn appending_never_removes(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
            let lex = default_lexicon();
            let base = match_post(&a, &lex);
            let longer = match_post(&format!("{a} {b}"), &lex);
            prop_assert!(base.is_subset(&longer));
        }

        #[test]
        fn case_invariant(a in "[a-zA-Z ]{0,60}") {
            let lex = default_lexicon();
            prop_assert_eq!(match_post(&a, &lex), match_post(&a.to_uppercase(), &lex));
        }
    }
}
