//! Interaction records, the line-oriented corpus format, vocabulary, splits
//! and a synthetic corpus generator.
//!
//! Corpus file: UTF-8, one record per line, five tab-separated fields
//! `user_id  item_id  rating  explanation  features` where the explanation is
//! space-separated words and features are comma-separated words. Lines
//! starting with `#` and blank lines are ignored.

mod split;
mod synth;
mod vocab;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use split::{split_dataset, DatasetSplit};
pub use synth::{generate_synthetic_corpus, synthesize, SynthConfig, FEATURE_POOL};
pub use vocab::{build_vocabulary, Vocabulary, BOS, EOS, PAD, UNK};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

/// One (user, item, rating, explanation, features) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub explanation: Vec<String>,
    pub features: BTreeSet<String>,
}

impl InteractionRecord {
    /// Builds a record from raw text, lowercasing and checking invariants.
    pub fn new(
        user_id: &str,
        item_id: &str,
        rating: f64,
        explanation: &str,
        features: &[&str],
    ) -> Result<Self> {
        let rec = Self {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            rating,
            explanation: split_words(explanation),
            features: features.iter().map(|f| f.trim().to_lowercase()).collect(),
        };
        rec.validate(0)?;
        Ok(rec)
    }

    pub fn validate(&self, line: usize) -> Result<()> {
        let invalid = |msg: String| Error::Validation { line, msg };
        if !(self.rating.is_finite() && (MIN_RATING..=MAX_RATING).contains(&self.rating)) {
            return Err(invalid(format!("rating {} outside [1, 5]", self.rating)));
        }
        if self.explanation.is_empty() {
            return Err(invalid("empty explanation".into()));
        }
        if self.features.is_empty() {
            return Err(invalid("empty feature set".into()));
        }
        for f in &self.features {
            if f.is_empty() {
                return Err(invalid("empty feature word".into()));
            }
            if !self.explanation.iter().any(|w| w == f) {
                return Err(invalid(format!("feature {f:?} does not occur in explanation")));
            }
        }
        Ok(())
    }

    /// Serializes to one corpus line (no trailing newline).
    pub fn to_line(&self) -> String {
        let features: Vec<&str> = self.features.iter().map(String::as_str).collect();
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.user_id,
            self.item_id,
            self.rating,
            self.explanation.join(" "),
            features.join(",")
        )
    }
}

/// Whitespace word split with case folding.
pub fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// The set of all feature words in a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureSet(BTreeSet<String>);

impl FeatureSet {
    pub fn from_records(records: &[InteractionRecord]) -> Self {
        Self(records.iter().flat_map(|r| r.features.iter().cloned()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }
}

impl FromIterator<String> for FeatureSet {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Dense index over opaque string IDs, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdIndex {
    pub fn from_ids(ids: Vec<String>) -> Self {
        let mut index = Self::default();
        for id in ids {
            index.insert(&id);
        }
        index
    }

    fn insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.lookup.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.lookup.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A loaded dataset: records in file order plus derived indices.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<InteractionRecord>,
    pub features: FeatureSet,
    pub users: IdIndex,
    pub items: IdIndex,
}

impl Corpus {
    pub fn from_records(records: Vec<InteractionRecord>) -> Self {
        let mut users = IdIndex::default();
        let mut items = IdIndex::default();
        for r in &records {
            users.insert(&r.user_id);
            items.insert(&r.item_id);
        }
        let features = FeatureSet::from_records(&records);
        Self {
            records,
            features,
            users,
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dense (user, item) indices of record `k`.
    pub fn pair(&self, k: usize) -> (usize, usize) {
        let r = &self.records[k];
        (
            self.users.get(&r.user_id).expect("indexed user"),
            self.items.get(&r.item_id).expect("indexed item"),
        )
    }

    pub fn to_text(&self) -> String {
        records_to_text(&self.records)
    }
}

pub fn records_to_text(records: &[InteractionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

/// Parses corpus text. `path` is used only for error messages.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let user_id = fields[0].trim();
        let item_id = fields[1].trim();
        if user_id.is_empty() || item_id.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad rating {:?}", fields[2])))?;
        let record = InteractionRecord {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            rating,
            explanation: split_words(fields[3]),
            features: fields[4]
                .split(',')
                .map(|f| f.trim().to_lowercase())
                .filter(|f| !f.is_empty())
                .collect(),
        };
        record.validate(line_no)?;
        records.push(record);
    }
    Ok(Corpus::from_records(records))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, path)
}
