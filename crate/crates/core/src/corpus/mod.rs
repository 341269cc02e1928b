//! Case-pair data model, dataset ingestion, fold splitting and the derived
//! per-sentence and per-sentence-pair training sets.

mod derived;
mod folds;
mod io;
mod segment;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoder::SEP_TOKEN;
use crate::error::{Error, Result};

pub use derived::{build_alignment_dataset, build_fsi_dataset, AlignExample, FsiExample};
pub use folds::{stratified_kfold, FoldSplit};
pub use io::{
    load_dataset, load_predictions, parse_dataset, parse_predictions, read_jsonl, write_jsonl,
    CaseRecord, PairRecord, PredictionRecord,
};
pub use segment::{segment_sentences, TERMINAL_PUNCTUATION};

/// Three-way similarity label of a case pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchLabel {
    NotMatch = 0,
    PartialMatch = 1,
    Match = 2,
}

impl MatchLabel {
    pub const ALL: [MatchLabel; 3] = [
        MatchLabel::NotMatch,
        MatchLabel::PartialMatch,
        MatchLabel::Match,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

impl fmt::Display for MatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MatchLabel::NotMatch => "not_match",
            MatchLabel::PartialMatch => "partial_match",
            MatchLabel::Match => "match",
        };
        f.write_str(name)
    }
}

impl Serialize for MatchLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for MatchLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = u8::deserialize(deserializer)?;
        MatchLabel::from_index(raw as usize)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0, 1 or 2, got {raw}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    /// 0-based position within the owning case.
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub sentences: Vec<Sentence>,
}

impl Case {
    /// Builds a case from raw sentence texts, numbering them 0..n-1.
    pub fn from_texts<S: Into<String>>(
        case_id: impl Into<String>,
        texts: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let case_id = case_id.into();
        let sentences = texts
            .into_iter()
            .enumerate()
            .map(|(index, text)| Sentence {
                index,
                text: text.into(),
            })
            .collect();
        let case = Case { case_id, sentences };
        case.validate(&case.case_id)?;
        Ok(case)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.text.as_str())
    }

    pub(crate) fn validate(&self, pair_id: &str) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::validation(
                pair_id,
                format!("{}.sentences", self.case_id),
                "a case needs at least one sentence",
            ));
        }
        for (position, sentence) in self.sentences.iter().enumerate() {
            if sentence.index != position {
                return Err(Error::validation(
                    pair_id,
                    format!("{}.sentences", self.case_id),
                    format!("sentence at position {position} carries index {}", sentence.index),
                ));
            }
            if sentence.text.trim().is_empty() {
                return Err(Error::validation(
                    pair_id,
                    format!("{}.sentences[{position}]", self.case_id),
                    "sentence text is empty",
                ));
            }
            if sentence.text.contains(SEP_TOKEN) {
                return Err(Error::validation(
                    pair_id,
                    format!("{}.sentences[{position}]", self.case_id),
                    "sentence contains the reserved separator U+241F",
                ));
            }
        }
        Ok(())
    }
}

/// A labeled pair of cases with gold feature sentences and gold alignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasePair {
    pub pair_id: String,
    pub case_a: Case,
    pub case_b: Case,
    pub match_label: MatchLabel,
    pub gold_features_a: BTreeSet<usize>,
    pub gold_features_b: BTreeSet<usize>,
    pub gold_aligned: BTreeSet<(usize, usize)>,
}

impl CasePair {
    pub fn validate(&self) -> Result<()> {
        let id = self.pair_id.as_str();
        self.case_a.validate(id)?;
        self.case_b.validate(id)?;
        check_in_range(id, "features_a", &self.gold_features_a, self.case_a.len())?;
        check_in_range(id, "features_b", &self.gold_features_b, self.case_b.len())?;
        for &(a, b) in &self.gold_aligned {
            if !self.gold_features_a.contains(&a) {
                return Err(Error::validation(
                    id,
                    "aligned",
                    format!("index {a} of pair ({a}, {b}) is not in features_a"),
                ));
            }
            if !self.gold_features_b.contains(&b) {
                return Err(Error::validation(
                    id,
                    "aligned",
                    format!("index {b} of pair ({a}, {b}) is not in features_b"),
                ));
            }
        }
        if self.match_label == MatchLabel::NotMatch && !self.gold_aligned.is_empty() {
            return Err(Error::validation(
                id,
                "aligned",
                "not-match pairs cannot carry aligned sentences",
            ));
        }
        Ok(())
    }
}

fn check_in_range(pair_id: &str, field: &str, indices: &BTreeSet<usize>, len: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= len) {
        Some(bad) => Err(Error::validation(
            pair_id,
            field,
            format!("index {bad} out of range for a case with {len} sentences"),
        )),
        None => Ok(()),
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn case(id: &str, n: usize) -> Case {
        Case::from_texts(id, (0..n).map(|i| format!("{id}第{i}句。"))).unwrap()
    }

    pub fn pair(
        id: &str,
        label: MatchLabel,
        n_a: usize,
        n_b: usize,
        features_a: &[usize],
        features_b: &[usize],
        aligned: &[(usize, usize)],
    ) -> CasePair {
        CasePair {
            pair_id: id.to_string(),
            case_a: case(&format!("{id}-a"), n_a),
            case_b: case(&format!("{id}-b"), n_b),
            match_label: label,
            gold_features_a: features_a.iter().copied().collect(),
            gold_features_b: features_b.iter().copied().collect(),
            gold_aligned: aligned.iter().copied().collect(),
        }
    }
}
