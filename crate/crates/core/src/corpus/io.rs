use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Case, CasePair, MatchLabel, Sentence};
use crate::error::{Error, Result};

/// One case as stored on disk: an id and its sentences in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub case_id: String,
    pub sentences: Vec<String>,
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair_id: String,
    pub case_a: CaseRecord,
    pub case_b: CaseRecord,
    pub label: MatchLabel,
    pub features_a: Vec<usize>,
    pub features_b: Vec<usize>,
    pub aligned: Vec<[usize; 2]>,
}

/// One prediction line: the dataset shape without gold fields, plus the
/// predicted fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub case_a: CaseRecord,
    pub case_b: CaseRecord,
    pub pred_label: MatchLabel,
    pub pred_features_a: Vec<usize>,
    pub pred_features_b: Vec<usize>,
    pub pred_aligned: Vec<[usize; 2]>,
    #[serde(default)]
    pub conflict_resolved: bool,
}

impl PredictionRecord {
    /// A prediction that reproduces the gold annotation exactly.
    pub fn from_gold(pair: &CasePair) -> Self {
        let record = PairRecord::from(pair);
        PredictionRecord {
            pair_id: record.pair_id,
            case_a: record.case_a,
            case_b: record.case_b,
            pred_label: record.label,
            pred_features_a: record.features_a,
            pred_features_b: record.features_b,
            pred_aligned: record.aligned,
            conflict_resolved: false,
        }
    }

    pub fn features_a(&self) -> BTreeSet<usize> {
        self.pred_features_a.iter().copied().collect()
    }

    pub fn features_b(&self) -> BTreeSet<usize> {
        self.pred_features_b.iter().copied().collect()
    }

    pub fn aligned(&self) -> BTreeSet<(usize, usize)> {
        self.pred_aligned.iter().map(|&[a, b]| (a, b)).collect()
    }
}

impl From<&Case> for CaseRecord {
    fn from(case: &Case) -> Self {
        CaseRecord {
            case_id: case.case_id.clone(),
            sentences: case.sentences.iter().map(|s| s.text.clone()).collect(),
        }
    }
}

impl From<&CasePair> for PairRecord {
    fn from(pair: &CasePair) -> Self {
        PairRecord {
            pair_id: pair.pair_id.clone(),
            case_a: (&pair.case_a).into(),
            case_b: (&pair.case_b).into(),
            label: pair.match_label,
            features_a: pair.gold_features_a.iter().copied().collect(),
            features_b: pair.gold_features_b.iter().copied().collect(),
            aligned: pair.gold_aligned.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

impl CaseRecord {
    fn into_case(self) -> Case {
        Case {
            case_id: self.case_id,
            sentences: self
                .sentences
                .into_iter()
                .enumerate()
                .map(|(index, text)| Sentence { index, text })
                .collect(),
        }
    }
}

fn unique_set<T: Ord + Copy>(pair_id: &str, field: &str, items: &[T]) -> Result<BTreeSet<T>> {
    let set: BTreeSet<T> = items.iter().copied().collect();
    if set.len() != items.len() {
        return Err(Error::validation(pair_id, field, "duplicate entries"));
    }
    Ok(set)
}

impl TryFrom<PairRecord> for CasePair {
    type Error = Error;

    fn try_from(record: PairRecord) -> Result<Self> {
        let id = record.pair_id.clone();
        let aligned: Vec<(usize, usize)> = record.aligned.iter().map(|&[a, b]| (a, b)).collect();
        let pair = CasePair {
            gold_features_a: unique_set(&id, "features_a", &record.features_a)?,
            gold_features_b: unique_set(&id, "features_b", &record.features_b)?,
            gold_aligned: unique_set(&id, "aligned", &aligned)?,
            pair_id: record.pair_id,
            case_a: record.case_a.into_case(),
            case_b: record.case_b.into_case(),
            match_label: record.label,
        };
        pair.validate()?;
        Ok(pair)
    }
}

/// Parses JSONL text into records; blank lines are skipped and every
/// failure names its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<(usize, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map(|value| (i + 1, value))
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buffer = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buffer, item)?;
        buffer.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buffer).map_err(|e| Error::io(path, e))
}

pub fn parse_dataset(text: &str) -> Result<Vec<CasePair>> {
    let records: Vec<(usize, PairRecord)> = read_jsonl(text)?;
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(records.len());
    for (_, record) in records {
        if !seen.insert(record.pair_id.clone()) {
            return Err(Error::validation(&record.pair_id, "pair_id", "duplicate pair id"));
        }
        pairs.push(CasePair::try_from(record)?);
    }
    Ok(pairs)
}

pub fn load_dataset(path: &Path) -> Result<Vec<CasePair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    Ok(read_jsonl(text)?.into_iter().map(|(_, record)| record).collect())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}
