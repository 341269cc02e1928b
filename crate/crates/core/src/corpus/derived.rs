use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Case, CasePair, Sentence};
use crate::error::{Error, Result};

/// One sentence labelled as feature (1) or non-feature (0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsiExample {
    pub case_id: String,
    pub sentence: Sentence,
    pub label: u8,
}

/// One cross-case pair of gold feature sentences labelled aligned (1) or not (0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignExample {
    pub pair_id: String,
    pub sentence_a: Sentence,
    pub sentence_b: Sentence,
    pub label: u8,
}

/// Splits every distinct case into labelled sentences. Cases are keyed by
/// `case_id`; a case seen again must carry the same sentences and the same
/// gold feature set.
pub fn build_fsi_dataset(pairs: &[CasePair]) -> Result<Vec<FsiExample>> {
    let mut seen: BTreeMap<&str, (&Case, &BTreeSet<usize>, &str)> = BTreeMap::new();
    let mut ordered = Vec::new();
    for pair in pairs {
        for (case, features) in [
            (&pair.case_a, &pair.gold_features_a),
            (&pair.case_b, &pair.gold_features_b),
        ] {
            match seen.entry(case.case_id.as_str()) {
                Entry::Vacant(slot) => {
                    slot.insert((case, features, pair.pair_id.as_str()));
                    ordered.push((case, features));
                }
                Entry::Occupied(slot) => {
                    let (first_case, first_features, first_pair) = *slot.get();
                    if first_case.sentences != case.sentences {
                        return Err(Error::validation(
                            &pair.pair_id,
                            format!("{}.sentences", case.case_id),
                            format!("case differs from its earlier occurrence in pair `{first_pair}`"),
                        ));
                    }
                    if first_features != features {
                        return Err(Error::validation(
                            &pair.pair_id,
                            format!("{}.features", case.case_id),
                            format!("gold features differ from pair `{first_pair}`"),
                        ));
                    }
                }
            }
        }
    }

    Ok(ordered
        .into_iter()
        .flat_map(|(case, features)| {
            case.sentences.iter().map(move |sentence| FsiExample {
                case_id: case.case_id.clone(),
                sentence: sentence.clone(),
                label: u8::from(features.contains(&sentence.index)),
            })
        })
        .collect())
}

/// Cross product of gold feature sentences per pair; positives are the gold
/// aligned pairs. Not-match pairs contribute all-negative blocks.
pub fn build_alignment_dataset(pairs: &[CasePair]) -> Vec<AlignExample> {
    let mut out = Vec::new();
    for pair in pairs {
        for &a in &pair.gold_features_a {
            for &b in &pair.gold_features_b {
                out.push(AlignExample {
                    pair_id: pair.pair_id.clone(),
                    sentence_a: pair.case_a.sentences[a].clone(),
                    sentence_b: pair.case_b.sentences[b].clone(),
                    label: u8::from(pair.gold_aligned.contains(&(a, b))),
                });
            }
        }
    }
    out
}
