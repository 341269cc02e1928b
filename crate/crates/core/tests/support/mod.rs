//! Shared helpers for integration tests: brute-force metric reimplementations,
//! random metric instances and a token-overlap heuristic for the synthetic
//! corpus.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use casematch_core::corpus::{CasePair, CaseRecord, MatchLabel, PredictionRecord};
use rand::Rng;

// Brute-force metrics. Written from the definitions with plain loops and
// vectors; nothing here calls the library's metric code.

pub fn brute_set_f1(pred: &[usize], gold: &[usize]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut hit = 0usize;
    for p in pred {
        if gold.contains(p) {
            hit += 1;
        }
    }
    let precision = if pred.is_empty() { 0.0 } else { hit as f64 / pred.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { hit as f64 / gold.len() as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn brute_macro_f1(pred: &[u8], gold: &[u8]) -> f64 {
    let mut total = 0.0;
    for class in 0u8..3 {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for i in 0..gold.len() {
            match (pred[i] == class, gold[i] == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        total += if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    }
    total / 3.0
}

/// Pairs flattened to integer codes so the same routine serves cases and
/// aligned pairs.
fn code(a: usize, b: usize) -> usize {
    a * 1000 + b
}

/// Mean of set F1 over both cases of every pair.
pub fn brute_fsi(pred: &[PredictionRecord], gold: &[CasePair]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for g in gold {
        let p = pred.iter().find(|p| p.pair_id == g.pair_id).expect("prediction present");
        let ga: Vec<usize> = g.gold_features_a.iter().copied().collect();
        let gb: Vec<usize> = g.gold_features_b.iter().copied().collect();
        sum += brute_set_f1(&dedup(&p.pred_features_a), &ga);
        sum += brute_set_f1(&dedup(&p.pred_features_b), &gb);
        n += 2;
    }
    sum / n as f64
}

/// Mean of aligned-pair set F1 over gold match / partial-match pairs.
pub fn brute_fsa(pred: &[PredictionRecord], gold: &[CasePair]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for g in gold {
        if g.match_label == MatchLabel::NotMatch {
            continue;
        }
        let p = pred.iter().find(|p| p.pair_id == g.pair_id).expect("prediction present");
        let pa: Vec<usize> = dedup(&p.pred_aligned.iter().map(|&[a, b]| code(a, b)).collect::<Vec<_>>());
        let ga: Vec<usize> = g.gold_aligned.iter().map(|&(a, b)| code(a, b)).collect();
        sum += brute_set_f1(&pa, &ga);
        n += 1;
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

fn dedup(xs: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

// Random metric instances.

fn random_subset(rng: &mut impl Rng, n: usize) -> BTreeSet<usize> {
    (0..n).filter(|_| rng.gen_bool(0.4)).collect()
}

fn random_label(rng: &mut impl Rng) -> MatchLabel {
    MatchLabel::from_index(rng.gen_range(0..3)).unwrap()
}

fn text_case(id: &str, n: usize) -> casematch_core::corpus::Case {
    casematch_core::corpus::Case::from_texts(id, (0..n).map(|i| format!("第{i}句。"))).unwrap()
}

/// A random gold corpus with at most `max_pairs` pairs (so at most
/// `2 * max_pairs` cases) and at most `max_sentences` sentences per case,
/// plus a random prediction for each pair.
pub fn random_instance(
    rng: &mut impl Rng,
    max_pairs: usize,
    max_sentences: usize,
) -> (Vec<PredictionRecord>, Vec<CasePair>) {
    let n_pairs = rng.gen_range(1..=max_pairs);
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n_pairs {
        let pair_id = format!("r{i}");
        let n_a = rng.gen_range(1..=max_sentences);
        let n_b = rng.gen_range(1..=max_sentences);
        let label = random_label(rng);
        let fa = random_subset(rng, n_a);
        let fb = random_subset(rng, n_b);
        let aligned: BTreeSet<(usize, usize)> = if label == MatchLabel::NotMatch {
            BTreeSet::new()
        } else {
            fa.iter()
                .flat_map(|&a| fb.iter().map(move |&b| (a, b)))
                .filter(|_| rng.gen_bool(0.3))
                .collect()
        };
        let gold = CasePair {
            pair_id: pair_id.clone(),
            case_a: text_case(&format!("{pair_id}a"), n_a),
            case_b: text_case(&format!("{pair_id}b"), n_b),
            match_label: label,
            gold_features_a: fa,
            gold_features_b: fb,
            gold_aligned: aligned,
        };
        gold.validate().unwrap();
        let pa = random_subset(rng, n_a);
        let pb = random_subset(rng, n_b);
        let pred_aligned: Vec<[usize; 2]> = pa
            .iter()
            .flat_map(|&a| pb.iter().map(move |&b| [a, b]))
            .filter(|_| rng.gen_bool(0.3))
            .collect();
        preds.push(PredictionRecord {
            pair_id,
            case_a: CaseRecord::from(&gold.case_a),
            case_b: CaseRecord::from(&gold.case_b),
            pred_label: random_label(rng),
            pred_features_a: pa.into_iter().collect(),
            pred_features_b: pb.into_iter().collect(),
            pred_aligned,
            conflict_resolved: false,
        });
        golds.push(gold);
    }
    (preds, golds)
}

// Token-overlap heuristic for the synthetic corpus.

fn bigrams(text: &str) -> HashSet<(char, char)> {
    let chars: Vec<char> = text.chars().collect();
    chars.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Character-bigram heuristic fitted on training pairs.
///
/// A sentence is a feature sentence when it contains a bigram seen only in
/// training feature sentences. Two feature sentences align when their
/// shared indicative bigrams carry enough inverse document frequency, with
/// the cut-off chosen on training data. A pair matches when every selected
/// sentence on both sides aligns, partially when some do, and not at all
/// when none do.
pub struct OverlapOracle {
    indicative: HashSet<(char, char)>,
    idf: HashMap<(char, char), f64>,
    threshold: f64,
}

impl OverlapOracle {
    pub fn fit(train: &[CasePair]) -> Self {
        let mut feature = HashSet::new();
        let mut background = HashSet::new();
        let mut df: HashMap<(char, char), usize> = HashMap::new();
        let mut n_feature_sentences = 0usize;
        for p in train {
            for (case, feats) in [(&p.case_a, &p.gold_features_a), (&p.case_b, &p.gold_features_b)] {
                for s in &case.sentences {
                    let grams = bigrams(&s.text);
                    if feats.contains(&s.index) {
                        n_feature_sentences += 1;
                        for g in &grams {
                            *df.entry(*g).or_default() += 1;
                        }
                        feature.extend(grams);
                    } else {
                        background.extend(grams);
                    }
                }
            }
        }
        let indicative: HashSet<_> = feature.difference(&background).copied().collect();
        let idf = df
            .into_iter()
            .map(|(g, d)| (g, (n_feature_sentences as f64 / d as f64).ln()))
            .collect();
        let mut oracle = OverlapOracle { indicative, idf, threshold: 0.0 };

        let mut scored = Vec::new();
        for p in train {
            for &a in &p.gold_features_a {
                for &b in &p.gold_features_b {
                    let s = oracle.score(&p.case_a.sentences[a].text, &p.case_b.sentences[b].text);
                    scored.push((s, p.gold_aligned.contains(&(a, b))));
                }
            }
        }
        oracle.threshold = best_threshold(&scored);
        oracle
    }

    pub fn score(&self, a: &str, b: &str) -> f64 {
        let gb = bigrams(b);
        bigrams(a)
            .intersection(&gb)
            .filter(|g| self.indicative.contains(g))
            .map(|g| self.idf.get(g).copied().unwrap_or(0.0))
            .sum()
    }

    pub fn select(&self, case: &casematch_core::corpus::Case) -> BTreeSet<usize> {
        case.sentences
            .iter()
            .filter(|s| bigrams(&s.text).iter().any(|g| self.indicative.contains(g)))
            .map(|s| s.index)
            .collect()
    }

    pub fn predict(&self, p: &CasePair) -> PredictionRecord {
        let fa = self.select(&p.case_a);
        let fb = self.select(&p.case_b);
        let mut aligned = BTreeSet::new();
        for &a in &fa {
            for &b in &fb {
                if self.score(&p.case_a.sentences[a].text, &p.case_b.sentences[b].text) > self.threshold {
                    aligned.insert((a, b));
                }
            }
        }
        let covered_a: BTreeSet<usize> = aligned.iter().map(|&(a, _)| a).collect();
        let covered_b: BTreeSet<usize> = aligned.iter().map(|&(_, b)| b).collect();
        let label = if aligned.is_empty() {
            MatchLabel::NotMatch
        } else if covered_a == fa && covered_b == fb {
            MatchLabel::Match
        } else {
            MatchLabel::PartialMatch
        };
        PredictionRecord {
            pair_id: p.pair_id.clone(),
            case_a: CaseRecord::from(&p.case_a),
            case_b: CaseRecord::from(&p.case_b),
            pred_label: label,
            pred_features_a: fa.into_iter().collect(),
            pred_features_b: fb.into_iter().collect(),
            pred_aligned: aligned.into_iter().map(|(a, b)| [a, b]).collect(),
            conflict_resolved: false,
        }
    }
}

/// Cut-off maximising accuracy on `(score, positive)` pairs; midway
/// between neighbouring scores.
fn best_threshold(scored: &[(f64, bool)]) -> f64 {
    let mut values: Vec<f64> = scored.iter().map(|s| s.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut best = (usize::MAX, 0.0);
    let mut candidates = vec![values[0] - 1.0];
    candidates.extend(values.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    for t in candidates {
        let errors = scored.iter().filter(|(s, pos)| (*s > t) != *pos).count();
        if errors < best.0 {
            best = (errors, t);
        }
    }
    best.1
}

/// Pairs by id.
pub fn by_id(pairs: &[CasePair]) -> BTreeMap<&str, &CasePair> {
    pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect()
}
