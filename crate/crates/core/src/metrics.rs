//! Evaluation: matching macro-F1, per-case feature sentence score, per-pair
//! alignment score, the combined final score and fold aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{CasePair, MatchLabel, PredictionRecord};
use crate::error::{Error, Result};

/// Tolerance for the two equivalent final-score formulas.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Set precision/recall/F1. An empty prediction has precision 0, an empty
/// gold set recall 0, and two empty sets score F1 = 1.
pub fn set_f1<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> SetScore {
    if predicted.is_empty() && gold.is_empty() {
        return SetScore { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let hit = predicted.intersection(gold).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { hit / predicted.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
    SetScore { precision, recall, f1: f1_of(precision, recall) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingScore {
    pub f_sm: f64,
    pub per_class_f1: [f64; 3],
    /// `counts[gold][predicted]`.
    pub counts: [[usize; 3]; 3],
}

/// Macro-F1 over the three labels. A class absent from both sides scores 0.
pub fn macro_f1_matching(predicted: &[MatchLabel], gold: &[MatchLabel]) -> Result<MatchingScore> {
    if predicted.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predicted labels for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    let mut counts = [[0usize; 3]; 3];
    for (p, g) in predicted.iter().zip(gold) {
        counts[g.index()][p.index()] += 1;
    }
    let mut per_class_f1 = [0.0; 3];
    for (c, f) in per_class_f1.iter_mut().enumerate() {
        let tp = counts[c][c] as f64;
        let n_pred: usize = (0..3).map(|g| counts[g][c]).sum();
        let n_gold: usize = counts[c].iter().sum();
        let precision = if n_pred == 0 { 0.0 } else { tp / n_pred as f64 };
        let recall = if n_gold == 0 { 0.0 } else { tp / n_gold as f64 };
        *f = f1_of(precision, recall);
    }
    let f_sm = per_class_f1.iter().sum::<f64>() / 3.0;
    Ok(MatchingScore { f_sm, per_class_f1, counts })
}

fn check_keys<A, B>(predicted: &BTreeMap<String, A>, gold: &BTreeMap<String, B>) -> Result<()> {
    let missing: Vec<&str> = gold.keys().filter(|k| !predicted.contains_key(*k)).map(String::as_str).collect();
    let extra: Vec<&str> = predicted.keys().filter(|k| !gold.contains_key(*k)).map(String::as_str).collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    Err(Error::Contract(format!(
        "prediction/gold id mismatch; missing predictions: [{}]; unknown predictions: [{}]",
        missing.join(", "),
        extra.join(", ")
    )))
}

/// Mean set F1 over case instances, keyed by instance id.
pub fn fsi_score(
    predicted: &BTreeMap<String, BTreeSet<usize>>,
    gold: &BTreeMap<String, BTreeSet<usize>>,
) -> Result<f64> {
    check_keys(predicted, gold)?;
    if gold.is_empty() {
        return Err(Error::Contract("feature sentence score needs at least one case".into()));
    }
    let total: f64 = gold.iter().map(|(id, g)| set_f1(&predicted[id], g).f1).sum();
    Ok(total / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsaOutcome {
    pub score: f64,
    /// Pairs with a gold match or partial-match label.
    pub eligible: usize,
}

pub type AlignedSet = BTreeSet<(usize, usize)>;

/// Mean set F1 of aligned pairs over pairs whose gold label is match or
/// partial match. With no such pair the score is 1.
pub fn fsa_score(
    predicted: &BTreeMap<String, AlignedSet>,
    gold: &BTreeMap<String, (MatchLabel, AlignedSet)>,
) -> Result<FsaOutcome> {
    check_keys(predicted, gold)?;
    let mut total = 0.0;
    let mut eligible = 0;
    for (id, (label, g)) in gold {
        if *label == MatchLabel::NotMatch {
            continue;
        }
        total += set_f1(&predicted[id], g).f1;
        eligible += 1;
    }
    if eligible == 0 {
        log::warn!("no gold match or partial-match pairs; alignment score defaults to 1");
        return Ok(FsaOutcome { score: 1.0, eligible });
    }
    Ok(FsaOutcome { score: total / eligible as f64, eligible })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalScore {
    pub interpretation_score: f64,
    pub f_final: f64,
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Contract(format!("{name} = {x} outside [0, 1]")));
    }
    Ok(())
}

/// Half the matching score plus a quarter of each interpretation score,
/// cross-checked against the mean of matching and interpretation scores.
pub fn final_score(f_sm: f64, f_fsi: f64, f_fsa: f64) -> Result<FinalScore> {
    check_unit("f_sm", f_sm)?;
    check_unit("f_fsi", f_fsi)?;
    check_unit("f_fsa", f_fsa)?;
    let weighted = 0.5 * f_sm + 0.25 * (f_fsi + f_fsa);
    let interpretation_score = (f_fsi + f_fsa) / 2.0;
    let mean = (f_sm + interpretation_score) / 2.0;
    if (weighted - mean).abs() > IDENTITY_TOLERANCE {
        return Err(Error::Contract(format!("final score forms disagree: {weighted} vs {mean}")));
    }
    Ok(FinalScore { interpretation_score, f_final: weighted })
}

/// Final score from a matching score and an interpretation score directly.
pub fn final_from_interpretation(f_sm: f64, interpretation_score: f64) -> Result<f64> {
    check_unit("f_sm", f_sm)?;
    check_unit("interpretation_score", interpretation_score)?;
    Ok((f_sm + interpretation_score) / 2.0)
}

/// How fold reports are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Unweighted mean of per-fold metrics.
    #[default]
    Mean,
    /// All folds' predictions scored as one set.
    Pooled,
}

/// Conventions in force, recorded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub empty_prediction_precision: f64,
    pub empty_gold_recall: f64,
    pub both_empty_f1: f64,
    pub absent_class_f1: f64,
    pub fsi_instance: String,
    pub fsa_eligibility: String,
    pub fsa_no_eligible_pairs: f64,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            empty_prediction_precision: 0.0,
            empty_gold_recall: 0.0,
            both_empty_f1: 1.0,
            absent_class_f1: 0.0,
            fsi_instance: "case (two per pair)".into(),
            fsa_eligibility: "gold label match or partial_match".into(),
            fsa_no_eligible_pairs: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub f_sm: f64,
    pub f_fsi: f64,
    pub f_fsa: f64,
    pub interpretation_score: f64,
    pub f_final: f64,
    pub per_class_f1: [f64; 3],
    /// `counts[gold][predicted]`, summed over folds in an aggregate.
    pub counts: [[usize; 3]; 3],
    pub n_pairs: usize,
    pub n_alignment_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_fold: Vec<EvaluationReport>,
    pub conventions: Conventions,
}

impl EvaluationReport {
    /// Checks the range and final-score identities.
    pub fn check(&self) -> Result<()> {
        for (name, x) in [
            ("f_sm", self.f_sm),
            ("f_fsi", self.f_fsi),
            ("f_fsa", self.f_fsa),
            ("interpretation_score", self.interpretation_score),
            ("f_final", self.f_final),
        ] {
            check_unit(name, x)?;
        }
        let weighted = 0.5 * self.f_sm + 0.25 * (self.f_fsi + self.f_fsa);
        let mean = (self.f_sm + self.interpretation_score) / 2.0;
        if (self.f_final - weighted).abs() > IDENTITY_TOLERANCE || (self.f_final - mean).abs() > IDENTITY_TOLERANCE {
            return Err(Error::Contract(format!(
                "report f_final {} inconsistent with components ({weighted}, {mean})",
                self.f_final
            )));
        }
        Ok(())
    }

    /// Plain-text table: scores ×100 with two decimals.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>15} {:>9} {:>9} {:>9}",
            "scope", "matching", "interpretation", "final", "f_fsi", "f_fsa"
        );
        let mut row = |scope: String, r: &EvaluationReport| {
            let _ = writeln!(
                out,
                "{:<10} {:>9.2} {:>15.2} {:>9.2} {:>9.2} {:>9.2}",
                scope,
                100.0 * r.f_sm,
                100.0 * r.interpretation_score,
                100.0 * r.f_final,
                100.0 * r.f_fsi,
                100.0 * r.f_fsa
            );
        };
        for fold in &self.per_fold {
            row(format!("fold {}", fold.fold_id.map_or("-".into(), |f| f.to_string())), fold);
        }
        let scope = match (self.aggregation, self.fold_id) {
            (Some(Aggregation::Mean), _) => "mean".to_string(),
            (Some(Aggregation::Pooled), _) => "pooled".to_string(),
            (None, Some(f)) => format!("fold {f}"),
            (None, None) => "all".to_string(),
        };
        row(scope, self);
        let _ = writeln!(
            out,
            "per-class f1 (not_match, partial_match, match): {:.2} {:.2} {:.2}",
            100.0 * self.per_class_f1[0],
            100.0 * self.per_class_f1[1],
            100.0 * self.per_class_f1[2]
        );
        out
    }
}

/// Scores predictions against gold pairs, matched by `pair_id`.
pub fn evaluate(predictions: &[PredictionRecord], golds: &[CasePair]) -> Result<EvaluationReport> {
    let mut pred_by_id: BTreeMap<String, &PredictionRecord> = BTreeMap::new();
    for p in predictions {
        if pred_by_id.insert(p.pair_id.clone(), p).is_some() {
            return Err(Error::Contract(format!("duplicate prediction for pair `{}`", p.pair_id)));
        }
    }
    let mut gold_by_id: BTreeMap<String, &CasePair> = BTreeMap::new();
    for g in golds {
        if gold_by_id.insert(g.pair_id.clone(), g).is_some() {
            return Err(Error::Contract(format!("duplicate gold pair `{}`", g.pair_id)));
        }
    }
    check_keys(&pred_by_id, &gold_by_id)?;

    let mut labels_pred = Vec::with_capacity(golds.len());
    let mut labels_gold = Vec::with_capacity(golds.len());
    let mut feat_pred = BTreeMap::new();
    let mut feat_gold = BTreeMap::new();
    let mut align_pred = BTreeMap::new();
    let mut align_gold = BTreeMap::new();
    for (id, g) in &gold_by_id {
        let p = pred_by_id[id];
        labels_pred.push(p.pred_label);
        labels_gold.push(g.match_label);
        feat_pred.insert(format!("{id}\u{0}a"), p.features_a());
        feat_pred.insert(format!("{id}\u{0}b"), p.features_b());
        feat_gold.insert(format!("{id}\u{0}a"), g.gold_features_a.clone());
        feat_gold.insert(format!("{id}\u{0}b"), g.gold_features_b.clone());
        align_pred.insert(id.clone(), p.aligned());
        align_gold.insert(id.clone(), (g.match_label, g.gold_aligned.clone()));
    }
    let matching = macro_f1_matching(&labels_pred, &labels_gold)?;
    let f_fsi = fsi_score(&feat_pred, &feat_gold)?;
    let fsa = fsa_score(&align_pred, &align_gold)?;
    let fin = final_score(matching.f_sm, f_fsi, fsa.score)?;
    let report = EvaluationReport {
        f_sm: matching.f_sm,
        f_fsi,
        f_fsa: fsa.score,
        interpretation_score: fin.interpretation_score,
        f_final: fin.f_final,
        per_class_f1: matching.per_class_f1,
        counts: matching.counts,
        n_pairs: golds.len(),
        n_alignment_pairs: fsa.eligible,
        fold_id: None,
        aggregation: None,
        per_fold: Vec::new(),
        conventions: Conventions::default(),
    };
    report.check()?;
    Ok(report)
}

fn sum_counts(reports: &[EvaluationReport]) -> [[usize; 3]; 3] {
    let mut counts = [[0; 3]; 3];
    for r in reports {
        for (g, row) in r.counts.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                counts[g][p] += c;
            }
        }
    }
    counts
}

/// Unweighted mean of every metric across fold reports.
pub fn aggregate_folds(reports: &[EvaluationReport]) -> Result<EvaluationReport> {
    if reports.is_empty() {
        return Err(Error::Contract("aggregation needs at least one fold report".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvaluationReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut per_class_f1 = [0.0; 3];
    for (c, v) in per_class_f1.iter_mut().enumerate() {
        *v = reports.iter().map(|r| r.per_class_f1[c]).sum::<f64>() / n;
    }
    let report = EvaluationReport {
        f_sm: mean(|r| r.f_sm),
        f_fsi: mean(|r| r.f_fsi),
        f_fsa: mean(|r| r.f_fsa),
        interpretation_score: mean(|r| r.interpretation_score),
        f_final: mean(|r| r.f_final),
        per_class_f1,
        counts: sum_counts(reports),
        n_pairs: reports.iter().map(|r| r.n_pairs).sum(),
        n_alignment_pairs: reports.iter().map(|r| r.n_alignment_pairs).sum(),
        fold_id: None,
        aggregation: Some(Aggregation::Mean),
        per_fold: reports.iter().map(|r| EvaluationReport { per_fold: Vec::new(), ..r.clone() }).collect(),
        conventions: Conventions::default(),
    };
    report.check()?;
    Ok(report)
}

/// Scores all folds' predictions as one set; `fold_reports` are kept as
/// the per-fold breakdown.
pub fn evaluate_pooled(
    predictions: &[PredictionRecord],
    golds: &[CasePair],
    fold_reports: &[EvaluationReport],
) -> Result<EvaluationReport> {
    let mut report = evaluate(predictions, golds)?;
    report.aggregation = Some(Aggregation::Pooled);
    report.per_fold = fold_reports.to_vec();
    Ok(report)
}
