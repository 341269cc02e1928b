//! End-to-end assembly: feature selection, matching, alignment and
//! conflict resolution, plus per-fold training and prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aligner::{train_aligner, AlignmentResult, Aligner};
use crate::config::{Component, RunConfig, TrainSelection};
use crate::corpus::{build_alignment_dataset, build_fsi_dataset, Case, CasePair, FoldSplit, MatchLabel, PredictionRecord};
use crate::encoder::SentenceEncoder;
use crate::error::{Error, Result};
use crate::fsi::{train_fsi, FeatureSelection, FsiModel};
use crate::matcher::{gold_selections, train_matcher, MatchPrediction, Matcher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePrediction {
    pub pair_id: String,
    pub match_label: MatchLabel,
    pub features_a: BTreeSet<usize>,
    pub features_b: BTreeSet<usize>,
    pub aligned: BTreeSet<(usize, usize)>,
    pub conflict_resolved: bool,
}

impl PipelinePrediction {
    pub fn to_record(&self, pair: &CasePair) -> Result<PredictionRecord> {
        if pair.pair_id != self.pair_id {
            return Err(Error::Contract(format!(
                "prediction `{}` paired with case pair `{}`",
                self.pair_id, pair.pair_id
            )));
        }
        Ok(PredictionRecord {
            pair_id: self.pair_id.clone(),
            case_a: (&pair.case_a).into(),
            case_b: (&pair.case_b).into(),
            pred_label: self.match_label,
            pred_features_a: self.features_a.iter().copied().collect(),
            pred_features_b: self.features_b.iter().copied().collect(),
            pred_aligned: self.aligned.iter().map(|&(a, b)| [a, b]).collect(),
            conflict_resolved: self.conflict_resolved,
        })
    }
}

/// A match or partial-match label without aligned evidence becomes
/// not-match. Every other prediction passes through unchanged.
pub fn resolve_conflict(prediction: PipelinePrediction) -> PipelinePrediction {
    if prediction.match_label != MatchLabel::NotMatch && prediction.aligned.is_empty() {
        PipelinePrediction {
            match_label: MatchLabel::NotMatch,
            conflict_resolved: true,
            ..prediction
        }
    } else {
        prediction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub fsi_threshold: f64,
    pub fallback_k: usize,
    pub align_threshold: f64,
    pub conflict_resolution: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions::from(&RunConfig::default())
    }
}

impl From<&RunConfig> for PipelineOptions {
    fn from(c: &RunConfig) -> Self {
        PipelineOptions {
            fsi_threshold: c.fsi_threshold,
            fallback_k: c.fallback_k,
            align_threshold: c.align_threshold,
            conflict_resolution: c.conflict_resolution,
        }
    }
}

/// The three inference stages, separable so any of them can be replaced.
pub trait PipelineStages {
    fn select(&self, case: &Case, options: &PipelineOptions) -> Result<FeatureSelection>;

    fn match_cases(
        &self,
        case_a: &Case,
        case_b: &Case,
        selection_a: &FeatureSelection,
        selection_b: &FeatureSelection,
    ) -> Result<MatchPrediction>;

    fn align(
        &self,
        pair_id: &str,
        case_a: &Case,
        case_b: &Case,
        selection_a: &FeatureSelection,
        selection_b: &FeatureSelection,
        options: &PipelineOptions,
    ) -> Result<AlignmentResult>;
}

/// Trained heads sharing one encoder. A component may be absent, e.g.
/// before training; using it is then a state error.
#[derive(Clone)]
pub struct TrainedComponents {
    pub encoder: Arc<dyn SentenceEncoder>,
    pub fsi: Option<FsiModel>,
    pub matcher: Option<Matcher>,
    pub aligner: Option<Aligner>,
}

impl TrainedComponents {
    pub fn empty(encoder: Arc<dyn SentenceEncoder>) -> Self {
        TrainedComponents { encoder, fsi: None, matcher: None, aligner: None }
    }

    fn missing(component: Component) -> Error {
        Error::State(format!("no trained {component} component"))
    }

    pub fn fsi(&self) -> Result<&FsiModel> {
        self.fsi.as_ref().ok_or_else(|| Self::missing(Component::Fsi))
    }

    pub fn matcher(&self) -> Result<&Matcher> {
        self.matcher.as_ref().ok_or_else(|| Self::missing(Component::Matcher))
    }

    pub fn aligner(&self) -> Result<&Aligner> {
        self.aligner.as_ref().ok_or_else(|| Self::missing(Component::Aligner))
    }
}

impl PipelineStages for TrainedComponents {
    fn select(&self, case: &Case, options: &PipelineOptions) -> Result<FeatureSelection> {
        self.fsi()?
            .select_features(self.encoder.as_ref(), case, options.fsi_threshold, options.fallback_k)
    }

    fn match_cases(
        &self,
        case_a: &Case,
        case_b: &Case,
        selection_a: &FeatureSelection,
        selection_b: &FeatureSelection,
    ) -> Result<MatchPrediction> {
        self.matcher()?
            .predict(self.encoder.as_ref(), case_a, case_b, selection_a, selection_b)
    }

    fn align(
        &self,
        pair_id: &str,
        case_a: &Case,
        case_b: &Case,
        selection_a: &FeatureSelection,
        selection_b: &FeatureSelection,
        options: &PipelineOptions,
    ) -> Result<AlignmentResult> {
        self.aligner()?.align(
            self.encoder.as_ref(),
            pair_id,
            case_a,
            case_b,
            selection_a,
            selection_b,
            options.align_threshold,
        )
    }
}

/// Everything produced for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// After resolution (when enabled).
    pub prediction: PipelinePrediction,
    /// Before resolution.
    pub unresolved: PipelinePrediction,
    pub selection_a: FeatureSelection,
    pub selection_b: FeatureSelection,
    pub matching: MatchPrediction,
    pub alignment: AlignmentResult,
}

impl PipelineOutput {
    pub fn fallback_count(&self) -> usize {
        usize::from(self.selection_a.fallback_used) + usize::from(self.selection_b.fallback_used)
    }
}

pub fn run_pipeline(
    pair_id: &str,
    case_a: &Case,
    case_b: &Case,
    stages: &dyn PipelineStages,
    options: &PipelineOptions,
) -> Result<PipelineOutput> {
    let selection_a = stages.select(case_a, options).map_err(|e| e.in_stage("fsi"))?;
    let selection_b = stages.select(case_b, options).map_err(|e| e.in_stage("fsi"))?;
    let matching = stages
        .match_cases(case_a, case_b, &selection_a, &selection_b)
        .map_err(|e| e.in_stage("matcher"))?;
    let alignment = stages
        .align(pair_id, case_a, case_b, &selection_a, &selection_b, options)
        .map_err(|e| e.in_stage("aligner"))?;
    let unresolved = PipelinePrediction {
        pair_id: pair_id.to_string(),
        match_label: matching.label,
        features_a: selection_a.indices.iter().copied().collect(),
        features_b: selection_b.indices.iter().copied().collect(),
        aligned: alignment.aligned.clone(),
        conflict_resolved: false,
    };
    let prediction = if options.conflict_resolution {
        resolve_conflict(unresolved.clone())
    } else {
        unresolved.clone()
    };
    Ok(PipelineOutput { prediction, unresolved, selection_a, selection_b, matching, alignment })
}

/// Runs the pipeline on every pair, in input order.
pub fn predict_pairs(
    pairs: &[CasePair],
    stages: &dyn PipelineStages,
    options: &PipelineOptions,
) -> Result<Vec<PipelineOutput>> {
    pairs
        .iter()
        .map(|p| run_pipeline(&p.pair_id, &p.case_a, &p.case_b, stages, options))
        .collect()
}

/// Splits `corpus` into the fold's train and test pairs, in split order.
pub fn fold_pairs<'a>(fold: &FoldSplit, corpus: &'a [CasePair]) -> Result<(Vec<&'a CasePair>, Vec<&'a CasePair>)> {
    let by_id: BTreeMap<&str, &CasePair> = corpus.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let lookup = |ids: &[String]| {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("fold {} names unknown pair `{id}`", fold.fold_id)))
            })
            .collect::<Result<Vec<_>>>()
    };
    Ok((lookup(&fold.train_pair_ids)?, lookup(&fold.test_pair_ids)?))
}

/// Trains the requested components on `train` in the fixed order fsi,
/// matcher, aligner. Components not requested are copied from `existing`.
pub fn train_components(
    train: &[CasePair],
    config: &RunConfig,
    fold_id: usize,
    encoder: Arc<dyn SentenceEncoder>,
    which: &[Component],
    existing: Option<TrainedComponents>,
) -> Result<TrainedComponents> {
    let mut out = existing.unwrap_or_else(|| TrainedComponents::empty(encoder.clone()));
    out.encoder = encoder.clone();
    let enc = encoder.as_ref();
    if which.contains(&Component::Fsi) {
        let data = build_fsi_dataset(train)?;
        let model = train_fsi(
            enc,
            &data,
            config.max_len_for(Component::Fsi),
            &config.training_for(Component::Fsi, fold_id),
            &config.fgm_for(Component::Fsi),
        )
        .map_err(|e| e.in_stage("fsi"))?;
        out.fsi = Some(model);
    }
    if which.contains(&Component::Matcher) {
        let selections = match config.matcher_train_selection {
            TrainSelection::Gold => gold_selections(train)?,
            TrainSelection::Predicted => {
                let options = PipelineOptions::from(config);
                train
                    .iter()
                    .map(|p| Ok((out.select(&p.case_a, &options)?, out.select(&p.case_b, &options)?)))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.in_stage("matcher"))?
            }
        };
        let matcher = train_matcher(
            enc,
            train,
            &selections,
            config.match_mode,
            config.input_source,
            config.max_len_for(Component::Matcher),
            &config.training_for(Component::Matcher, fold_id),
            &config.fgm_for(Component::Matcher),
        )
        .map_err(|e| e.in_stage("matcher"))?;
        out.matcher = Some(matcher);
    }
    if which.contains(&Component::Aligner) {
        let data = build_alignment_dataset(train);
        let aligner = train_aligner(
            enc,
            &data,
            config.align_mode,
            config.max_len_for(Component::Aligner),
            &config.training_for(Component::Aligner, fold_id),
            &config.fgm_for(Component::Aligner),
        )
        .map_err(|e| e.in_stage("aligner"))?;
        out.aligner = Some(aligner);
    }
    Ok(out)
}

/// Result of training and predicting one fold.
pub struct FoldRun {
    pub fold_id: usize,
    pub components: TrainedComponents,
    pub test_pairs: Vec<CasePair>,
    pub outputs: Vec<PipelineOutput>,
}

impl FoldRun {
    pub fn predictions(&self) -> Vec<PipelinePrediction> {
        self.outputs.iter().map(|o| o.prediction.clone()).collect()
    }

    pub fn unresolved_predictions(&self) -> Vec<PipelinePrediction> {
        self.outputs.iter().map(|o| o.unresolved.clone()).collect()
    }

    pub fn records(&self) -> Result<Vec<PredictionRecord>> {
        to_records(&self.predictions(), &self.test_pairs)
    }

    pub fn unresolved_records(&self) -> Result<Vec<PredictionRecord>> {
        to_records(&self.unresolved_predictions(), &self.test_pairs)
    }

    /// Cases for which no sentence cleared the feature threshold.
    pub fn fallback_count(&self) -> usize {
        self.outputs.iter().map(PipelineOutput::fallback_count).sum()
    }

    pub fn resolution_count(&self) -> usize {
        self.outputs.iter().filter(|o| o.prediction.conflict_resolved).count()
    }
}

pub fn to_records(predictions: &[PipelinePrediction], pairs: &[CasePair]) -> Result<Vec<PredictionRecord>> {
    if predictions.len() != pairs.len() {
        return Err(Error::Contract(format!("{} predictions for {} pairs", predictions.len(), pairs.len())));
    }
    predictions.iter().zip(pairs).map(|(p, pair)| p.to_record(pair)).collect()
}

/// Trains all components on the fold's training pairs and predicts its
/// test pairs. Errors carry the fold id.
pub fn run_fold(
    fold: &FoldSplit,
    corpus: &[CasePair],
    config: &RunConfig,
    encoder: Arc<dyn SentenceEncoder>,
) -> Result<FoldRun> {
    let inner = || -> Result<FoldRun> {
        config.validate()?;
        let (train, test) = fold_pairs(fold, corpus)?;
        let train: Vec<CasePair> = train.into_iter().cloned().collect();
        let test_pairs: Vec<CasePair> = test.into_iter().cloned().collect();
        let components = train_components(&train, config, fold.fold_id, encoder, &Component::ALL, None)?;
        let outputs = predict_pairs(&test_pairs, &components, &PipelineOptions::from(config))?;
        Ok(FoldRun { fold_id: fold.fold_id, components, test_pairs, outputs })
    };
    inner().map_err(|e| e.in_fold(fold.fold_id))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::fixtures::case;

    fn prediction(label: MatchLabel, aligned: &[(usize, usize)]) -> PipelinePrediction {
        PipelinePrediction {
            pair_id: "p".into(),
            match_label: label,
            features_a: BTreeSet::from([0, 1, 2]),
            features_b: BTreeSet::from([0, 1, 2]),
            aligned: aligned.iter().copied().collect(),
            conflict_resolved: false,
        }
    }

    #[test]
    fn resolution_rule() {
        let r = resolve_conflict(prediction(MatchLabel::Match, &[]));
        assert_eq!(r.match_label, MatchLabel::NotMatch);
        assert!(r.conflict_resolved && r.aligned.is_empty());

        let p = prediction(MatchLabel::NotMatch, &[]);
        assert_eq!(resolve_conflict(p.clone()), p);
        let p = prediction(MatchLabel::PartialMatch, &[(1, 2)]);
        assert_eq!(resolve_conflict(p.clone()), p);
        let p = prediction(MatchLabel::NotMatch, &[(1, 2)]);
        assert_eq!(resolve_conflict(p.clone()), p);
    }

    struct Fixed {
        label: MatchLabel,
        aligned: BTreeSet<(usize, usize)>,
        fail: Option<&'static str>,
    }

    impl PipelineStages for Fixed {
        fn select(&self, case: &Case, _: &PipelineOptions) -> Result<FeatureSelection> {
            if self.fail == Some("fsi") {
                return Err(Error::State("boom".into()));
            }
            Ok(FeatureSelection::all(case))
        }

        fn match_cases(&self, _: &Case, _: &Case, _: &FeatureSelection, _: &FeatureSelection) -> Result<MatchPrediction> {
            if self.fail == Some("matcher") {
                return Err(Error::State("boom".into()));
            }
            let mut probabilities = [0.0; 3];
            probabilities[self.label.index()] = 1.0;
            Ok(MatchPrediction { label: self.label, probabilities })
        }

        fn align(
            &self,
            pair_id: &str,
            _: &Case,
            _: &Case,
            sa: &FeatureSelection,
            sb: &FeatureSelection,
            _: &PipelineOptions,
        ) -> Result<AlignmentResult> {
            Ok(AlignmentResult {
                pair_id: pair_id.into(),
                aligned: self.aligned.clone(),
                scores: vec![vec![0.0; sb.len()]; sa.len()],
                rows: sa.indices.clone(),
                cols: sb.indices.clone(),
            })
        }
    }

    #[test]
    fn pipeline_applies_resolution_only_on_conflict() {
        let (a, b) = (case("a", 3), case("b", 2));
        let opts = PipelineOptions::default();
        let ok = Fixed { label: MatchLabel::Match, aligned: BTreeSet::from([(0, 1)]), fail: None };
        let out = run_pipeline("p", &a, &b, &ok, &opts).unwrap();
        assert_eq!(out.prediction, out.unresolved);
        assert_eq!(out.prediction.match_label, MatchLabel::Match);

        let conflict = Fixed { label: MatchLabel::Match, aligned: BTreeSet::new(), fail: None };
        let out = run_pipeline("p", &a, &b, &conflict, &opts).unwrap();
        assert_eq!(out.prediction.match_label, MatchLabel::NotMatch);
        assert!(out.prediction.conflict_resolved);
        assert_eq!(out.unresolved.match_label, MatchLabel::Match);

        let off = PipelineOptions { conflict_resolution: false, ..opts };
        let out = run_pipeline("p", &a, &b, &conflict, &off).unwrap();
        assert_eq!(out.prediction.match_label, MatchLabel::Match);
    }

    #[test]
    fn stage_errors_are_attributed() {
        let (a, b) = (case("a", 3), case("b", 2));
        for stage in ["fsi", "matcher"] {
            let s = Fixed { label: MatchLabel::Match, aligned: BTreeSet::new(), fail: Some(stage) };
            match run_pipeline("p", &a, &b, &s, &PipelineOptions::default()) {
                Err(Error::Stage { stage: got, .. }) => assert_eq!(got, stage),
                other => panic!("expected stage error, got {other:?}"),
            }
        }
    }

    #[test]
    fn missing_components_are_state_errors() {
        let enc = Arc::new(crate::encoder::HashedNgramEncoder::new(8, vec![1]).unwrap());
        let c = TrainedComponents::empty(enc);
        let (a, b) = (case("a", 3), case("b", 2));
        let err = run_pipeline("p", &a, &b, &c, &PipelineOptions::default()).unwrap_err();
        assert!(err.to_string().contains("fsi"), "{err}");
        assert!(!err.is_validation());
    }

    fn label_strategy() -> impl Strategy<Value = MatchLabel> {
        (0usize..3).prop_map(|i| MatchLabel::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn resolution_properties(
            label in label_strategy(),
            aligned in proptest::collection::btree_set((0usize..3, 0usize..3), 0..3),
        ) {
            let p = PipelinePrediction {
                pair_id: "p".into(),
                match_label: label,
                features_a: BTreeSet::from([0, 1, 2]),
                features_b: BTreeSet::from([0, 1, 2]),
                aligned,
                conflict_resolved: false,
            };
            let once = resolve_conflict(p.clone());
            prop_assert_eq!(resolve_conflict(once.clone()), once.clone());
            prop_assert_eq!(&once.features_a, &p.features_a);
            prop_assert_eq!(&once.features_b, &p.features_b);
            prop_assert_eq!(&once.aligned, &p.aligned);
            if p.match_label == MatchLabel::NotMatch {
                prop_assert_eq!(once.match_label, MatchLabel::NotMatch);
            }
            if once.match_label != p.match_label {
                prop_assert_eq!(once.match_label, MatchLabel::NotMatch);
            }
            prop_assert!(!(once.match_label != MatchLabel::NotMatch && once.aligned.is_empty()));
        }
    }
}
