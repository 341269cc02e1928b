//! Three-way case matching over (feature-sentence filtered) case texts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Case, CasePair, MatchLabel, TERMINAL_PUNCTUATION};
use crate::encoder::{Embedding, SentenceEncoder};
use crate::error::{Error, Result};
use crate::fsi::FeatureSelection;
use crate::learning::{
    argmax, train_head, ClassifierHead, FgmConfig, FgmTarget, HeadArtifact, HeadMetadata,
    TrainingConfig,
};

/// How two texts are turned into one head input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Joint encoding of `a SEP b`.
    Concat,
    /// `[h_a; h_b; |h_a - h_b|]` from a shared encoder.
    Siamese,
    /// `h_a + h_b`.
    Matching,
}

impl MatchMode {
    pub fn head_input_dim(self, encoder_dim: usize) -> usize {
        match self {
            MatchMode::Siamese => 3 * encoder_dim,
            MatchMode::Concat | MatchMode::Matching => encoder_dim,
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Concat => "concat",
            MatchMode::Siamese => "siamese",
            MatchMode::Matching => "matching",
        })
    }
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(MatchMode::Concat),
            "siamese" => Ok(MatchMode::Siamese),
            "matching" => Ok(MatchMode::Matching),
            other => Err(Error::Config(format!("unknown match mode `{other}`"))),
        }
    }
}

/// Which sentences of a case feed the matcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    FullText,
    FeatureSentences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPrediction {
    pub label: MatchLabel,
    pub probabilities: [f64; 3],
}

impl MatchPrediction {
    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        let probabilities: [f64; 3] = probs
            .try_into()
            .map_err(|_| Error::Contract(format!("expected 3 probabilities, got {}", probs.len())))?;
        let label = MatchLabel::from_index(argmax(&probabilities)).expect("argmax of 3 is < 3");
        Ok(MatchPrediction { label, probabilities })
    }
}

/// Joins the sentences used for matching. A sentence without terminal
/// punctuation gets a `。` before the next one.
pub fn compose_case_text(case: &Case, selection: &FeatureSelection, source: InputSource) -> String {
    let indices: Box<dyn Iterator<Item = usize>> = match source {
        InputSource::FullText => Box::new(0..case.len()),
        InputSource::FeatureSentences => Box::new(selection.indices.iter().copied()),
    };
    let mut out = String::new();
    let mut pending_delimiter = false;
    for i in indices {
        let text = case.sentences[i].text.as_str();
        if pending_delimiter {
            out.push('。');
        }
        out.push_str(text);
        pending_delimiter = !text.ends_with(TERMINAL_PUNCTUATION);
    }
    out
}

/// `[a; b; |a - b|]`.
pub fn siamese_features(h_a: &[f64], h_b: &[f64]) -> Embedding {
    let mut v = Vec::with_capacity(3 * h_a.len());
    v.extend_from_slice(h_a);
    v.extend_from_slice(h_b);
    v.extend(h_a.iter().zip(h_b).map(|(a, b)| (a - b).abs()));
    Embedding::from_finite(v)
}

pub fn additive_features(h_a: &[f64], h_b: &[f64]) -> Embedding {
    Embedding::from_finite(h_a.iter().zip(h_b).map(|(a, b)| a + b).collect())
}

/// Head input for a pair of texts under `mode`.
pub fn match_features(
    encoder: &dyn SentenceEncoder,
    text_a: &str,
    text_b: &str,
    mode: MatchMode,
    max_len: usize,
) -> Result<Embedding> {
    match mode {
        MatchMode::Concat => encoder.encode_joint(text_a, text_b, max_len),
        MatchMode::Siamese | MatchMode::Matching => {
            let h = encoder.encode_batch(&[text_a, text_b], max_len)?;
            Ok(combine(mode, &h[0], &h[1]))
        }
    }
}

/// Combines separately encoded sides; `Concat` has no such form.
pub(crate) fn combine(mode: MatchMode, h_a: &Embedding, h_b: &Embedding) -> Embedding {
    match mode {
        MatchMode::Siamese => siamese_features(h_a.as_slice(), h_b.as_slice()),
        MatchMode::Matching => additive_features(h_a.as_slice(), h_b.as_slice()),
        MatchMode::Concat => unreachable!("concat mode encodes jointly"),
    }
}

/// Gold feature selections for both sides of every pair.
pub fn gold_selections(pairs: &[CasePair]) -> Result<Vec<(FeatureSelection, FeatureSelection)>> {
    pairs
        .iter()
        .map(|p| {
            Ok((
                FeatureSelection::from_indices(&p.case_a, p.gold_features_a.iter().copied())?,
                FeatureSelection::from_indices(&p.case_b, p.gold_features_b.iter().copied())?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matcher {
    head: ClassifierHead,
    mode: MatchMode,
    source: InputSource,
    max_len: usize,
}

impl Matcher {
    pub fn new(head: ClassifierHead, mode: MatchMode, source: InputSource, max_len: usize) -> Result<Self> {
        if head.num_classes() != 3 {
            return Err(Error::Contract(format!("matcher head must have 3 classes, has {}", head.num_classes())));
        }
        Ok(Matcher { head, mode, source, max_len })
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    pub fn source(&self) -> InputSource {
        self.source
    }

    pub fn features(
        &self,
        encoder: &dyn SentenceEncoder,
        case_a: &Case,
        case_b: &Case,
        selection_a: &FeatureSelection,
        selection_b: &FeatureSelection,
    ) -> Result<Embedding> {
        let text_a = compose_case_text(case_a, selection_a, self.source);
        let text_b = compose_case_text(case_b, selection_b, self.source);
        match_features(encoder, &text_a, &text_b, self.mode, self.max_len)
    }

    pub fn predict(
        &self,
        encoder: &dyn SentenceEncoder,
        case_a: &Case,
        case_b: &Case,
        selection_a: &FeatureSelection,
        selection_b: &FeatureSelection,
    ) -> Result<MatchPrediction> {
        let x = self.features(encoder, case_a, case_b, selection_a, selection_b)?;
        MatchPrediction::from_probabilities(&self.head.forward(x.as_slice())?)
    }

    pub fn to_artifact(&self, training: &TrainingConfig, fgm: &FgmConfig) -> HeadArtifact {
        let mut extra = serde_json::Map::new();
        extra.insert("mode".into(), serde_json::to_value(self.mode).expect("enum serializes"));
        extra.insert("source".into(), serde_json::to_value(self.source).expect("enum serializes"));
        extra.insert("max_len".into(), self.max_len.into());
        HeadArtifact::new(
            &self.head,
            HeadMetadata {
                component: "matcher".into(),
                seed: training.seed,
                training: training.clone(),
                fgm: fgm.clone(),
                fgm_target: FgmTarget::PooledOutput,
                extra,
            },
        )
    }

    pub fn from_artifact(artifact: &HeadArtifact, encoder_dim: usize) -> Result<Self> {
        let extra = &artifact.metadata.extra;
        let field = |key: &str| {
            extra
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Contract(format!("matcher artifact lacks `{key}`")))
        };
        let mode: MatchMode = serde_json::from_value(field("mode")?)?;
        let source: InputSource = serde_json::from_value(field("source")?)?;
        let max_len: usize = serde_json::from_value(field("max_len")?)?;
        let head = artifact.to_head(Some((3, mode.head_input_dim(encoder_dim))))?;
        Matcher::new(head, mode, source, max_len)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train_matcher(
    encoder: &dyn SentenceEncoder,
    pairs: &[CasePair],
    selections: &[(FeatureSelection, FeatureSelection)],
    mode: MatchMode,
    source: InputSource,
    max_len: usize,
    config: &TrainingConfig,
    fgm: &FgmConfig,
) -> Result<Matcher> {
    if pairs.len() != selections.len() {
        return Err(Error::Contract(format!(
            "{} pairs but {} selections",
            pairs.len(),
            selections.len()
        )));
    }
    for label in MatchLabel::ALL {
        if !pairs.iter().any(|p| p.match_label == label) {
            return Err(Error::Config(format!("matcher training data has no `{label}` pairs")));
        }
    }
    let shape = ClassifierHead::zeros(3, mode.head_input_dim(encoder.dim()), config.dropout)?;
    let probe = Matcher::new(shape, mode, source, max_len)?;
    let examples = pairs
        .iter()
        .zip(selections)
        .map(|(p, (sa, sb))| {
            let x = probe.features(encoder, &p.case_a, &p.case_b, sa, sb)?;
            Ok((x, p.match_label.index()))
        })
        .collect::<Result<Vec<_>>>()?;
    let head = train_head(&examples, 3, config, fgm)?;
    Matcher::new(head, mode, source, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashedNgramEncoder;

    fn case() -> Case {
        Case::from_texts("c", ["甲。", "乙", "丙！"]).unwrap()
    }

    #[test]
    fn feature_sentences_are_joined_in_order() {
        let c = case();
        let sel = FeatureSelection::from_indices(&c, [2, 0]).unwrap();
        assert_eq!(compose_case_text(&c, &sel, InputSource::FeatureSentences), "甲。丙！");
    }

    #[test]
    fn missing_punctuation_gets_a_delimiter() {
        let c = case();
        let sel = FeatureSelection::from_indices(&c, [1, 2]).unwrap();
        assert_eq!(compose_case_text(&c, &sel, InputSource::FeatureSentences), "乙。丙！");
        assert_eq!(compose_case_text(&c, &sel, InputSource::FullText), "甲。乙。丙！");
    }

    #[test]
    fn full_selection_equals_full_text() {
        let c = case();
        let all = FeatureSelection::all(&c);
        assert_eq!(
            compose_case_text(&c, &all, InputSource::FeatureSentences),
            compose_case_text(&c, &all, InputSource::FullText)
        );
    }

    #[test]
    fn siamese_layout() {
        let v = siamese_features(&[1.0, 2.0], &[4.0, 0.0]);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 4.0, 0.0, 3.0, 2.0]);
        let same = siamese_features(&[0.3, -0.1], &[0.3, -0.1]);
        assert_eq!(&same.as_slice()[4..], &[0.0, 0.0]);
    }

    #[test]
    fn matching_features_commute() {
        let enc = HashedNgramEncoder::new(128, vec![1, 2, 3]).unwrap();
        let ab = match_features(&enc, "被告人盗窃", "本院认为", MatchMode::Matching, 512).unwrap();
        let ba = match_features(&enc, "本院认为", "被告人盗窃", MatchMode::Matching, 512).unwrap();
        assert_eq!(ab, ba);
        let s = match_features(&enc, "被告人盗窃", "本院认为", MatchMode::Siamese, 512).unwrap();
        assert_eq!(s.len(), 3 * 128);
    }

    #[test]
    fn zero_head_predicts_not_match() {
        let enc = HashedNgramEncoder::new(32, vec![1]).unwrap();
        let m = Matcher::new(ClassifierHead::zeros(3, 32, 0.5).unwrap(), MatchMode::Concat, InputSource::FullText, 512)
            .unwrap();
        let c = case();
        let sel = FeatureSelection::all(&c);
        let pred = m.predict(&enc, &c, &c, &sel, &sel).unwrap();
        assert_eq!(pred.label, MatchLabel::NotMatch);
        for p in pred.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("siamese".parse::<MatchMode>().unwrap(), MatchMode::Siamese);
        assert!("cosine".parse::<MatchMode>().is_err());
    }

    #[test]
    fn artifact_round_trip_checks_mode_dim() {
        let m = Matcher::new(ClassifierHead::zeros(3, 24, 0.5).unwrap(), MatchMode::Siamese, InputSource::FeatureSentences, 512)
            .unwrap();
        let art = m.to_artifact(&TrainingConfig::default(), &FgmConfig::default());
        assert_eq!(Matcher::from_artifact(&art, 8).unwrap(), m);
        assert!(Matcher::from_artifact(&art, 24).is_err());
    }
}
