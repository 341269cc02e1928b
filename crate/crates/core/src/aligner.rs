//! Feature sentence alignment: scores every cross pair of selected feature
//! sentences and keeps those above the threshold as evidence.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{AlignExample, Case, Sentence};
use crate::encoder::{Embedding, SentenceEncoder};
use crate::error::{Error, Result};
use crate::fsi::FeatureSelection;
use crate::learning::{
    train_head, ClassifierHead, FgmConfig, FgmTarget, HeadArtifact, HeadMetadata, TrainingConfig,
};
use crate::matcher::{combine, MatchMode};

pub const DEFAULT_ALIGN_THRESHOLD: f64 = 0.5;
/// Loss weights (non-aligned, aligned).
pub const DEFAULT_ALIGN_CLASS_WEIGHTS: [f64; 2] = [0.1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub pair_id: String,
    /// Original sentence indices `(index_a, index_b)`.
    pub aligned: BTreeSet<(usize, usize)>,
    /// `scores[i][j]` scores `rows[i]` of case a against `cols[j]` of case b.
    pub scores: Vec<Vec<f64>>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl AlignmentResult {
    /// Re-applies the threshold to the stored scores.
    pub fn refilter(&self, threshold: f64) -> BTreeSet<(usize, usize)> {
        filter_aligned(&self.scores, &self.rows, &self.cols, threshold)
    }
}

/// Pairs scoring strictly above `threshold`, mapped through `rows`/`cols`.
pub fn filter_aligned(
    scores: &[Vec<f64>],
    rows: &[usize],
    cols: &[usize],
    threshold: f64,
) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (i, row) in scores.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > threshold {
                out.insert((rows[i], cols[j]));
            }
        }
    }
    out
}

fn check_mode(mode: MatchMode) -> Result<()> {
    if mode == MatchMode::Matching {
        return Err(Error::Config("alignment supports only concat and siamese modes".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aligner {
    head: ClassifierHead,
    mode: MatchMode,
    max_len: usize,
}

impl Aligner {
    pub fn new(head: ClassifierHead, mode: MatchMode, max_len: usize) -> Result<Self> {
        check_mode(mode)?;
        if head.num_classes() != 2 {
            return Err(Error::Contract(format!("aligner head must have 2 classes, has {}", head.num_classes())));
        }
        Ok(Aligner { head, mode, max_len })
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    /// Probability that the two sentences are aligned.
    pub fn score_alignment(&self, encoder: &dyn SentenceEncoder, a: &Sentence, b: &Sentence) -> Result<f64> {
        let x = match self.mode {
            MatchMode::Concat => encoder.encode_joint(&a.text, &b.text, self.max_len)?,
            _ => {
                let h = encoder.encode_batch(&[&a.text, &b.text], self.max_len)?;
                combine(self.mode, &h[0], &h[1])
            }
        };
        Ok(self.head.forward(x.as_slice())?[1])
    }

    /// Full score matrix over the selected sentences. Siamese mode encodes
    /// each sentence once.
    pub fn score_matrix(
        &self,
        encoder: &dyn SentenceEncoder,
        case_a: &Case,
        case_b: &Case,
        rows: &[usize],
        cols: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        fn sentence(case: &Case, i: usize) -> Result<&str> {
            case.sentences.get(i).map(|s| s.text.as_str()).ok_or_else(|| {
                Error::Contract(format!("selection index {i} out of range for case `{}`", case.case_id))
            })
        }
        let texts_a = rows.iter().map(|&i| sentence(case_a, i)).collect::<Result<Vec<_>>>()?;
        let texts_b = cols.iter().map(|&j| sentence(case_b, j)).collect::<Result<Vec<_>>>()?;
        match self.mode {
            MatchMode::Concat => texts_a
                .iter()
                .map(|a| {
                    texts_b
                        .iter()
                        .map(|b| {
                            let x = encoder.encode_joint(a, b, self.max_len)?;
                            Ok(self.head.forward(x.as_slice())?[1])
                        })
                        .collect()
                })
                .collect(),
            _ => {
                let h_a = encoder.encode_batch(&texts_a, self.max_len)?;
                let h_b = encoder.encode_batch(&texts_b, self.max_len)?;
                h_a.iter()
                    .map(|a| {
                        h_b.iter()
                            .map(|b| Ok(self.head.forward(combine(self.mode, a, b).as_slice())?[1]))
                            .collect()
                    })
                    .collect()
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn align(
        &self,
        encoder: &dyn SentenceEncoder,
        pair_id: &str,
        case_a: &Case,
        case_b: &Case,
        selection_a: &FeatureSelection,
        selection_b: &FeatureSelection,
        threshold: f64,
    ) -> Result<AlignmentResult> {
        let rows = selection_a.indices.clone();
        let cols = selection_b.indices.clone();
        let scores = self.score_matrix(encoder, case_a, case_b, &rows, &cols)?;
        let aligned = filter_aligned(&scores, &rows, &cols, threshold);
        Ok(AlignmentResult {
            pair_id: pair_id.to_string(),
            aligned,
            scores,
            rows,
            cols,
        })
    }

    pub fn to_artifact(&self, training: &TrainingConfig, fgm: &FgmConfig) -> HeadArtifact {
        let mut extra = serde_json::Map::new();
        extra.insert("mode".into(), serde_json::to_value(self.mode).expect("enum serializes"));
        extra.insert("max_len".into(), self.max_len.into());
        HeadArtifact::new(
            &self.head,
            HeadMetadata {
                component: "aligner".into(),
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
        let mode: MatchMode = serde_json::from_value(
            extra.get("mode").cloned().ok_or_else(|| Error::Contract("aligner artifact lacks `mode`".into()))?,
        )?;
        let max_len = extra
            .get("max_len")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Contract("aligner artifact lacks `max_len`".into()))? as usize;
        let head = artifact.to_head(Some((2, mode.head_input_dim(encoder_dim))))?;
        Aligner::new(head, mode, max_len)
    }
}

/// Trains the alignment head. Without explicit class weights the
/// (0.1, 1.0) weighting is used.
pub fn train_aligner(
    encoder: &dyn SentenceEncoder,
    dataset: &[AlignExample],
    mode: MatchMode,
    max_len: usize,
    config: &TrainingConfig,
    fgm: &FgmConfig,
) -> Result<Aligner> {
    check_mode(mode)?;
    let positives = dataset.iter().filter(|e| e.label == 1).count();
    if positives == 0 || positives == dataset.len() {
        return Err(Error::Config("alignment dataset needs both aligned and non-aligned pairs".into()));
    }
    let mut config = config.clone();
    if config.class_weights.is_none() {
        config.class_weights = Some(DEFAULT_ALIGN_CLASS_WEIGHTS.to_vec());
    }

    let examples = match mode {
        MatchMode::Concat => dataset
            .iter()
            .map(|e| {
                let x = encoder.encode_joint(&e.sentence_a.text, &e.sentence_b.text, max_len)?;
                Ok((x, usize::from(e.label)))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => {
            let mut unique: Vec<&str> = Vec::new();
            let mut slot: HashMap<&str, usize> = HashMap::new();
            for e in dataset {
                for text in [e.sentence_a.text.as_str(), e.sentence_b.text.as_str()] {
                    slot.entry(text).or_insert_with(|| {
                        unique.push(text);
                        unique.len() - 1
                    });
                }
            }
            let encoded: Vec<Embedding> = encoder.encode_batch(&unique, max_len)?;
            dataset
                .iter()
                .map(|e| {
                    let a = &encoded[slot[e.sentence_a.text.as_str()]];
                    let b = &encoded[slot[e.sentence_b.text.as_str()]];
                    (combine(mode, a, b), usize::from(e.label))
                })
                .collect()
        }
    };
    let head = train_head(&examples, 2, &config, fgm)?;
    Aligner::new(head, mode, max_len)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::encoder::HashedNgramEncoder;
    use crate::learning::weighted_cross_entropy;

    fn sentence(i: usize, text: &str) -> Sentence {
        Sentence { index: i, text: text.into() }
    }

    #[test]
    fn strict_threshold_and_index_mapping() {
        let scores = vec![vec![0.9, 0.1], vec![0.3, 0.7]];
        assert_eq!(
            filter_aligned(&scores, &[0, 1], &[0, 1], 0.5),
            BTreeSet::from([(0, 0), (1, 1)])
        );
        assert_eq!(
            filter_aligned(&scores, &[2, 5], &[1, 4], 0.5),
            BTreeSet::from([(2, 1), (5, 4)])
        );
        assert!(filter_aligned(&[vec![0.5, 0.5]], &[0], &[0, 1], 0.5).is_empty());
    }

    #[test]
    fn matching_mode_is_rejected() {
        let head = ClassifierHead::zeros(2, 8, 0.5).unwrap();
        assert!(matches!(Aligner::new(head, MatchMode::Matching, 128), Err(Error::Config(_))));
    }

    #[test]
    fn zero_head_scores_half_and_aligns_nothing() {
        let enc = HashedNgramEncoder::new(16, vec![1, 2]).unwrap();
        let a = Case::from_texts("a", ["甲乙。", "丙丁。"]).unwrap();
        let b = Case::from_texts("b", ["甲乙。", "戊。", "己。"]).unwrap();
        for mode in [MatchMode::Concat, MatchMode::Siamese] {
            let aligner = Aligner::new(ClassifierHead::zeros(2, mode.head_input_dim(16), 0.5).unwrap(), mode, 128).unwrap();
            assert_eq!(aligner.score_alignment(&enc, &a.sentences[0], &b.sentences[0]).unwrap(), 0.5);
            let sa = FeatureSelection::all(&a);
            let sb = FeatureSelection::from_indices(&b, [0, 2]).unwrap();
            let res = aligner.align(&enc, "p", &a, &b, &sa, &sb, 0.5).unwrap();
            assert_eq!(res.scores.len(), 2);
            assert!(res.scores.iter().all(|r| r.len() == 2));
            assert!(res.aligned.is_empty());
            assert_eq!(res.cols, vec![0, 2]);
        }
    }

    #[test]
    fn negative_loss_is_a_tenth_of_unweighted() {
        let probs = [0.3, 0.7];
        let unweighted = weighted_cross_entropy(&probs, 0, &[1.0, 1.0]).unwrap();
        let weighted = weighted_cross_entropy(&probs, 0, &DEFAULT_ALIGN_CLASS_WEIGHTS).unwrap();
        assert_eq!(weighted, 0.1 * unweighted);
    }

    #[test]
    fn training_preconditions() {
        let enc = HashedNgramEncoder::new(16, vec![1]).unwrap();
        let cfg = TrainingConfig::default();
        let one = vec![AlignExample {
            pair_id: "p".into(),
            sentence_a: sentence(0, "甲。"),
            sentence_b: sentence(0, "甲。"),
            label: 1,
        }];
        assert!(matches!(
            train_aligner(&enc, &one, MatchMode::Siamese, 128, &cfg, &FgmConfig::default()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            train_aligner(&enc, &one, MatchMode::Matching, 128, &cfg, &FgmConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn trained_head_aligns_shared_content() {
        let enc = HashedNgramEncoder::new(256, vec![1, 2, 3]).unwrap();
        let facts = ["偷窃电动车辆", "持刀抢劫财物", "伪造公司印章", "非法吸收存款", "驾车肇事逃逸", "虚开增值税票"];
        let mut data = Vec::new();
        for (i, fa) in facts.iter().enumerate() {
            for (j, fb) in facts.iter().enumerate() {
                data.push(AlignExample {
                    pair_id: format!("{i}-{j}"),
                    sentence_a: sentence(0, &format!("经审理查明{fa}。")),
                    sentence_b: sentence(0, &format!("本院认为{fb}。")),
                    label: u8::from(i == j),
                });
            }
        }
        let cfg = TrainingConfig { epochs: 40, learning_rate: 0.01, dropout: 0.0, ..Default::default() };
        for mode in [MatchMode::Siamese, MatchMode::Concat] {
            let aligner = train_aligner(&enc, &data, mode, 128, &cfg, &FgmConfig::default()).unwrap();
            let again = train_aligner(&enc, &data, mode, 128, &cfg, &FgmConfig::default()).unwrap();
            assert_eq!(aligner, again);
            if mode == MatchMode::Siamese {
                let p = aligner
                    .score_alignment(&enc, &data[0].sentence_a, &data[0].sentence_b)
                    .unwrap();
                let q = aligner
                    .score_alignment(&enc, &data[0].sentence_a, &data[1].sentence_b)
                    .unwrap();
                assert!(p > 0.5 && q < 0.5, "p={p} q={q}");
            }
        }
    }

    proptest! {
        #[test]
        fn raising_threshold_shrinks(
            scores in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 1..4),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let rows: Vec<usize> = (0..scores.len()).collect();
            let cols = [0, 1, 2];
            let low = filter_aligned(&scores, &rows, &cols, lo);
            let high = filter_aligned(&scores, &rows, &cols, hi);
            prop_assert!(high.is_subset(&low));
        }
    }
}
