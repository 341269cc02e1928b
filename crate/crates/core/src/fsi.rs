//! Feature sentence identification: binary classification of each sentence
//! of a case, and the filtered sentence set handed to matching and alignment.

use serde::{Deserialize, Serialize};

use crate::corpus::{Case, FsiExample, Sentence};
use crate::encoder::SentenceEncoder;
use crate::error::{Error, Result};
use crate::learning::{
    train_head, ClassifierHead, FgmConfig, FgmTarget, HeadArtifact, HeadMetadata, TrainingConfig,
};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FALLBACK_K: usize = 3;

/// Selected feature sentences of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub case_id: String,
    /// Ascending sentence indices.
    pub indices: Vec<usize>,
    /// Feature probability of every sentence in the case, by index.
    pub probabilities: Vec<f64>,
    /// True when nothing cleared the threshold and the top-k rule picked
    /// the indices instead.
    pub fallback_used: bool,
}

impl FeatureSelection {
    /// Every sentence selected, probabilities unknown (recorded as 1).
    pub fn all(case: &Case) -> Self {
        FeatureSelection {
            case_id: case.case_id.clone(),
            indices: (0..case.len()).collect(),
            probabilities: vec![1.0; case.len()],
            fallback_used: false,
        }
    }

    /// Selection from known indices (e.g. gold features).
    pub fn from_indices(case: &Case, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= case.len()) {
            return Err(Error::Contract(format!(
                "selection index {bad} out of range for case `{}` with {} sentences",
                case.case_id,
                case.len()
            )));
        }
        let probabilities = (0..case.len())
            .map(|i| if indices.binary_search(&i).is_ok() { 1.0 } else { 0.0 })
            .collect();
        Ok(FeatureSelection {
            case_id: case.case_id.clone(),
            indices,
            probabilities,
            fallback_used: false,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Applies the selection rule to precomputed scores: indices scoring
/// strictly above `threshold`, or the `fallback_k` best (ties to the lower
/// index) when none does.
pub fn select_from_scores(
    case_id: &str,
    scores: &[f64],
    threshold: f64,
    fallback_k: usize,
) -> FeatureSelection {
    let mut indices: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > threshold).collect();
    let fallback_used = indices.is_empty() && !scores.is_empty();
    if fallback_used {
        let mut ranked: Vec<usize> = (0..scores.len()).collect();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        ranked.truncate(fallback_k.max(1));
        ranked.sort_unstable();
        indices = ranked;
    }
    FeatureSelection {
        case_id: case_id.to_string(),
        indices,
        probabilities: scores.to_vec(),
        fallback_used,
    }
}

/// Trained feature-sentence classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FsiModel {
    head: ClassifierHead,
    max_len: usize,
}

impl FsiModel {
    pub fn new(head: ClassifierHead, max_len: usize) -> Result<Self> {
        if head.num_classes() != 2 {
            return Err(Error::Contract(format!(
                "feature sentence head must have 2 classes, has {}",
                head.num_classes()
            )));
        }
        Ok(FsiModel { head, max_len })
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Probability that `sentence` is a feature sentence.
    pub fn score_sentence(&self, encoder: &dyn SentenceEncoder, sentence: &Sentence) -> Result<f64> {
        let h = encoder.encode(&sentence.text, self.max_len)?;
        Ok(self.head.forward(h.as_slice())?[1])
    }

    pub fn score_case(&self, encoder: &dyn SentenceEncoder, case: &Case) -> Result<Vec<f64>> {
        let texts: Vec<&str> = case.texts().collect();
        encoder
            .encode_batch(&texts, self.max_len)?
            .iter()
            .map(|h| Ok(self.head.forward(h.as_slice())?[1]))
            .collect()
    }

    pub fn select_features(
        &self,
        encoder: &dyn SentenceEncoder,
        case: &Case,
        threshold: f64,
        fallback_k: usize,
    ) -> Result<FeatureSelection> {
        let scores = self.score_case(encoder, case)?;
        Ok(select_from_scores(&case.case_id, &scores, threshold, fallback_k))
    }

    pub fn to_artifact(&self, training: &TrainingConfig, fgm: &FgmConfig) -> HeadArtifact {
        let mut extra = serde_json::Map::new();
        extra.insert("max_len".into(), self.max_len.into());
        HeadArtifact::new(
            &self.head,
            HeadMetadata {
                component: "fsi".into(),
                seed: training.seed,
                training: training.clone(),
                fgm: fgm.clone(),
                fgm_target: FgmTarget::PooledOutput,
                extra,
            },
        )
    }

    pub fn from_artifact(artifact: &HeadArtifact, encoder_dim: usize) -> Result<Self> {
        let max_len = artifact
            .metadata
            .extra
            .get("max_len")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Contract("fsi artifact lacks max_len".into()))? as usize;
        FsiModel::new(artifact.to_head(Some((2, encoder_dim)))?, max_len)
    }
}

pub fn train_fsi(
    encoder: &dyn SentenceEncoder,
    dataset: &[FsiExample],
    max_len: usize,
    config: &TrainingConfig,
    fgm: &FgmConfig,
) -> Result<FsiModel> {
    if dataset.is_empty() {
        return Err(Error::Config("feature sentence dataset is empty".into()));
    }
    let positives = dataset.iter().filter(|e| e.label == 1).count();
    if positives == 0 || positives == dataset.len() {
        return Err(Error::Config(
            "feature sentence dataset needs both feature and non-feature sentences".into(),
        ));
    }
    let texts: Vec<&str> = dataset.iter().map(|e| e.sentence.text.as_str()).collect();
    let vectors = encoder.encode_batch(&texts, max_len)?;
    let examples: Vec<_> = vectors
        .into_iter()
        .zip(dataset)
        .map(|(h, e)| (h, usize::from(e.label)))
        .collect();
    let head = train_head(&examples, 2, config, fgm)?;
    FsiModel::new(head, max_len)
}
