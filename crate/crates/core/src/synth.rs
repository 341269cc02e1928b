//! Synthetic case-pair corpus with planted feature sentences and aligned
//! evidence, used for end-to-end testing without a real legal corpus.
//!
//! Each feature sentence carries a marker phrase and one fact phrase; the
//! first feature sentence of a case also names its category. Both cases of
//! a pair get the same number of feature sentences. Match pairs share every
//! fact, partial-match pairs at least half and not-match pairs none. Gold
//! alignments link sentences with the same fact. Decoy not-match pairs
//! share the category but no fact.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Case, CasePair, MatchLabel};
use crate::encoder::SEP_TOKEN;
use crate::error::{Error, Result};

const MARKERS: [&str; 3] = ["经审理查明", "本院认为", "争议焦点在于"];
const BACKGROUND: [&str; 10] = [
    "案件受理费由",
    "如不服本判决",
    "审判长签发",
    "书记员记录",
    "依照法律规定",
    "当事人到庭参加诉讼",
    "送达之日起十五日内",
    "可向上级法院提起上诉",
    "现已审理终结",
    "依法组成合议庭",
];
const CATEGORIES: [&str; 8] = ["盗窃罪", "诈骗罪", "抢劫罪", "合同纠纷", "借款纠纷", "侵权纠纷", "贪污罪", "故意伤害罪"];

const FACT_POOL_START: u32 = 0x5000;
const FILLER_POOL_START: u32 = 0x6C00;
const FILLER_POOL_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Expected share of feature sentences per case.
    pub feature_rate: f64,
    /// Share of not-match pairs that share their category.
    pub decoy_rate: f64,
    pub n_facts: usize,
    pub fact_len: usize,
    /// Longest run of filler characters in a background sentence.
    pub max_filler: usize,
    /// Longest run of filler characters in a feature sentence.
    pub max_feature_filler: usize,
    /// Folds the corpus must support; bounds `n_pairs` from below.
    pub k_folds: usize,
    pub seed: u64,
    pub feature_markers: Vec<String>,
    pub background_phrases: Vec<String>,
    pub categories: Vec<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_pairs: 300,
            min_sentences: 4,
            max_sentences: 10,
            feature_rate: 0.5,
            decoy_rate: 0.5,
            n_facts: 12,
            fact_len: 12,
            max_filler: 4,
            max_feature_filler: 0,
            k_folds: 5,
            seed: 42,
            feature_markers: MARKERS.iter().map(|s| s.to_string()).collect(),
            background_phrases: BACKGROUND.iter().map(|s| s.to_string()).collect(),
            categories: CATEGORIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 || self.n_pairs < 3 * self.k_folds {
            return Err(Error::Config(format!(
                "n_pairs {} must be at least 3 x k_folds ({})",
                self.n_pairs, self.k_folds
            )));
        }
        if self.min_sentences < 2 || self.min_sentences > self.max_sentences {
            return Err(Error::Config(format!(
                "sentence range {}..={} invalid (minimum 2)",
                self.min_sentences, self.max_sentences
            )));
        }
        if !(self.feature_rate > 0.0 && self.feature_rate <= 1.0) {
            return Err(Error::Config(format!("feature_rate {} outside (0, 1]", self.feature_rate)));
        }
        if !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(Error::Config(format!("decoy_rate {} outside [0, 1]", self.decoy_rate)));
        }
        if self.fact_len == 0 || self.n_facts < 2 * self.max_features() {
            return Err(Error::Config(format!(
                "need fact_len >= 1 and at least {} facts",
                2 * self.max_features()
            )));
        }
        for (name, vocab) in [
            ("feature_markers", &self.feature_markers),
            ("background_phrases", &self.background_phrases),
            ("categories", &self.categories),
        ] {
            if vocab.is_empty() || vocab.iter().any(|w| w.trim().is_empty()) {
                return Err(Error::Config(format!("{name} must be non-empty words")));
            }
            if vocab.iter().any(|w| w.contains(SEP_TOKEN)) {
                return Err(Error::Config(format!("{name} contains the separator character")));
            }
        }
        if self.categories.len() < 2 {
            return Err(Error::Config("need at least two categories".into()));
        }
        Ok(())
    }

    /// Most feature sentences a generated case can have.
    pub fn max_features(&self) -> usize {
        ((self.feature_rate * self.max_sentences as f64).ceil() as usize).max(2)
    }

    fn reserved_chars(&self) -> BTreeSet<char> {
        self.feature_markers
            .iter()
            .chain(&self.background_phrases)
            .chain(&self.categories)
            .flat_map(|w| w.chars())
            .chain("，。；！？".chars())
            .collect()
    }

    /// Characters from `start` upwards that no vocabulary word uses.
    fn pool(&self, start: u32, n: usize, exclude: &BTreeSet<char>) -> Vec<char> {
        (start..)
            .filter_map(char::from_u32)
            .filter(|c| !exclude.contains(c))
            .take(n)
            .collect()
    }

    /// Fact tokens; each uses its own characters.
    pub fn facts(&self) -> Vec<String> {
        let chars = self.pool(FACT_POOL_START, self.n_facts * self.fact_len, &self.reserved_chars());
        chars.chunks(self.fact_len).map(|c| c.iter().collect()).collect()
    }

    fn fillers(&self) -> Vec<char> {
        let mut exclude = self.reserved_chars();
        exclude.extend(self.facts().iter().flat_map(|f| f.chars()));
        self.pool(FILLER_POOL_START, FILLER_POOL_SIZE, &exclude)
    }
}

struct Vocab<'a> {
    spec: &'a SyntheticSpec,
    facts: Vec<String>,
    fillers: Vec<char>,
}

impl Vocab<'_> {
    fn filler(&self, rng: &mut ChaCha8Rng, max: usize) -> String {
        let n = rng.gen_range(0..=max);
        (0..n).map(|_| *self.fillers.choose(rng).expect("filler pool non-empty")).collect()
    }

    fn feature_sentence(&self, rng: &mut ChaCha8Rng, category: &str, fact: usize) -> String {
        let marker = self.spec.feature_markers.choose(rng).expect("validated non-empty");
        format!("{marker}{category}，{}{}。", self.facts[fact], self.filler(rng, self.spec.max_feature_filler))
    }

    fn background_sentence(&self, rng: &mut ChaCha8Rng) -> String {
        let phrase = self.spec.background_phrases.choose(rng).expect("validated non-empty");
        format!("{phrase}{}。", self.filler(rng, self.spec.max_filler))
    }

    /// Places the fact sentences at random positions of an `n`-sentence
    /// case. Returns the case and the position of each fact.
    fn case(
        &self,
        rng: &mut ChaCha8Rng,
        case_id: String,
        n: usize,
        category: &str,
        facts: &[usize],
    ) -> (Case, Vec<usize>) {
        let mut positions: Vec<usize> = (0..n).collect();
        positions.shuffle(rng);
        positions.truncate(facts.len());
        let mut slots: Vec<Option<usize>> = vec![None; n];
        for (k, &pos) in positions.iter().enumerate() {
            slots[pos] = Some(facts[k]);
        }
        let first = positions.iter().min().copied();
        let texts: Vec<String> = slots
            .iter()
            .enumerate()
            .map(|(i, slot)| match slot {
                Some(f) => self.feature_sentence(rng, if Some(i) == first { category } else { "" }, *f),
                None => self.background_sentence(rng),
            })
            .collect();
        let case = Case::from_texts(case_id, texts).expect("generated sentences are valid");
        (case, positions)
    }
}

fn feature_count(rng: &mut ChaCha8Rng, rate: f64, n: usize, min: usize) -> usize {
    let x = rate * n as f64;
    let mut k = x.floor() as usize;
    if rng.gen::<f64>() < x - x.floor() {
        k += 1;
    }
    k.clamp(min.min(n), n)
}

/// Generates the corpus described by `spec`. Deterministic in `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<CasePair>> {
    spec.validate()?;
    let vocab = Vocab { spec, facts: spec.facts(), fillers: spec.fillers() };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels: Vec<MatchLabel> = (0..spec.n_pairs).map(|i| MatchLabel::ALL[i % 3]).collect();
    labels.shuffle(&mut rng);

    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for (i, &label) in labels.iter().enumerate() {
        let pair_id = format!("p{i:04}");
        let n_a = rng.gen_range(spec.min_sentences..=spec.max_sentences);
        let n_b = rng.gen_range(spec.min_sentences..=spec.max_sentences);
        let min_features = if label == MatchLabel::PartialMatch { 2 } else { 1 };
        let f = feature_count(&mut rng, spec.feature_rate, n_a, min_features)
            .min(feature_count(&mut rng, spec.feature_rate, n_b, min_features));
        let (f_a, f_b) = (f, f);

        let mut fact_ids: Vec<usize> = (0..spec.n_facts).collect();
        fact_ids.shuffle(&mut rng);
        let facts_a: Vec<usize> = fact_ids[..f_a].to_vec();
        let facts_b: Vec<usize> = match label {
            MatchLabel::Match => {
                let mut f = facts_a.clone();
                f.shuffle(&mut rng);
                f
            }
            MatchLabel::PartialMatch => {
                let shared = f_a.min(f_b).div_ceil(2);
                let mut f: Vec<usize> = facts_a.choose_multiple(&mut rng, shared).copied().collect();
                f.extend_from_slice(&fact_ids[f_a..f_a + f_b - shared]);
                f.shuffle(&mut rng);
                f
            }
            MatchLabel::NotMatch => fact_ids[f_a..f_a + f_b].to_vec(),
        };

        let category_a = rng.gen_range(0..spec.categories.len());
        let same_category = match label {
            MatchLabel::NotMatch => rng.gen::<f64>() < spec.decoy_rate,
            _ => true,
        };
        let category_b = if same_category {
            category_a
        } else {
            let k = rng.gen_range(1..spec.categories.len());
            (category_a + k) % spec.categories.len()
        };

        let (case_a, pos_a) = vocab.case(&mut rng, format!("{pair_id}-a"), n_a, &spec.categories[category_a], &facts_a);
        let (case_b, pos_b) = vocab.case(&mut rng, format!("{pair_id}-b"), n_b, &spec.categories[category_b], &facts_b);

        let mut gold_aligned = BTreeSet::new();
        for (ka, fa) in facts_a.iter().enumerate() {
            for (kb, fb) in facts_b.iter().enumerate() {
                if fa == fb {
                    gold_aligned.insert((pos_a[ka], pos_b[kb]));
                }
            }
        }
        let pair = CasePair {
            pair_id,
            case_a,
            case_b,
            match_label: label,
            gold_features_a: pos_a.into_iter().collect(),
            gold_features_b: pos_b.into_iter().collect(),
            gold_aligned,
        };
        pair.validate()?;
        pairs.push(pair);
    }
    Ok(pairs)
}
