use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CasePair, MatchLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_pair_ids: Vec<String>,
    pub test_pair_ids: Vec<String>,
}

/// Label-stratified k-fold split.
///
/// Pairs are shuffled within each label class (classes visited in label
/// order, one seeded RNG) and dealt round-robin into folds. The dealing
/// position carries over from one class to the next, so fold sizes differ
/// by at most one as well as per-label counts.
pub fn stratified_kfold(pairs: &[CasePair], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold split needs k >= 2, got {k}")));
    }
    let mut by_label: [Vec<usize>; 3] = Default::default();
    for (i, pair) in pairs.iter().enumerate() {
        by_label[pair.match_label.index()].push(i);
    }
    for label in MatchLabel::ALL {
        let count = by_label[label.index()].len();
        if count < k {
            return Err(Error::Config(format!(
                "label {label} has {count} pair(s), fewer than k = {k}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; pairs.len()];
    let mut cursor = 0usize;
    for members in by_label.iter_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = cursor % k;
            cursor += 1;
        }
    }

    Ok((0..k)
        .map(|fold_id| {
            let (test, train): (Vec<_>, Vec<_>) =
                pairs.iter().zip(&fold_of).partition(|(_, &f)| f == fold_id);
            FoldSplit {
                fold_id,
                train_pair_ids: train.into_iter().map(|(p, _)| p.pair_id.clone()).collect(),
                test_pair_ids: test.into_iter().map(|(p, _)| p.pair_id.clone()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use proptest::prelude::*;

    use super::*;
    use crate::corpus::fixtures::pair;

    fn labelled(labels: &[MatchLabel]) -> Vec<CasePair> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let aligned: &[(usize, usize)] = if label == MatchLabel::NotMatch { &[] } else { &[(0, 0)] };
                pair(&format!("p{i}"), label, 2, 2, &[0], &[0], aligned)
            })
            .collect()
    }

    fn label_counts(pairs: &[CasePair], ids: &[String]) -> [usize; 3] {
        let by_id: BTreeMap<&str, MatchLabel> =
            pairs.iter().map(|p| (p.pair_id.as_str(), p.match_label)).collect();
        let mut counts = [0; 3];
        for id in ids {
            counts[by_id[id.as_str()].index()] += 1;
        }
        counts
    }

    #[test]
    fn nine_pairs_three_folds_one_of_each() {
        let labels: Vec<_> = MatchLabel::ALL.iter().flat_map(|&l| [l; 3]).collect();
        let pairs = labelled(&labels);
        let folds = stratified_kfold(&pairs, 3, 7).unwrap();
        for fold in &folds {
            assert_eq!(label_counts(&pairs, &fold.test_pair_ids), [1, 1, 1]);
            assert_eq!(fold.train_pair_ids.len(), 6);
        }
    }

    #[test]
    fn k_below_two_is_rejected() {
        let pairs = labelled(&[MatchLabel::NotMatch; 3]);
        assert!(matches!(stratified_kfold(&pairs, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn thin_class_is_rejected() {
        let mut labels = vec![MatchLabel::NotMatch; 5];
        labels.extend([MatchLabel::PartialMatch; 5]);
        labels.extend([MatchLabel::Match; 2]);
        let pairs = labelled(&labels);
        assert!(matches!(stratified_kfold(&pairs, 3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_split() {
        let labels: Vec<_> = (0..40).map(|i| MatchLabel::ALL[i % 3]).collect();
        let pairs = labelled(&labels);
        assert_eq!(stratified_kfold(&pairs, 4, 11).unwrap(), stratified_kfold(&pairs, 4, 11).unwrap());
        assert_ne!(stratified_kfold(&pairs, 4, 11).unwrap(), stratified_kfold(&pairs, 4, 12).unwrap());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stay_balanced(
            counts in (2usize..20, 2usize..20, 2usize..20),
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            prop_assume!(counts.0 >= k && counts.1 >= k && counts.2 >= k);
            let mut labels = vec![MatchLabel::NotMatch; counts.0];
            labels.extend(vec![MatchLabel::PartialMatch; counts.1]);
            labels.extend(vec![MatchLabel::Match; counts.2]);
            let pairs = labelled(&labels);
            let n = pairs.len();
            let folds = stratified_kfold(&pairs, k, seed).unwrap();

            let mut all_test = BTreeSet::new();
            for fold in &folds {
                let test: BTreeSet<_> = fold.test_pair_ids.iter().cloned().collect();
                let train: BTreeSet<_> = fold.train_pair_ids.iter().cloned().collect();
                prop_assert!(test.is_disjoint(&train));
                prop_assert_eq!(test.len() + train.len(), n);
                prop_assert!(test.len() == n / k || test.len() == n.div_ceil(k));
                let got = label_counts(&pairs, &fold.test_pair_ids);
                let totals = [counts.0, counts.1, counts.2];
                for c in 0..3 {
                    let ideal = totals[c] as f64 / k as f64;
                    prop_assert!((got[c] as f64 - ideal).abs() <= 1.0);
                }
                for id in test {
                    prop_assert!(all_test.insert(id));
                }
            }
            prop_assert_eq!(all_test.len(), n);
        }
    }
}
