//! Library metrics against brute-force reimplementations and evaluation
//! invariants on random instances.

mod support;

use casematch_core::corpus::PredictionRecord;
use casematch_core::metrics::evaluate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{brute_fsa, brute_fsi, brute_macro_f1, random_instance};

proptest! {
    #[test]
    fn evaluate_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, golds) = random_instance(&mut rng, 5, 8);
        let report = evaluate(&preds, &golds).unwrap();
        let p: Vec<u8> = preds.iter().map(|r| r.pred_label.index() as u8).collect();
        let g: Vec<u8> = golds.iter().map(|r| r.match_label.index() as u8).collect();
        prop_assert!((report.f_sm - brute_macro_f1(&p, &g)).abs() <= 1e-12);
        prop_assert!((report.f_fsi - brute_fsi(&preds, &golds)).abs() <= 1e-12);
        prop_assert!((report.f_fsa - brute_fsa(&preds, &golds)).abs() <= 1e-12);
        prop_assert!((report.f_final - (0.5 * report.f_sm + 0.25 * (report.f_fsi + report.f_fsa))).abs() <= 1e-12);
        report.check().unwrap();
    }

    #[test]
    fn gold_scores_perfectly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, golds) = random_instance(&mut rng, 5, 8);
        let preds: Vec<PredictionRecord> = golds.iter().map(PredictionRecord::from_gold).collect();
        let report = evaluate(&preds, &golds).unwrap();
        prop_assert_eq!(report.f_fsi, 1.0);
        prop_assert_eq!(report.f_fsa, 1.0);
        let present = (0..3).filter(|&c| golds.iter().any(|g| g.match_label.index() == c)).count();
        prop_assert!((report.f_sm - present as f64 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn prediction_order_is_irrelevant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut preds, golds) = random_instance(&mut rng, 5, 8);
        let before = evaluate(&preds, &golds).unwrap();
        preds.reverse();
        let after = evaluate(&preds, &golds).unwrap();
        prop_assert_eq!(before, after);
    }
}

#[test]
fn mismatched_ids_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut preds, golds) = random_instance(&mut rng, 3, 4);
    preds[0].pair_id = "stray".into();
    let err = evaluate(&preds, &golds).unwrap_err().to_string();
    assert!(err.contains("stray"), "{err}");
}
