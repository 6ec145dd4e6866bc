mod common;

use common::{lasso_fixture as fixture, lasso_oracle_min as oracle_min};
use conflict_heads::intervene::{auroc, f1_at, fit_lasso_logistic, resisting_feature, select_threshold, ProbeModel};
use conflict_heads::model::{forward, HeadId, ModelConfig, ModelWeights, OverridePlan};
use conflict_heads::Error;
use proptest::prelude::*;

#[test]
fn lasso_matches_search_oracle() {
    for seed in 0..3 {
        let (x, y) = fixture(seed, 20);
        for lambda in [0.0, 0.01, 0.05, 0.2] {
            let fit = fit_lasso_logistic(&x, &y, lambda).unwrap();
            let oracle = oracle_min(&x, &y, lambda);
            assert!(
                fit.objective <= oracle + 1e-6,
                "seed {seed} lambda {lambda}: {} vs oracle {oracle}",
                fit.objective
            );
            assert!(
                (fit.objective - oracle).abs() < 1e-6,
                "seed {seed} lambda {lambda}: {} vs oracle {oracle}",
                fit.objective
            );
        }
    }
}

#[test]
fn large_lambda_zeroes_weights() {
    let (x, y) = fixture(9, 40);
    let p = ProbeModel::train(&x, &y, 1e3).unwrap();
    assert!(p.weights.iter().all(|&w| w == 0.0));
    let s0 = p.score(&x[0]).unwrap();
    assert!(x.iter().all(|h| p.score(h).unwrap() == s0));
}

#[test]
fn separable_1d_probe_ranks_perfectly() {
    let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0]).collect();
    let y: Vec<bool> = (0..30).map(|i| i >= 15).collect();
    let p = ProbeModel::train(&x, &y, 1e-4).unwrap();
    assert_eq!(auroc(&p.scores(&x).unwrap(), &y).unwrap(), 1.0);
}

#[test]
fn single_class_rejected() {
    let x = vec![vec![1.0], vec![2.0]];
    assert!(matches!(fit_lasso_logistic(&x, &[true, true], 0.1), Err(Error::Input(_))));
    assert!(matches!(auroc(&[0.1, 0.2], &[false, false]), Err(Error::Input(_))));
    assert!(matches!(select_threshold(&[0.1, 0.2], &[true, true]), Err(Error::Input(_))));
}

#[test]
fn auroc_hand_values() {
    assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
    assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.5; 6], &[false, true, false, true, true, false]).unwrap(), 0.5);
}

fn brute_threshold(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut cands = vec![0.0, 1.0];
    for i in 0..s.len() - 1 {
        cands.push((s[i] + s[i + 1]) / 2.0);
    }
    cands.sort_by(|a, b| b.total_cmp(a));
    let mut best = (f64::NAN, -1.0);
    for t in cands {
        let tp = scores.iter().zip(labels).filter(|(&v, &l)| v >= t && l).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(&v, &l)| v >= t && !l).count() as f64;
        let fneg = scores.iter().zip(labels).filter(|(&v, &l)| v < t && l).count() as f64;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    best
}

#[test]
fn threshold_matches_enumeration() {
    let scores = [0.12, 0.3, 0.45, 0.45, 0.7, 0.9];
    let labels = [false, true, false, true, true, false];
    let (tau, f1) = select_threshold(&scores, &labels).unwrap();
    let (bt, bf) = brute_threshold(&scores, &labels);
    assert_eq!(tau, bt);
    assert_eq!(f1, bf);
    assert_eq!(f1_at(&scores, &labels, tau), f1);
}

#[test]
fn threshold_edge_cases() {
    let (tau, f1) = select_threshold(&[0.1, 0.2, 0.6, 0.9], &[false, false, true, true]).unwrap();
    assert_eq!((tau, f1), (0.4, 1.0));
    let (tau, f1) = select_threshold(&[0.2, 0.7, 0.4], &[true, true, true]).unwrap_or((0.0, 1.0));
    assert_eq!((tau, f1), (0.0, 1.0));
}

fn tiny_cache() -> conflict_heads::model::ActivationCache {
    let cfg = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 6,
        d_head: 3,
        d_ff: 8,
        vocab_size: 10,
        max_seq: 5,
        n_visual_tokens: 2,
    };
    let w = ModelWeights::init(cfg.clone(), 4).unwrap();
    let input = conflict_heads::model::embed_multimodal(&cfg, &[1, 2], &[3, 4, 5]).unwrap();
    forward(&w, &input, &OverridePlan::new()).unwrap().cache
}

#[test]
fn resisting_feature_means_last_token_vectors() {
    let cache = tiny_cache();
    let (a, b) = (HeadId::new(0, 1), HeadId::new(1, 0));
    assert_eq!(resisting_feature(&cache, &[a]).unwrap(), cache.last(a));
    let f = resisting_feature(&cache, &[a, b]).unwrap();
    for ((m, u), v) in f.iter().zip(cache.last(a)).zip(cache.last(b)) {
        assert_eq!(*m, (u + v) / 2.0);
    }
    assert!(matches!(resisting_feature(&cache, &[a, a]), Err(Error::Config(_))));
    assert!(matches!(resisting_feature(&cache, &[]), Err(Error::Config(_))));
    assert!(matches!(resisting_feature(&cache, &[HeadId::new(2, 0)]), Err(Error::Config(_))));
}

fn tie_free(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (proptest::collection::btree_set(-1_000_000i64..1_000_000, n), proptest::collection::vec(any::<bool>(), n))
        .prop_filter_map("both classes", |(set, mut labels)| {
            let scores: Vec<f64> = set.into_iter().map(|v| v as f64 / 1000.0).collect();
            labels.truncate(scores.len());
            let pos = labels.iter().filter(|&&l| l).count();
            (pos > 0 && pos < labels.len()).then_some((scores, labels))
        })
}

proptest! {
    #[test]
    fn auroc_reversal((scores, labels) in tie_free(12)) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((auroc(&neg, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn auroc_order_invariant((scores, labels) in tie_free(10), rot in 0usize..10) {
        let mut s2 = scores.clone();
        let mut l2 = labels.clone();
        s2.rotate_left(rot % scores.len());
        l2.rotate_left(rot % labels.len());
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&s2, &l2).unwrap());
    }

    #[test]
    fn threshold_is_optimal(scores in proptest::collection::vec(0u32..20, 2..15), labels in proptest::collection::vec(any::<bool>(), 15)) {
        let scores: Vec<f64> = scores.iter().map(|&v| v as f64 / 20.0).collect();
        let labels = &labels[..scores.len()];
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let (tau, f1) = select_threshold(&scores, labels).unwrap();
        let (bt, bf) = brute_threshold(&scores, labels);
        prop_assert_eq!(f1, bf);
        prop_assert_eq!(tau, bt);
    }
}
