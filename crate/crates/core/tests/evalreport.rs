use conflict_heads::evalreport::{
    clean_accuracy, cohen_kappa, emit_report, evaluate_condition, hallucination_rate, judge, sensitivity_sweep,
    split_half_overlap, top_k_overlap, ConditionResult, JudgedOutcome, MaciSummary, OverlapResult, PlotRow,
    ProbeSummary, Report, ReportFormat, SweepInputs, Verdict, VerdictCounts,
};
use conflict_heads::intervene::{AblationCondition, ConditionKind};
use conflict_heads::model::{HeadId, ModelConfig, ModelWeights, PositionScope};
use conflict_heads::patching::{asymmetry_stats, ImportanceMap};
use conflict_heads::synth::{generate, ConflictSample, TypeMix, Vocab};
use conflict_heads::train::reference_model_config;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn draw(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn counts(h: usize, f: usize, o: usize) -> VerdictCounts {
    VerdictCounts { hallucinated: h, factual: f, other: o }
}

fn condition(kind: ConditionKind, heads: Vec<HeadId>, seed: Option<u64>, h: usize) -> ConditionResult {
    let label = match seed {
        Some(s) => format!("{kind}:{s}"),
        None => kind.to_string(),
    };
    ConditionResult {
        label,
        kind,
        heads,
        seed,
        conflict: counts(h, 300 - h, 0),
        clean: counts(1, 298, 1),
        hall_rate: h as f64 / 300.0,
        clean_acc: 298.0 / 300.0,
    }
}

fn sample_report() -> Report {
    let mut r = Report::new("0123456789abcdef");
    r.seeds.insert("data".into(), 7);
    r.seeds.insert("train".into(), 1);
    r.hashes.insert("checkpoint".into(), "ab12".into());
    r.eval_split = "test".into();
    r.conditions = vec![
        condition(ConditionKind::Base, vec![], None, 97),
        condition(ConditionKind::Drive, vec![HeadId::new(0, 1), HeadId::new(2, 3)], None, 61),
        condition(ConditionKind::Resist, vec![HeadId::new(3, 0)], None, 120),
        condition(ConditionKind::Joint, vec![HeadId::new(0, 1), HeadId::new(3, 0)], None, 88),
        condition(ConditionKind::Random, vec![HeadId::new(1, 1), HeadId::new(2, 0)], Some(0), 99),
    ];
    r.random_mean_hall_rate = Some(1.0 / 3.0);
    r.probe = Some(ProbeSummary {
        lambda: 0.003,
        tau: 0.412_345_678_901_234_5,
        train_auroc: 0.9,
        val_auroc: 0.875,
        val_f1: 2.0 / 3.0,
        nonzero_weights: 5,
        driving_val_auroc: None,
    });
    r.maci = Some(MaciSummary {
        hall_rate: 0.2,
        clean_acc: 0.99,
        fire_rate_conflict: 0.7,
        fire_rate_clean: 0.1,
        conflict: counts(60, 240, 0),
        clean: counts(0, 297, 3),
    });
    r.overlaps = vec![OverlapResult { seed: 1, k: 10, driving: 0.9, resisting: 0.8 }];
    r.plots = vec![
        PlotRow { series: "train_loss".into(), x: 200.0, y: 1e-17, seed: None },
        PlotRow { series: "sweep_k_plus_hall_rate".into(), x: 0.0, y: 0.1 + 0.2, seed: Some(3) },
    ];
    r
}

#[test]
fn kappa_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<Verdict> = (0..500)
        .map(|_| [Verdict::Hallucinated, Verdict::Factual, Verdict::Other][draw(&mut rng, &[0.3, 0.6, 0.1])])
        .collect();
    assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
    let mut b = a.clone();
    b.shuffle(&mut rng);
    assert!(cohen_kappa(&a, &b).unwrap() < 1.0);
    assert!(cohen_kappa(&a, &b[..10]).is_err());
    assert!(cohen_kappa::<u8>(&[], &[]).is_err());
}

#[test]
fn judge_against_itself_has_unit_kappa() {
    let samples = generate(&Vocab::default(), 4, 300, TypeMix([0.5, 0.25, 0.25])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let answers: Vec<u32> = samples
        .iter()
        .map(|s| match rng.random_range(0..3) {
            0 => s.y_h,
            1 => s.y_f,
            _ => s.y_h.max(s.y_f) + 1,
        })
        .collect();
    let first: Vec<Verdict> = samples.iter().zip(&answers).map(|(s, &a)| judge(s, a)).collect();
    let second: Vec<Verdict> = samples.iter().zip(&answers).map(|(s, &a)| judge(s, a)).collect();
    assert_eq!(cohen_kappa(&first, &second).unwrap(), 1.0);
}

#[test]
fn document_lists_every_condition() {
    let doc = sample_report().to_document().unwrap();
    for kind in ConditionKind::ALL {
        assert!(doc.lines().any(|l| l.starts_with(kind.as_str())), "{kind} missing");
    }
    assert!(doc.contains("random mean hall rate: 0.3333"));
}

#[test]
fn emission_is_byte_stable_and_rows_round_trip() {
    let report = sample_report();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for format in [ReportFormat::Rows, ReportFormat::Document] {
        let fa = emit_report(&report, format, a.path()).unwrap();
        let fb = emit_report(&report, format, b.path()).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }
    let text = std::fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert_eq!(Report::from_rows(&text).unwrap(), report);
}

#[test]
fn invalid_reports_are_rejected() {
    let mut r = sample_report();
    r.conditions[0].hall_rate = 1.5;
    assert!(r.to_rows().is_err());
    let mut r = sample_report();
    r.conditions.clear();
    assert!(r.to_document().is_err());
    assert!(Report::from_rows("path,type,value\n").is_err());
}

#[test]
fn merge_replaces_by_label_and_rejects_other_configs() {
    let mut base = sample_report();
    let mut update = Report::new("0123456789abcdef");
    update.conditions = vec![condition(ConditionKind::Drive, vec![HeadId::new(1, 0)], None, 10)];
    update.seeds.insert("random_ablation_0".into(), 0);
    base.merge(update).unwrap();
    assert_eq!(base.conditions.len(), 5);
    assert_eq!(base.condition("drive").unwrap().heads, vec![HeadId::new(1, 0)]);
    assert_eq!(base.seeds["random_ablation_0"], 0);
    assert!(base.probe.is_some());

    let other = Report::new("fedcba9876543210");
    assert!(base.merge(other).is_err());
}

#[test]
fn duplicated_halves_overlap_fully() {
    let vocab = Vocab::default();
    let w = ModelWeights::init(reference_model_config(&vocab), 2).unwrap();
    let one = generate(&vocab, 8, 1, TypeMix::OBJECT_ONLY).unwrap().remove(0);
    let proto: Vec<ConflictSample> = (0..6).map(|i| ConflictSample { id: 100 + i, ..one.clone() }).collect();
    for seed in [1, 2, 3] {
        let o = split_half_overlap(&w, &vocab, &proto, 10, seed, PositionScope::LastToken).unwrap();
        assert_eq!((o.driving, o.resisting), (1.0, 1.0));
    }
    assert!(split_half_overlap(&w, &vocab, &proto[..1], 10, 1, PositionScope::LastToken).is_err());
}

#[test]
fn sweep_at_zero_driving_heads_matches_base() {
    let vocab = Vocab::default();
    let w = ModelWeights::init(reference_model_config(&vocab), 6).unwrap();
    let data = generate(&vocab, 21, 60, TypeMix::OBJECT_ONLY).unwrap();
    let (probe_set, validation) = data.split_at(30);
    let cfg = w.config().clone();
    let scores: Vec<f64> = (0..cfg.total_heads()).map(|i| i as f64 - 7.5).collect();
    let imp = ImportanceMap::from_scores(&cfg, scores, 1).unwrap();
    let rows = sensitivity_sweep(
        &w,
        &vocab,
        &imp,
        &SweepInputs { k_plus: &[0, 2], k_minus: &[1], lambda: 0.01, train_probe: probe_set, validation },
    )
    .unwrap();
    let base = evaluate_condition(&w, &vocab, validation, &AblationCondition::base()).unwrap();
    let at = |series: &str, x: f64| rows.iter().find(|r| r.series == series && r.x == x).unwrap().y;
    assert_eq!(at("sweep_k_plus_hall_rate", 0.0), base.hall_rate);
    assert_eq!(at("sweep_k_plus_clean_acc", 0.0), base.clean_acc);
    assert!(rows.iter().any(|r| r.series == "sweep_k_minus_val_auroc" && r.x == 1.0));
    assert!(asymmetry_stats(&imp, 2).is_ok());
}

fn small_map(n: usize, scores: Vec<f64>) -> ImportanceMap {
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: n,
        d_model: 4,
        d_head: 2,
        d_ff: 4,
        vocab_size: 5,
        max_seq: 4,
        n_visual_tokens: 1,
    };
    ImportanceMap::from_scores(&cfg, scores, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn kappa_recovers_agreement_rate(r in 0.0..1.0f64, seed in any::<u64>(), w in prop::collection::vec(0.1..1.0f64, 3)) {
        // b copies a with probability r and otherwise draws independently
        // from the same marginal, so kappa equals r in expectation.
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<usize> = (0..10_000).map(|_| draw(&mut rng, &p)).collect();
        let b: Vec<usize> = a.iter().map(|&x| if rng.random::<f64>() < r { x } else { draw(&mut rng, &p) }).collect();
        let k = cohen_kappa(&a, &b).unwrap();
        prop_assert!((k - r).abs() <= 0.05, "kappa {k} vs {r}");
    }

    #[test]
    fn rates_match_tallies(verdicts in prop::collection::vec(0u8..3, 1..200)) {
        let samples = generate(&Vocab::default(), 3, verdicts.len(), TypeMix::OBJECT_ONLY).unwrap();
        let outcomes: Vec<JudgedOutcome> = samples
            .iter()
            .zip(&verdicts)
            .map(|(s, v)| {
                let answer = match v { 0 => s.y_h, 1 => s.y_f, _ => s.y_h.max(s.y_f) + 1 };
                JudgedOutcome::new(s, "base", answer)
            })
            .collect();
        let n = verdicts.len() as f64;
        let h = verdicts.iter().filter(|v| **v == 0).count();
        let f = verdicts.iter().filter(|v| **v == 1).count();
        prop_assert_eq!(hallucination_rate(&outcomes).unwrap(), h as f64 / n);
        prop_assert_eq!(clean_accuracy(&outcomes).unwrap(), f as f64 / n);
        let c = VerdictCounts::tally(&outcomes);
        prop_assert_eq!((c.hallucinated, c.factual, c.other), (h, f, verdicts.len() - h - f));
    }

    #[test]
    fn rows_round_trip_arbitrary_floats(
        hall in prop::collection::vec(0.0..=1.0f64, 5),
        ys in prop::collection::vec(-1e6..1e6f64, 0..8),
    ) {
        let mut r = sample_report();
        for (c, h) in r.conditions.iter_mut().zip(&hall) {
            c.hall_rate = *h;
        }
        r.plots = ys.iter().enumerate().map(|(i, y)| PlotRow { series: "s,q\"x".into(), x: i as f64, y: *y, seed: None }).collect();
        prop_assert_eq!(Report::from_rows(&r.to_rows().unwrap()).unwrap(), r);
    }

    #[test]
    fn overlap_is_symmetric_fraction(scores_a in prop::collection::vec(-1.0..1.0f64, 8), scores_b in prop::collection::vec(-1.0..1.0f64, 8), k in 0usize..8) {
        let (a, b) = (small_map(8, scores_a), small_map(8, scores_b));
        let heads_a: Vec<HeadId> = a.iter().filter(|p| p.1 > 0.0).map(|p| p.0).take(k).collect();
        let heads_b: Vec<HeadId> = b.iter().filter(|p| p.1 > 0.0).map(|p| p.0).take(k).collect();
        let o = top_k_overlap(&heads_a, &heads_b);
        prop_assert_eq!(o, top_k_overlap(&heads_b, &heads_a));
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert_eq!(top_k_overlap(&heads_a, &heads_a), 1.0);
    }
}
