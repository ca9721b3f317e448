use milkit::bagdata::collate;
use milkit::models::{build_model, ModelConfig};
use milkit::testing::{random_bags, small_model_configs};
use milkit::training::{
    auroc, compute_metrics, mean_std, run_benchmark, train, Adam, BenchmarkRow, CheckpointPolicy,
    Confusion, Metrics, RunConfig, SplitSet, CSV_HEADER,
};
use milkit::{Bag, MilError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((0u8..12, 0u8..2), 2..40)
        .prop_filter("both classes", |v| {
            v.iter().any(|p| p.1 == 0) && v.iter().any(|p| p.1 == 1)
        })
        .prop_map(|v| v.into_iter().map(|(s, y)| (s as f64 / 11.0, y)).unzip())
}

proptest! {
    #[test]
    fn auroc_matches_pair_counting((scores, labels) in scored_labels()) {
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((a - pairwise_auroc(&scores, &labels)).abs() < 1e-9);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc(&negated, &labels).unwrap() - (1.0 - a)).abs() < 1e-9);
        let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        prop_assert!((auroc(&scores, &flipped).unwrap() - (1.0 - a)).abs() < 1e-9);
    }

    #[test]
    fn metrics_ignore_monotone_rescaling((probs, labels) in scored_labels()) {
        // strictly increasing on [0, 1] with 0.5 fixed
        let warped: Vec<f64> = probs.iter().map(|p| 0.5 + 4.0 * (p - 0.5).powi(3)).collect();
        let a = compute_metrics(&probs, &labels, 0.0).unwrap();
        let b = compute_metrics(&warped, &labels, 0.0).unwrap();
        prop_assert_eq!(a.acc, b.acc);
        prop_assert_eq!(a.f1, b.f1);
        prop_assert!((a.auroc - b.auroc).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_agree_with_definitions((probs, labels) in scored_labels()) {
        let c = Confusion::from_probs(&probs, &labels);
        prop_assert_eq!(c.total(), labels.len());
        let correct = probs.iter().zip(&labels).filter(|(p, y)| (**p >= 0.5) == (**y == 1)).count();
        prop_assert!((c.accuracy() - correct as f64 / labels.len() as f64).abs() < 1e-12);
        let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
        let f1 = if tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        prop_assert!((c.f1() - f1).abs() < 1e-12);
    }

    #[test]
    fn population_std_matches_definition(values in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        let (m, s) = mean_std(&values);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!((m - mean).abs() < 1e-12);
        prop_assert!((s - var.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn hand_computed_metrics() {
    let probs = [0.9, 0.8, 0.4, 0.6, 0.2, 0.5];
    let labels = [1, 1, 1, 0, 0, 0];
    let m = compute_metrics(&probs, &labels, 0.0).unwrap();
    // predictions 1 1 0 1 0 1: tp 2, fn 1, fp 2, tn 1
    assert!((m.acc - 0.5).abs() < 1e-12);
    assert!((m.f1 - 4.0 / 7.0).abs() < 1e-12);
    // positives beat 0.6: 2, beat 0.2: 3, beat 0.5: 2 -> 7 of 9
    assert!((m.auroc - 7.0 / 9.0).abs() < 1e-12);

    let none = Confusion::from_probs(&[0.1, 0.2], &[0, 0]);
    assert_eq!(none.f1(), 0.0);
    assert!(matches!(
        auroc(&[0.1, 0.9], &[1, 1]),
        Err(MilError::AurocUndefined)
    ));
}

fn data(seed: u64, count: usize) -> Vec<Bag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_bags(&mut rng, count, 3, 6, true)
}

fn small(kind: &str) -> ModelConfig {
    small_model_configs(3)
        .into_iter()
        .find(|c| c.model_name == kind)
        .unwrap()
}

#[test]
fn one_small_step_lowers_the_loss() {
    let batch = collate(&data(1, 8)).unwrap();
    for cfg in small_model_configs(3) {
        let mut m = build_model(&cfg, 2).unwrap();
        let (before, grads) = m.loss_and_grads(&batch).unwrap();
        let mut opt = Adam::new(m.params(), 1e-5);
        opt.step(m.params_mut(), &grads);
        let after = m.compute_loss(&batch).unwrap().0;
        assert!(after < before, "{}: {before} -> {after}", cfg.model_name);
    }
}

#[test]
fn training_is_reproducible() {
    let (tr, va) = (data(3, 12), data(4, 6));
    let cfg = RunConfig {
        epochs: 3,
        batch_size: 2,
        learning_rate: 1e-2,
        seed: 5,
        ..RunConfig::default()
    };
    for kind in ["ABMIL", "SmTransformerABMIL"] {
        let run = || {
            let mut m = build_model(&small(kind), cfg.seed).unwrap();
            let h = train(&mut *m, &tr, &va, &cfg).unwrap();
            (m.params().clone(), h)
        };
        let (p1, h1) = run();
        let (p2, h2) = run();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
    }
}

#[test]
fn step_count_and_checkpoint_selection() {
    let (tr, va) = (data(5, 10), data(6, 8));
    let cfg = RunConfig {
        epochs: 4,
        batch_size: 4,
        learning_rate: 5e-2,
        ..RunConfig::default()
    };
    let mut m = build_model(&small("ABMIL"), 0).unwrap();
    let h = train(&mut *m, &tr, &va, &cfg).unwrap();
    assert!(h.epochs.iter().all(|e| e.steps == 3));
    assert_eq!(h.total_steps, 12);

    let aurocs: Vec<f64> = h.epochs.iter().map(|e| e.val.unwrap().auroc).collect();
    let best = aurocs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(
        h.selected_epoch,
        aurocs.iter().position(|&a| a == best).unwrap()
    );
    assert_eq!(milkit::evaluate(&*m, &va).unwrap().auroc, best);

    let last = RunConfig {
        checkpoint_policy: CheckpointPolicy::Last,
        ..cfg.clone()
    };
    let mut m = build_model(&small("ABMIL"), 0).unwrap();
    assert_eq!(train(&mut *m, &tr, &[], &last).unwrap().selected_epoch, 3);
    assert!(train(&mut *m, &tr, &[], &cfg).is_err());
}

#[test]
fn benchmark_rows_average_their_runs() {
    let bags = data(7, 30);
    let ids: Vec<String> = bags.iter().map(|b| b.bag_id().to_string()).collect();
    let labels: Vec<u8> = bags.iter().map(Bag::label).collect();
    let splits = SplitSet::stratified(&ids, &labels, 3, 0.25, 0.2, 1).unwrap();
    let cfg = RunConfig {
        epochs: 2,
        learning_rate: 1e-2,
        seed: 10,
        ..RunConfig::default()
    };
    let models = [small("MeanPoolMIL"), small("ABMIL")];
    let seq = run_benchmark(&models, &bags, &splits, &cfg, false).unwrap();
    let par = run_benchmark(&models, &bags, &splits, &cfg, true).unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq.evaluated_on, "test");
    assert_eq!(seq.to_csv().lines().next().unwrap(), CSV_HEADER);
    assert_eq!(seq.to_csv().lines().count(), 3);

    for row in &seq.rows {
        let runs: Vec<&Metrics> = seq
            .runs
            .iter()
            .filter(|r| r.model == row.model)
            .map(|r| &r.metrics)
            .collect();
        assert_eq!(runs.len(), 3);
        let accs: Vec<f64> = runs.iter().map(|m| m.acc).collect();
        let mean = accs.iter().sum::<f64>() / 3.0;
        assert!((row.acc.mean - mean).abs() < 1e-12);
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 3.0;
        assert!((row.acc.std - var.sqrt()).abs() < 1e-12);
    }
    let seeds: Vec<u64> = seq.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, [10, 11, 12, 10, 11, 12]);

    let same = Metrics {
        acc: 0.75,
        auroc: 0.8,
        f1: 0.7,
        loss: 0.3,
    };
    let row = BenchmarkRow::from_runs("X", &[&same, &same, &same]);
    assert_eq!((row.acc.std, row.auroc.std, row.f1.std), (0.0, 0.0, 0.0));
}

#[test]
fn splits_are_stratified_disjoint_and_persist() {
    let ids: Vec<String> = (0..40).map(|i| format!("b{i:02}")).collect();
    let labels: Vec<u8> = (0..40).map(|i| (i % 4 == 0) as u8).collect();
    let s = SplitSet::stratified(&ids, &labels, 4, 0.2, 0.25, 3).unwrap();
    let pos = |v: &[String]| {
        v.iter()
            .filter(|id| labels[id[1..].parse::<usize>().unwrap()] == 1)
            .count()
    };
    // per class: round(0.25 * 30) + round(0.25 * 10)
    assert_eq!((s.test.len(), pos(&s.test)), (8 + 3, 3));
    for split in &s.splits {
        assert_eq!(split.train.len() + split.val.len() + s.test.len(), 40);
        assert!(split
            .val
            .iter()
            .all(|id| !split.train.contains(id) && !s.test.contains(id)));
        assert!(split.train.windows(2).all(|w| w[0] < w[1]));
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("splits.json");
    s.save(&p).unwrap();
    assert_eq!(SplitSet::load(&p).unwrap(), s);
}
