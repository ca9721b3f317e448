use milkit::bagdata::{collate, Bag};
use milkit::models::{
    build_model, load_checkpoint, save_checkpoint, InstanceScoreKind, ModelConfig, SmConfig,
};
use milkit::testing::{
    batch_equivalence_gap, mask_soundness_gap, model_grad_check, permutation_gap, random_bags,
    small_model_configs,
};
use milkit::{MilError, MilModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 3;

fn models(seed: u64) -> Vec<Box<dyn MilModel>> {
    small_model_configs(D)
        .iter()
        .map(|c| build_model(c, seed).unwrap())
        .collect()
}

#[test]
fn padded_positions_never_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..15 {
        let bags = random_bags(&mut rng, 4, D, 7, true);
        let batch = collate(&bags).unwrap();
        for m in models(case) {
            let gap = mask_soundness_gap(&*m, &batch, &mut rng).unwrap();
            assert!(gap <= 1e-5, "{}: {gap}", m.name());
        }
    }
}

#[test]
fn padded_batch_matches_per_bag_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..10 {
        let bags = random_bags(&mut rng, 5, D, 8, true);
        for m in models(case) {
            let gap = batch_equivalence_gap(&*m, &bags).unwrap();
            assert!(gap <= 1e-5, "{}: {gap}", m.name());
        }
    }
}

#[test]
fn logits_are_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..10 {
        let bags = random_bags(&mut rng, 3, D, 9, true);
        for m in models(case) {
            for bag in &bags {
                let gap = permutation_gap(&*m, bag, &mut rng).unwrap();
                assert!(gap <= 1e-6, "{}: {gap}", m.name());
            }
        }
    }
}

#[test]
fn evaluation_is_deterministic_and_scores_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bags = random_bags(&mut rng, 6, D, 8, true);
    let batch = collate(&bags).unwrap();
    for m in models(0) {
        let (l1, s1) = m.forward_with_attention(&batch).unwrap();
        let (l2, s2) = m.forward_with_attention(&batch).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(s1, s2);
        let (loss, aux) = m.compute_loss(&batch).unwrap();
        assert!(loss.is_finite() && aux["BCE"] == loss);
        for (b, &n) in batch.sizes.iter().enumerate() {
            assert!(s1.row(b).iter().skip(n).all(|&v| v == 0.0));
            if m.instance_score_kind() == InstanceScoreKind::AttentionWeights {
                let total: f64 = s1.row(b).iter().take(n).sum();
                assert!((total - 1.0).abs() < 1e-6, "{}: {total}", m.name());
            }
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..3 {
        let bags = random_bags(&mut rng, 2, D, 6, true);
        let batch = collate(&bags).unwrap();
        for mut m in models(case) {
            let err = model_grad_check(&mut *m, &batch, 1e-4).unwrap();
            assert!(
                err.max_rel_err < 1e-3 && err.excluded * 20 <= err.total,
                "{}: {err:?}",
                m.name()
            );
        }
    }
}

#[test]
fn sm_with_zero_alpha_reduces_to_abmil() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bags = random_bags(&mut rng, 5, D, 8, true);
    let batch = collate(&bags).unwrap();
    let abmil = build_model(&ModelConfig::new("ABMIL", D), 13).unwrap();
    let mut c = ModelConfig::new("SmABMIL", D);
    c.sm = Some(SmConfig {
        alpha: 0.0,
        ..SmConfig::default()
    });
    let sm = build_model(&c, 13).unwrap();
    assert_eq!(abmil.params(), sm.params());
    let (a, b) = (abmil.forward(&batch).unwrap(), sm.forward(&batch).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-6));
}

#[test]
fn graph_models_reject_bags_without_adjacency() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bags = random_bags(&mut rng, 2, D, 5, false);
    let batch = collate(&bags).unwrap();
    for m in models(0) {
        let out = m.forward(&batch);
        if m.requires_adjacency() {
            let err = out.unwrap_err();
            assert!(matches!(err, MilError::MissingAdjacency(_)));
            assert!(err.to_string().contains(m.name()));
        } else {
            assert!(out.is_ok());
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bags = random_bags(&mut rng, 4, D, 6, true);
    let batch = collate(&bags).unwrap();
    for mut m in models(3) {
        let dir = tempfile::tempdir().unwrap();
        m.params_mut().round_to_f32();
        save_checkpoint(&*m, 3, dir.path()).unwrap();
        let (loaded, _) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.params(), m.params());
        assert_eq!(loaded.forward(&batch).unwrap(), m.forward(&batch).unwrap());
    }
}

#[test]
fn single_instance_bags_work_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bag: Bag = milkit::testing::random_bag(&mut rng, "one", 1, D, true);
    for m in models(rng.random()) {
        let (l, s) = m
            .predict(&collate(std::slice::from_ref(&bag)).unwrap())
            .unwrap();
        assert!(l[0] > 0.0 && l[0] < 1.0);
        if m.instance_score_kind() == InstanceScoreKind::AttentionWeights {
            assert!((s[[0, 0]] - 1.0).abs() < 1e-12);
        }
    }
}
