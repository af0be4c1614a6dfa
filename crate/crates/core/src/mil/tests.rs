use super::*;
use crate::nn::{gradient_check, AdamState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn det(len: usize, salt: f64, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|i| ((i as f64) * 0.37 + salt).sin() * scale)
        .collect()
}

fn random_bag(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    Matrix::new(
        n,
        d,
        (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, d: usize, l: usize, clam: bool) -> MilModelParams {
    let mut p = MilModelParams::init(d, l, clam, rng).unwrap();
    // non-zero biases so their gradients are exercised too
    let flat: Vec<f64> = p
        .to_flat()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    p.set_flat(&flat);
    p
}

#[test]
fn singleton_bag_gets_full_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_params(&mut rng, 8, 16, false);
    let bag = random_bag(&mut rng, 1, 8);
    let r = forward_inference(&bag, &p).unwrap();
    assert_eq!(r.attention, vec![1.0]);
}

#[test]
fn duplicate_rows_share_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = random_params(&mut rng, 8, 16, false);
    let row: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bag = Matrix::from_rows(&[row.clone(), row.clone(), row]).unwrap();
    let r = forward_inference(&bag, &p).unwrap();
    assert_eq!(r.attention[0], r.attention[1]);
    assert_eq!(r.attention[1], r.attention[2]);
}

// Parameters are fixed closed-form sequences; the expected values were produced by
// an independent numpy evaluation of the same equations.
#[test]
fn forward_matches_independent_evaluation() {
    let (n, d, l) = (6, 8, 4);
    let h = l / 2;
    let mut p = MilModelParams::zeros(d, l, false).unwrap();
    p.attention_v.weight = Matrix::new(d, l, det(d * l, 1.0, 0.5)).unwrap();
    p.attention_v.bias = det(l, 2.0, 0.5);
    p.attention_u.weight = Matrix::new(d, l, det(d * l, 3.0, 0.5)).unwrap();
    p.attention_u.bias = det(l, 4.0, 0.5);
    p.attention_w = det(l, 5.0, 0.5);
    p.projection.weight = Matrix::new(d, h, det(d * h, 6.0, 0.5)).unwrap();
    p.projection.bias = det(h, 7.0, 0.5);
    p.classifier.weight = Matrix::new(h, 2, det(h * 2, 8.0, 0.5)).unwrap();
    p.classifier.bias = det(2, 9.0, 0.5);
    let bag = Matrix::new(n, d, det(n * d, 10.0, 1.5)).unwrap();

    let r = forward_inference(&bag, &p).unwrap();
    let expected_logits = [0.28595474699347667, 0.08562208822208492];
    let expected_attention = [
        0.1717260671202316,
        0.15704142368203838,
        0.14492418643791688,
        0.17976038930490978,
        0.13404021518431508,
        0.2125077182705884,
    ];
    for (a, e) in r.logits.iter().zip(expected_logits) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
    for (a, e) in r.attention.iter().zip(expected_attention) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
}

#[test]
fn errors_for_bad_input() {
    let p = MilModelParams::zeros(4, 4, false).unwrap();
    assert!(matches!(
        forward_inference(&Matrix::zeros(0, 4), &p),
        Err(ModelError::EmptyBag)
    ));
    assert!(matches!(
        forward_inference(&Matrix::zeros(2, 5), &p),
        Err(ModelError::DimensionMismatch {
            expected: 4,
            got: 5
        })
    ));
    assert!(matches!(
        MilModelParams::zeros(4, 3, false),
        Err(ModelError::InvalidAttentionDim(3))
    ));
    let r = forward_inference(&Matrix::zeros(2, 4), &p)
        .unwrap()
        .without_cache();
    assert!(matches!(
        backward_bag(&r, &p, 1),
        Err(ModelError::MissingCache)
    ));
}

#[test]
fn hidden_dim_is_half_attention_dim() {
    let p = MilModelParams::zeros(10, 16, true).unwrap();
    assert_eq!(p.hidden_dim(), 8);
    assert_eq!(p.attention_w.len(), 16);
}

fn abmil_loss_at(flat: &[f64], template: &MilModelParams, bag: &Matrix, label: usize) -> f64 {
    let mut q = template.clone();
    q.set_flat(flat);
    let r = forward_inference(bag, &q).unwrap();
    cross_entropy(&r.logits, label).unwrap().loss
}

#[test]
fn abmil_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_params(&mut rng, 8, 16, false);
    let bag = random_bag(&mut rng, 5, 8);
    for label in [0, 1] {
        let r = forward_inference(&bag, &p).unwrap();
        let g = backward_bag(&r, &p, label).unwrap();
        let report = gradient_check(
            |flat| abmil_loss_at(flat, &p, &bag, label),
            &p.to_flat(),
            &g.grads.to_flat(),
            1e-5,
            1e-3,
        );
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn gradients_with_fixed_dropout_masks_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let p = random_params(&mut rng, 6, 8, true);
    let bag = random_bag(&mut rng, 7, 6);
    let dropout = DropoutSpec::training(0.4).unwrap();
    let cfg = ClamConfig::new(2, 0.4).unwrap();
    let mask_seed = 77;
    let loss_at = |flat: &[f64]| {
        let mut q = p.clone();
        q.set_flat(flat);
        let r = forward_bag(&bag, &q, dropout, &mut ChaCha8Rng::seed_from_u64(mask_seed)).unwrap();
        clam_loss(&r, &q, 1, &cfg).unwrap().loss
    };
    let r = forward_bag(&bag, &p, dropout, &mut ChaCha8Rng::seed_from_u64(mask_seed)).unwrap();
    let g = clam_loss(&r, &p, 1, &cfg).unwrap();
    let report = gradient_check(loss_at, &p.to_flat(), &g.grads.to_flat(), 1e-5, 1e-3);
    assert!(report.passed, "{report:?}");
}

#[test]
fn clam_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_params(&mut rng, 8, 16, true);
    let bag = random_bag(&mut rng, 6, 8);
    let cfg = ClamConfig::new(2, 0.3).unwrap();
    let r = forward_inference(&bag, &p).unwrap();
    let g = clam_loss(&r, &p, 0, &cfg).unwrap();
    let report = gradient_check(
        |flat| {
            let mut q = p.clone();
            q.set_flat(flat);
            let r = forward_inference(&bag, &q).unwrap();
            clam_loss(&r, &q, 0, &cfg).unwrap().loss
        },
        &p.to_flat(),
        &g.grads.to_flat(),
        1e-5,
        1e-3,
    );
    assert!(report.passed, "{report:?}");
}

#[test]
fn saturated_correct_prediction_has_near_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = random_params(&mut rng, 8, 16, false);
    p.classifier.bias = vec![-40.0, 40.0];
    let bag = random_bag(&mut rng, 5, 8);
    let r = forward_inference(&bag, &p).unwrap();
    let g = backward_bag(&r, &p, EFFECTIVE).unwrap();
    assert!(g.loss < 1e-12);
    assert!(g.grads.to_flat().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn singleton_bag_has_zero_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_params(&mut rng, 8, 16, false);
    let bag = random_bag(&mut rng, 1, 8);
    let r = forward_inference(&bag, &p).unwrap();
    let g = backward_bag(&r, &p, 0).unwrap().grads;
    for t in [
        g.attention_v.weight.data(),
        &g.attention_v.bias[..],
        g.attention_u.weight.data(),
        &g.attention_u.bias[..],
        &g.attention_w[..],
    ] {
        assert!(t.iter().all(|&v| v == 0.0));
    }
    assert!(g.projection.weight.data().iter().any(|&v| v != 0.0));
}

#[test]
fn zero_instance_weight_reduces_to_abmil() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = random_params(&mut rng, 8, 16, true);
    let bag = random_bag(&mut rng, 6, 8);
    let r = forward_inference(&bag, &p).unwrap();
    let cfg = ClamConfig::new(2, 0.0).unwrap();
    let clam = clam_loss(&r, &p, 1, &cfg).unwrap();
    let plain = backward_bag(&r, &p, 1).unwrap();
    assert_eq!(clam.loss, plain.loss);
    assert_eq!(clam.grads.to_flat(), plain.grads.to_flat());
    let ic = clam.grads.instance_classifier.unwrap();
    assert!(ic.weight.data().iter().all(|&v| v == 0.0));
}

#[test]
fn two_instances_one_per_branch() {
    let (top, bottom) = select_cluster_instances(&[0.3, 0.7], 1);
    assert_eq!(top, vec![1]);
    assert_eq!(bottom, vec![0]);
    // b clamps to floor(N/2)
    let (top, bottom) = select_cluster_instances(&[0.2, 0.5, 0.3], 4);
    assert_eq!((top.len(), bottom.len()), (1, 1));
}

#[test]
fn selection_matches_full_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let raw: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let att = softmax(&raw);
        let (top, bottom) = select_cluster_instances(&att, 2);
        // oracle: sort (value, index) pairs ascending, read off both ends
        let mut pairs: Vec<(f64, usize)> = att.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want_top: Vec<usize> = pairs[8..].iter().map(|p| p.1).collect();
        let mut want_bottom: Vec<usize> = pairs[..2].iter().map(|p| p.1).collect();
        let (mut top, mut bottom) = (top, bottom);
        top.sort();
        bottom.sort();
        want_top.sort();
        want_bottom.sort();
        assert_eq!(top, want_top);
        assert_eq!(bottom, want_bottom);
    }
}

#[test]
fn clam_rejects_small_bags_and_missing_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_params(&mut rng, 4, 4, true);
    let r = forward_inference(&random_bag(&mut rng, 1, 4), &p).unwrap();
    let cfg = ClamConfig::new(1, 0.3).unwrap();
    assert!(matches!(
        clam_loss(&r, &p, 0, &cfg),
        Err(ModelError::BagTooSmall(1))
    ));
    let q = random_params(&mut rng, 4, 4, false);
    let r = forward_inference(&random_bag(&mut rng, 3, 4), &q).unwrap();
    assert!(matches!(
        clam_loss(&r, &q, 0, &cfg),
        Err(ModelError::NoInstanceClassifier)
    ));
    assert!(ClamConfig::new(0, 0.3).is_err());
    assert!(ClamConfig::new(1, 1.5).is_err());
}

#[test]
fn zero_model_predicts_one_half() {
    let p = MilModelParams::zeros(4, 4, false).unwrap();
    let bag = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
    assert_eq!(predict_proba(&bag, &p).unwrap(), 0.5);
}

#[test]
fn identical_ensemble_equals_member() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = random_params(&mut rng, 8, 8, false);
    let bag = random_bag(&mut rng, 9, 8);
    let single = predict_proba(&bag, &p).unwrap();
    let ens = ensemble_proba(&bag, &vec![p.clone(); 4]).unwrap();
    assert!((single - ens).abs() < 1e-15);
    assert!(single > 0.0 && single < 1.0);
}

#[test]
fn zero_instance_weight_trajectory_matches_abmil() {
    let d = 6;
    let mut init_rng = ChaCha8Rng::seed_from_u64(11);
    let bags: Vec<(Matrix, usize)> = (0..6)
        .map(|i| (random_bag(&mut init_rng, 4 + i, d), i % 2))
        .collect();
    let plain0 = MilModelParams::init(d, 8, false, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    let clam0 = MilModelParams::init(d, 8, true, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
    assert_eq!(plain0.to_flat()[..], clam0.to_flat()[..plain0.num_params()]);

    let cfg = ClamConfig::new(2, 0.0).unwrap();
    let dropout = DropoutSpec::training(0.5).unwrap();
    let (mut plain, mut clam) = (plain0, clam0);
    let mut opt_a = AdamState::new(1e-2, 0.1);
    let mut opt_b = AdamState::new(1e-2, 0.1);
    let mut rng_a = ChaCha8Rng::seed_from_u64(13);
    let mut rng_b = ChaCha8Rng::seed_from_u64(13);
    for (bag, label) in &bags {
        let ra = forward_bag(bag, &plain, dropout, &mut rng_a).unwrap();
        let ga = backward_bag(&ra, &plain, *label).unwrap().grads;
        let rb = forward_bag(bag, &clam, dropout, &mut rng_b).unwrap();
        let gb = clam_loss(&rb, &clam, *label, &cfg).unwrap().grads;
        opt_a.step(&mut plain.tensors_mut(), &ga.tensors()).unwrap();
        opt_b.step(&mut clam.tensors_mut(), &gb.tensors()).unwrap();
        assert_eq!(plain.to_flat()[..], clam.to_flat()[..plain.num_params()]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_equivariance(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, 5, 8, false);
        let bag = random_bag(&mut rng, n, 5);
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let r = forward_inference(&bag, &p).unwrap();
        let rp = forward_inference(&bag.select_rows(&perm), &p).unwrap();
        prop_assert!((r.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (i, &k) in perm.iter().enumerate() {
            prop_assert!((rp.attention[i] - r.attention[k]).abs() < 1e-12);
        }
        for c in 0..2 {
            prop_assert!((rp.logits[c] - r.logits[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicating_instances_keeps_logits(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, 5, 8, false);
        let bag = random_bag(&mut rng, n, 5);
        let doubled: Vec<usize> = (0..n).chain(0..n).collect();
        let r = forward_inference(&bag, &p).unwrap();
        let rd = forward_inference(&bag.select_rows(&doubled), &p).unwrap();
        for k in 0..n {
            prop_assert!((rd.attention[k] - r.attention[k] / 2.0).abs() < 1e-12);
        }
        for c in 0..2 {
            prop_assert!((rd.logits[c] - r.logits[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_is_bit_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng, 5, 8, true);
        let bag = random_bag(&mut rng, 7, 5);
        let a = forward_inference(&bag, &p).unwrap();
        let b = forward_inference(&bag, &p).unwrap();
        prop_assert_eq!(a.logits, b.logits);
        prop_assert_eq!(a.attention, b.attention);
        prop_assert_eq!(a.instance_logits, b.instance_logits);
    }
}
