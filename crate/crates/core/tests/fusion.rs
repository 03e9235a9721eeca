use mqa_core::fusion::{
    fuse, fused_distance, learn_weights, learn_weights_traced, loss, loss_gradient, softmax,
    weighted_distance, LearnConfig, TrainingTriplet,
};
use mqa_core::WeightVector;
use mqa_testkit::{adversarial_triplets, rng, weighted_sq, RawTriplet};
use proptest::prelude::*;
use rand::Rng;

fn to_triplets(raw: &[RawTriplet]) -> Vec<TrainingTriplet> {
    raw.iter()
        .map(|[q, p, n]| TrainingTriplet {
            query: q.clone(),
            positive: p.clone(),
            negative: n.clone(),
        })
        .collect()
}

fn random_instance(rng: &mut impl Rng) -> (Vec<f64>, Vec<TrainingTriplet>) {
    let m = rng.gen_range(2..=4);
    let dims: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=8)).collect();
    let side = |rng: &mut dyn rand::RngCore| -> Vec<Vec<f32>> {
        dims.iter().map(|&d| (0..d).map(|_| rng.gen::<f32>()).collect()).collect()
    };
    let triplets = (0..rng.gen_range(1..=6))
        .map(|_| TrainingTriplet {
            query: side(rng),
            positive: side(rng),
            negative: side(rng),
        })
        .collect();
    let theta = (0..m).map(|_| rng.gen_range(-1.5..1.5)).collect();
    (theta, triplets)
}

#[test]
fn gradient_matches_central_differences() {
    const H: f64 = 1e-4;
    let mut rng = rng(11);
    let mut checked = 0;
    while checked < 50 {
        let (theta, triplets) = random_instance(&mut rng);
        // margin large enough that some hinges are active
        let margin = 0.5;
        if loss(&theta, &triplets, margin).unwrap() == 0.0 {
            continue;
        }
        let analytic = loss_gradient(&theta, &triplets, margin).unwrap();
        let numeric: Vec<f64> = (0..theta.len())
            .map(|j| {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += H;
                minus[j] -= H;
                (loss(&plus, &triplets, margin).unwrap() - loss(&minus, &triplets, margin).unwrap()) / (2.0 * H)
            })
            .collect();
        let scale = numeric.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-8);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-4 * scale, "analytic {analytic:?} vs numeric {numeric:?}");
        }
        checked += 1;
    }
}

/// Hinge loss written directly against the raw vectors, as a function of w_1
/// on the two-modality simplex.
fn grid_loss(raw: &[RawTriplet], w1: f64, margin: f64) -> f64 {
    let w = [w1, 1.0 - w1];
    raw.iter()
        .map(|[q, p, n]| (margin + weighted_sq(q, p, &w) - weighted_sq(q, n, &w)).max(0.0))
        .sum()
}

#[test]
fn adversarial_set_learns_the_separating_modality() {
    let raw = adversarial_triplets(200, 8, 5);
    let config = LearnConfig::default();

    // oracle: the loss minimum over the 1-D simplex sits at w_1 -> 1
    let (best_w1, _) = (0..=1000)
        .map(|i| i as f64 / 1000.0)
        .map(|w1| (w1, grid_loss(&raw, w1, config.margin)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))
        .unwrap();
    assert!(best_w1 >= 0.99, "grid minimum at w1={best_w1}");

    let (w, history) = learn_weights_traced(&to_triplets(&raw), &config).unwrap();
    assert!(w.get(0) >= 0.9, "learned {w:?}");
    assert_eq!(history.len(), config.epochs + 1);
    for pair in history.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "loss rose: {pair:?}");
    }
    // the traced loss agrees with the direct oracle at the learned weights
    let direct = grid_loss(&raw, w.get(0), config.margin);
    assert!((history.last().unwrap() - direct).abs() <= 1e-6 * direct.max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_never_increases_and_stays_on_simplex(seed in any::<u64>()) {
        let (_, triplets) = random_instance(&mut rng(seed));
        let (w, history) = learn_weights_traced(&triplets, &LearnConfig::default()).unwrap();
        for pair in history.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-9, "loss rose: {:?}", pair);
        }
        let sum: f64 = w.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6 && w.as_slice().iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn inactive_hinge_keeps_uniform_weights() {
    let t = TrainingTriplet {
        query: vec![vec![0.0], vec![0.0], vec![0.0]],
        positive: vec![vec![0.0], vec![0.0], vec![0.0]],
        negative: vec![vec![5.0], vec![5.0], vec![5.0]],
    };
    let w = learn_weights(&[t], &LearnConfig::default()).unwrap();
    for x in w.as_slice() {
        assert!((x - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
}

#[test]
fn fusion_identity_on_random_pairs() {
    let mut rng = rng(7);
    for _ in 0..100 {
        let m = rng.gen_range(2..=4);
        let dims: Vec<usize> = (0..m).map(|_| rng.gen_range(8..=64)).collect();
        let mut draw = || -> Vec<Vec<f32>> {
            dims.iter().map(|&d| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect()
        };
        let (q, o) = (draw(), draw());
        let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let weights = WeightVector::new(w.clone()).unwrap();

        let oracle = weighted_sq(&q, &o, &w);
        let fused = fused_distance(&fuse(&q, &weights).unwrap(), &fuse(&o, &weights).unwrap()).unwrap() as f64;
        let direct = weighted_distance(&q, &o, &weights).unwrap();
        assert!((fused - oracle).abs() <= 1e-5 * oracle, "{fused} vs {oracle}");
        assert!((direct - oracle).abs() <= 1e-5 * oracle);
    }
}
