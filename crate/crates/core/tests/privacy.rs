mod common;

use common::*;
use dpgenlab_core::privacy::*;
use dpgenlab_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(t: f64, l: usize) -> GenerationConfig {
    GenerationConfig::new(t, l).unwrap()
}

/// Label-match model with zero base logits on {a, b} and a one-record dataset
/// labelled `a` (weight 1); the neighbor relabels that record.
fn flip_pair(beta: f64, new_label: &str, new_weight: f64, new_tag: &str) -> (LogitModel, NeighborPair) {
    let model = LogitModel::label_match(vocab(2), vec![0.0, 0.0], beta).unwrap();
    let d = dataset(&[("a", 1.0, "r0")]);
    let pair = NeighborPair::replace(&d, 0, record(new_label, new_weight, new_tag)).unwrap();
    (model, pair)
}

/// The fixed two-token instance: logits (1, 0) under D, (0, 0) under D'.
fn two_token() -> (LogitModel, NeighborPair) {
    let model = LogitModel::label_match(vocab(2), vec![0.0, 0.0], 1.0).unwrap();
    let d = dataset(&[("a", 1.0, "r0")]);
    let pair = NeighborPair::replace(&d, 0, record("a", 0.0, "r0")).unwrap();
    (model, pair)
}

#[test]
fn sensitivity_zero_for_same_label_and_weight() {
    let (model, pair) = flip_pair(0.4, "a", 1.0, "other-tag");
    let s = logit_sensitivity(&model, &pair, &cfg(1.0, 2)).unwrap();
    assert_eq!(s.delta_logit, 0.0);
    let (eps, _) = message_epsilon_exact(&model, &pair, &cfg(1.0, 2)).unwrap();
    assert_eq!(eps, 0.0);
    assert_eq!(token_epsilon_exact(&model, &pair, &[], 1, &cfg(1.0, 2)).unwrap(), 0.0);
}

#[test]
fn sensitivity_for_label_flip() {
    let (model, pair) = flip_pair(0.4, "b", 1.0, "r0");
    let c = cfg(1.0, 3);
    let s = logit_sensitivity(&model, &pair, &c).unwrap();
    assert!((s.delta_logit - 0.4).abs() < 1e-15);
    let brute = logit_sensitivity_exhaustive(&model, &pair, &c).unwrap();
    assert!((brute.delta_logit - 0.4).abs() < 1e-15);
}

#[test]
fn analytic_sensitivity_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    for _ in 0..200 {
        let inst = random_instance(&mut rng, 4, 3, 2.0);
        let pair = NeighborPair::new(inst.left.clone(), inst.right.clone(), inst.index).unwrap();
        let c = cfg(1.0, inst.length);
        let a = logit_sensitivity(&inst.model, &pair, &c).unwrap().delta_logit;
        // brute force over all histories straight from the oracle logits
        let mut b = 0.0_f64;
        for k in 0..inst.length {
            for h in all_messages(inst.model.vocab().len(), k.max(1)) {
                let h = &h[..k];
                let l = total_logits(&inst.model, &inst.left, h);
                let r = total_logits(&inst.model, &inst.right, h);
                for (x, y) in l.iter().zip(&r) {
                    b = b.max((x - y).abs());
                }
            }
        }
        assert!((a - b).abs() < 1e-12, "analytic {a} vs brute {b}");
        let e = logit_sensitivity_exhaustive(&inst.model, &pair, &c)
            .unwrap()
            .delta_logit;
        assert!((e - b).abs() < 1e-12);
    }
}

#[test]
fn token_epsilon_on_two_token_instance() {
    let (model, pair) = two_token();
    let c = cfg(1.0, 1);
    let eps = token_epsilon_exact(&model, &pair, &[], 1, &c).unwrap();
    let p = softmax(&[1.0, 0.0], 1.0);
    let oracle = (p[1] / 0.5).ln().abs().max((p[0] / 0.5).ln().abs());
    assert!((eps - oracle).abs() < 1e-14);
    assert!((eps - 0.620115).abs() < 5e-7);
    let delta = logit_sensitivity(&model, &pair, &c).unwrap().delta_logit;
    assert_eq!(delta, 1.0);
    assert!(eps <= token_epsilon_bound(delta, 1.0).unwrap());
    assert_eq!(token_epsilon_bound(delta, 1.0).unwrap(), 2.0);
}

#[test]
fn message_epsilon_on_two_token_instance() {
    let (model, pair) = two_token();
    let c = cfg(1.0, 2);
    let (eps, witness) = message_epsilon_exact(&model, &pair, &c).unwrap();
    let p = message_probs(&model, pair.left(), 1.0, 2);
    let q = message_probs(&model, pair.right(), 1.0, 2);
    let oracle = p.iter().zip(&q).map(|(a, b)| (a / b).ln().abs()).fold(0.0, f64::max);
    assert!((eps - oracle).abs() < 1e-14);
    assert!((eps - 1.240229).abs() < 5e-7);
    assert_eq!(witness.render(model.vocab()), "bb");
    assert!(eps <= message_epsilon_bound(1.0, 1.0, 2).unwrap());
    assert_eq!(message_epsilon_bound(1.0, 1.0, 2).unwrap(), 4.0);
    let token = token_epsilon_exact(&model, &pair, &[], 1, &c).unwrap();
    assert!((eps - 2.0 * token).abs() < 1e-14);
}

#[test]
fn bound_formulas() {
    assert_eq!(token_epsilon_bound(0.0, 0.3).unwrap(), 0.0);
    assert_eq!(token_epsilon_bound(0.5, 0.5).unwrap(), 2.0);
    assert_eq!(token_epsilon_bound(1.0, 2.0).unwrap(), 1.0);
    assert_eq!(message_epsilon_bound(0.0, 0.7, 9).unwrap(), 0.0);
    assert_eq!(message_epsilon_bound(1.0, 1.0, 5).unwrap(), 10.0);
    assert_eq!(temperature_floor_for_budget(0.0, 5, 1.0).unwrap(), 0.0);
    assert_eq!(temperature_floor_for_budget(1.0, 5, 10.0).unwrap(), 1.0);
}

#[test]
fn composition_examples() {
    assert_eq!(
        compose_privacy(&[]),
        PrivacyLoss {
            epsilon: 0.0,
            delta: 0.0
        }
    );
    let five = compose_privacy(&[PrivacyLoss::pure(0.1).unwrap(); 5]);
    assert!((five.epsilon - 0.5).abs() < 1e-15);
    assert_eq!(five.delta, 0.0);
    let two = compose_privacy(&[
        PrivacyLoss::new(0.2, 1e-5).unwrap(),
        PrivacyLoss::new(0.3, 2e-5).unwrap(),
    ]);
    assert!((two.epsilon - 0.5).abs() < 1e-15);
    assert!((two.delta - 3e-5).abs() < 1e-20);
}

#[test]
fn hockey_stick_examples() {
    let v = vocab(2);
    let p = MessageDistribution::from_probs(v.clone(), 1, &[0.75, 0.25]).unwrap();
    let q = MessageDistribution::from_probs(v.clone(), 1, &[0.25, 0.75]).unwrap();
    for e in [0.0, 0.3, 2.0] {
        assert_eq!(hockey_stick_delta(&p, &p, e).unwrap(), 0.0);
    }
    let d = hockey_stick_delta(&p, &q, 2.0_f64.ln()).unwrap();
    assert!((d - 0.25).abs() < 1e-15);
    assert!((hockey_stick_by_subsets(&[0.75, 0.25], &[0.25, 0.75], 2.0_f64.ln()) - 0.25).abs() < 1e-15);

    let one = MessageDistribution::from_probs(v.clone(), 1, &[1.0, 0.0]).unwrap();
    let other = MessageDistribution::from_probs(v, 1, &[0.0, 1.0]).unwrap();
    assert_eq!(hockey_stick_delta(&one, &other, 0.0).unwrap(), 1.0);
}

#[test]
fn epsilon_at_which_delta_vanishes() {
    let (model, pair) = two_token();
    let c = cfg(0.7, 3);
    let (p, q) = message_distributions(&model, &pair, &c).unwrap();
    let (eps, _) = message_epsilon_exact(&model, &pair, &c).unwrap();
    assert!(hockey_stick_delta(&p, &q, eps).unwrap() <= 1e-12);
    assert!(hockey_stick_delta(&q, &p, eps).unwrap() <= 1e-12);
    assert!(hockey_stick_delta(&p, &q, 0.5 * eps).unwrap() > 0.0);
}

#[test]
fn token_epsilon_strictly_decreasing_in_temperature() {
    let (model, pair) = two_token();
    let mut last = f64::INFINITY;
    for i in 1..=20 {
        let t = 0.1 * i as f64;
        let e = token_epsilon_exact(&model, &pair, &[], 1, &cfg(t, 1)).unwrap();
        assert!(e < last, "T = {t}");
        last = e;
    }
}

#[test]
fn report_is_consistent() {
    let (model, pair) = two_token();
    let r = analyze(&model, &pair, &cfg(1.0, 2), None).unwrap();
    assert!(r.bounds_hold());
    assert_eq!(r.worst_message.text, "bb");
    assert_eq!(r.per_step_exact_epsilons.len(), 2);
    assert!((r.lemma1_composed_epsilon - r.exact_message_epsilon).abs() < 1e-12);
    assert_eq!(r.hockey_stick_delta_at.len(), 5);
    assert!(r.hockey_stick_delta_at.last().unwrap().1 <= 1e-12);
    let json = serde_json::to_value(&r).unwrap();
    for field in [
        "exact_message_epsilon",
        "hockey_stick_delta_at",
        "token_epsilon_bound",
        "message_epsilon_bound",
        "per_step_exact_epsilons",
        "worst_message",
    ] {
        assert!(json.get(field).is_some(), "{field}");
    }
}

#[test]
fn unknown_label_in_dataset_is_reported_at_analysis() {
    let model = LogitModel::label_match(vocab(2), vec![0.0, 0.0], 1.0).unwrap();
    let d = dataset(&[("a", 1.0, "x"), ("zebra", 1.0, "y")]);
    let pair = NeighborPair::replace(&d, 0, record("b", 1.0, "x")).unwrap();
    let err = analyze(&model, &pair, &cfg(1.0, 1), None).unwrap_err().to_string();
    assert!(err.contains("zebra"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bounds_and_composition_hold(seed in any::<u64>(), ti in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 4, 3, 2.0);
        let pair = NeighborPair::new(inst.left, inst.right, inst.index).unwrap();
        let t = 0.1 * ti as f64;
        let c = cfg(t, inst.length);
        let delta = logit_sensitivity(&inst.model, &pair, &c).unwrap().delta_logit;
        let steps = per_step_token_epsilons(&inst.model, &pair, &c).unwrap();
        for e in &steps {
            prop_assert!(*e <= 2.0 * delta / t + 1e-9);
        }
        let (eps, _) = message_epsilon_exact(&inst.model, &pair, &c).unwrap();
        prop_assert!(eps <= 2.0 * delta * inst.length as f64 / t + 1e-9);
        prop_assert!(eps <= steps.iter().sum::<f64>() + 1e-9);
        let (swapped, _) = message_epsilon_exact(&inst.model, &pair.swapped(), &c).unwrap();
        prop_assert!((eps - swapped).abs() < 1e-12);
    }

    #[test]
    fn hockey_stick_matches_subsets(seed in any::<u64>(), e in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 3, 2, 2.0);
        let pair = NeighborPair::new(inst.left, inst.right, inst.index).unwrap();
        let c = cfg(0.5, inst.length);
        let (p, q) = message_distributions(&inst.model, &pair, &c).unwrap();
        prop_assume!(p.len() <= 12);
        let fast = hockey_stick_delta(&p, &q, e).unwrap();
        let slow = hockey_stick_by_subsets(&p.probs(), &q.probs(), e);
        prop_assert!((fast - slow).abs() <= 1e-12);
        // nonincreasing in epsilon
        prop_assert!(hockey_stick_delta(&p, &q, e + 0.1).unwrap() <= fast + 1e-15);
    }
}
