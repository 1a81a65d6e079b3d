mod common;

use common::*;
use dpgenlab_core::utility::*;
use dpgenlab_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Two messages with U = (1, 0): |V| = 2, L = 1, logits a:1, b:0.
fn two_message_model() -> LogitModel {
    LogitModel::label_match(vocab(2), vec![1.0, 0.0], 0.0).unwrap()
}

fn cfg(t: f64, l: usize) -> GenerationConfig {
    GenerationConfig::new(t, l).unwrap()
}

fn exp_u() -> UtilitySpec {
    UtilitySpec::ExpLogitPlusLength { length_coef: 0.0 }
}

fn landscape(u: &UtilitySpec) -> UtilityLandscape {
    UtilityLandscape::new(vec![1.0, 0.0], u, 1).unwrap()
}

// Frozen with 30-digit arithmetic: p = sigma(1), E = p e + (1 - p),
// Cov = p e - E p.
const E_AT_1: f64 = 2.256_164_671_199_035;
const COV_AT_1: f64 = 0.337_834_712_147_041_2;

#[test]
fn gibbs_values() {
    let d = Dataset::default();
    let flat = LogitModel::label_match(vocab(3), vec![0.5, 0.5, 0.5], 0.0).unwrap();
    for p in gibbs_distribution(&flat, &d, &cfg(0.4, 2)).unwrap().probs() {
        assert!((p - 1.0 / 9.0).abs() < 1e-15);
    }
    let g = gibbs_distribution(&two_message_model(), &d, &cfg(1.0, 1)).unwrap();
    let p = g.probs();
    assert!((p[0] - 0.731059).abs() < 5e-7 && (p[1] - 0.268941).abs() < 5e-7);
    let shifted = GibbsDistribution::from_scores(vec![8.0, 7.0], 1.0, 1).unwrap();
    for (a, b) in g.log_probs().iter().zip(shifted.log_probs()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn expected_utility_values() {
    let g = gibbs_distribution(&two_message_model(), &Dataset::default(), &cfg(1.0, 1)).unwrap();
    assert!((expected_utility(&g, &UtilitySpec::Constant { value: 3.5 }).unwrap() - 3.5).abs() < 1e-15);
    let e = expected_utility(&g, &exp_u()).unwrap();
    let p = softmax(&[1.0, 0.0], 1.0);
    assert!((e - (p[0] * 1f64.exp() + p[1])).abs() < 1e-15);
    assert!((e - E_AT_1).abs() < 1e-14);
    // nu = e^U + 0.1 L, with L = 2 supplied through the Gibbs length
    let g2 = GibbsDistribution::from_scores(vec![1.0, 0.0], 1.0, 2).unwrap();
    let e2 = expected_utility(&g2, &UtilitySpec::default()).unwrap();
    assert!((e2 - (E_AT_1 + 0.2)).abs() < 1e-14);
    assert!((e2 - 2.456165).abs() < 5e-7);
}

#[test]
fn covariance_values() {
    let g = gibbs_distribution(&two_message_model(), &Dataset::default(), &cfg(1.0, 1)).unwrap();
    assert!(
        utility_covariance(&g, &UtilitySpec::Constant { value: 2.0 })
            .unwrap()
            .abs()
            < 1e-16
    );
    let var = utility_covariance(
        &g,
        &UtilitySpec::AffineInU {
            slope: 1.0,
            intercept: 0.0,
        },
    )
    .unwrap();
    assert!((var - 0.196612).abs() < 5e-7);
    let p = softmax(&[1.0, 0.0], 1.0);
    assert!((var - p[0] * p[1]).abs() < 1e-15);
    let cov = utility_covariance(&g, &exp_u()).unwrap();
    let e_nu = p[0] * 1f64.exp() + p[1];
    assert!((cov - (p[0] * 1f64.exp() - e_nu * p[0])).abs() < 1e-14);
    assert!((cov - COV_AT_1).abs() < 1e-14);
}

#[test]
fn derivative_values() {
    let m = two_message_model();
    let d = Dataset::default();
    let flat = utility_temperature_derivative(&m, &d, 1, &UtilitySpec::Constant { value: 1.0 }, 0.8).unwrap();
    assert!(flat.abs() < 1e-15);
    let dv = utility_temperature_derivative(&m, &d, 1, &exp_u(), 1.0).unwrap();
    assert!((dv + COV_AT_1).abs() < 1e-14);
    let h = 1e-4;
    let l = landscape(&exp_u());
    let fd = (l.expected_utility(1.0 + h) - l.expected_utility(1.0 - h)) / (2.0 * h);
    assert!(((dv - fd) / dv).abs() <= 1e-5);
    assert!(matches!(
        utility_temperature_derivative(&m, &d, 1, &exp_u(), 0.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn objective_values() {
    let p = OptimizationProblem::new(landscape(&exp_u()), 1, 0.0, DEFAULT_BRACKET).unwrap();
    assert_eq!(
        regularized_objective(&p, 0.7).unwrap(),
        p.landscape().expected_utility(0.7)
    );
    let p = OptimizationProblem::new(landscape(&exp_u()), 1, 0.337989, DEFAULT_BRACKET).unwrap();
    let v = regularized_objective(&p, 1.0).unwrap();
    assert!((v - (E_AT_1 + 0.337989)).abs() < 1e-14);
    assert!((v - 2.594154).abs() < 5e-7);
    // nu -> nu + c shifts the objective by exactly c
    let shifted = OptimizationProblem::new(
        UtilityLandscape::new(
            vec![1.0, 0.0],
            &UtilitySpec::Table {
                values: vec![1f64.exp() + 4.0, 5.0],
            },
            1,
        )
        .unwrap(),
        1,
        0.337989,
        DEFAULT_BRACKET,
    )
    .unwrap();
    for t in [0.2, 1.0, 1.9] {
        assert!((shifted.objective(t) - p.objective(t) - 4.0).abs() < 1e-12);
    }
    assert!(regularized_objective(&p, -1.0).is_err());
}

fn grid_max(p: &OptimizationProblem, points: usize) -> f64 {
    let (lo, hi) = p.bracket();
    (0..points)
        .map(|i| p.objective(lo + (hi - lo) * i as f64 / (points - 1) as f64))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn constructed_first_order_condition_is_recovered() {
    let lambda = COV_AT_1; // L * Cov(1) / 1^2 with L = 1
    let p = OptimizationProblem::new(landscape(&exp_u()), 1, lambda, DEFAULT_BRACKET).unwrap();
    let sol = optimal_temperature(&p).unwrap();
    let at_one = sol
        .stationary_points()
        .find(|c| (c.temperature - 1.0).abs() < 1e-6)
        .expect("stationary point at T = 1");
    assert!(p.foc_residual(at_one.temperature) <= 1e-6);
    // the objective bends upward at T = 1, so it is a local minimum
    assert_eq!(at_one.kind, CandidateKind::LocalMin);
    assert!(sol.objective >= grid_max(&p, 10_000) - 1e-8);
    if sol.interior {
        assert!(sol.foc_residual <= 1e-6);
    }
}

#[test]
fn boundary_solutions() {
    let p = OptimizationProblem::new(landscape(&exp_u()), 1, 0.0, DEFAULT_BRACKET).unwrap();
    let sol = optimal_temperature(&p).unwrap();
    assert_eq!(sol.t_star, 0.1);
    assert!(!sol.interior);
    let p = OptimizationProblem::new(landscape(&exp_u()), 1, 10.0, DEFAULT_BRACKET).unwrap();
    assert_eq!(optimal_temperature(&p).unwrap().t_star, 2.0);
}

#[test]
fn gap_vanishes_without_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let n = rng.gen_range(2..=4);
        let l = rng.gen_range(1..=3);
        let rows = (0..l)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let m = LogitModel::new(vocab(n), rows, InfluenceRule::LabelMatch { beta: 0.5 }, None).unwrap();
        let d = dataset(&[("b", 0.7, "x")]);
        let gap = gibbs_autoregressive_gap(&m, &d, &cfg(rng.gen_range(0.2..2.0), l)).unwrap();
        assert!(gap <= 1e-10, "gap {gap}");
    }
}

#[test]
fn gap_with_history_coupling_matches_oracle() {
    let coupling = vec![vec![0.0, 1.0], vec![-0.5, 0.0]];
    let m = LogitModel::new(
        vocab(2),
        vec![vec![0.3, 0.0]],
        InfluenceRule::LabelMatch { beta: 0.0 },
        Some(coupling.clone()),
    )
    .unwrap();
    let d = Dataset::default();
    let t = 0.9;
    let gap = gibbs_autoregressive_gap(&m, &d, &cfg(t, 3)).unwrap();
    let product = message_probs(&m, &d, t, 3);
    let u = scores(&m, &d, 3);
    let w: Vec<f64> = u.iter().map(|s| (s / t).exp()).collect();
    let z: f64 = w.iter().sum();
    let oracle = 0.5 * product.iter().zip(&w).map(|(a, b)| (a - b / z).abs()).sum::<f64>();
    assert!(gap > 1e-3);
    assert!((gap - oracle).abs() < 1e-13);

    // relabel a <-> b consistently: base row, coupling rows and columns
    let swapped = LogitModel::new(
        vocab(2),
        vec![vec![0.0, 0.3]],
        InfluenceRule::LabelMatch { beta: 0.0 },
        Some(vec![vec![0.0, -0.5], vec![1.0, 0.0]]),
    )
    .unwrap();
    let gap2 = gibbs_autoregressive_gap(&swapped, &d, &cfg(t, 3)).unwrap();
    assert!((gap - gap2).abs() < 1e-13);
}

/// Random Gibbs landscape for the derivative and monotonicity checks.
fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
    let n = rng.gen_range(2..=4);
    let l = rng.gen_range(1..=3);
    let rows: Vec<Vec<f64>> = (0..l)
        .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let m = LogitModel::new(vocab(n), rows, InfluenceRule::LabelMatch { beta: 0.0 }, None).unwrap();
    (scores(&m, &Dataset::default(), l), l)
}

#[test]
fn derivative_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let h = 1e-4;
    for _ in 0..120 {
        let (u, l) = random_scores(&mut rng);
        let square = UtilitySpec::Table {
            values: u.iter().map(|s| s * s + 1.0).collect(),
        };
        for spec in [
            exp_u(),
            UtilitySpec::AffineInU {
                slope: 1.0,
                intercept: 0.0,
            },
            square,
        ] {
            let land = UtilityLandscape::new(u.clone(), &spec, l).unwrap();
            for t in [0.3, 0.5, 1.0, 2.0] {
                let a = land.derivative(t);
                let fd = (land.expected_utility(t + h) - land.expected_utility(t - h)) / (2.0 * h);
                let rel = (a - fd).abs() / a.abs().max(fd.abs());
                assert!(rel <= 1e-5, "T = {t}: analytic {a}, fd {fd}, rel {rel}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monotone_utility_means_nonincreasing_expectation(seed in any::<u64>(), slope in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, l) = random_scores(&mut rng);
        for spec in [UtilitySpec::default(), UtilitySpec::AffineInU { slope, intercept: 1.0 }] {
            let land = UtilityLandscape::new(u.clone(), &spec, l).unwrap();
            let mut last = f64::INFINITY;
            for i in 1..=200 {
                let t = 0.01 * i as f64;
                prop_assert!(land.covariance(t) >= -1e-12);
                let e = land.expected_utility(t);
                prop_assert!(e <= last + 1e-9);
                last = e;
            }
        }
    }

    #[test]
    fn solver_beats_grid(seed in any::<u64>(), lambda in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, l) = random_scores(&mut rng);
        let square = UtilitySpec::Table { values: u.iter().map(|s| s * s + 1.0).collect() };
        let p = OptimizationProblem::new(UtilityLandscape::new(u, &square, l).unwrap(), l, lambda, DEFAULT_BRACKET).unwrap();
        let sol = optimal_temperature(&p).unwrap();
        prop_assert!(sol.objective >= grid_max(&p, 10_000) - 1e-8);
        if sol.interior {
            prop_assert!(sol.foc_residual <= 1e-6);
        }
    }
}
