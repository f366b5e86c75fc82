use std::sync::Arc;

use calib::blackwell::Game;
use calib::core_types::{
    labels_from, naive_average, uniform_edges, Features, GameState, PayoffVector, PiecewiseDensity,
};
use calib::harness::{run_experiment, ExperimentConfig, Mode, NatureKind, OracleKind, QceNature};
use calib::oracles::QuantileStepOracle;
use calib::payoffs::{default_levels, PayoffSpec, QuantilePayoff};
use calib::recalibration::standard_payoff;
use proptest::prelude::*;

fn density(weights: &[f64]) -> PiecewiseDensity {
    PiecewiseDensity::from_weights(uniform_edges(0.0, 1.0, weights.len()), weights).unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, 2..40)
}

proptest! {
    #[test]
    fn average_matches_recursion_and_naive_sum(
        stream in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..200)
    ) {
        let labels = labels_from(["a", "b", "c"]);
        let mut state: GameState<()> = GameState::new(labels.clone(), 3.0);
        let payoffs: Vec<PayoffVector> =
            stream.iter().map(|v| PayoffVector::new(labels.clone(), v.clone(), 3.0).unwrap()).collect();
        for p in &payoffs {
            state.update_average(p).unwrap();
        }
        let avg = state.avg().values();
        for (a, b) in avg.iter().zip(naive_average(&payoffs)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((state.recursion_norm_sq() - state.avg().norm_sq()).abs() <= 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf(w in weights(), alpha in 0.001f64..0.999) {
        let p = density(&w);
        let y = p.quantile(alpha).unwrap();
        prop_assert!((p.cdf(y).unwrap() - alpha).abs() <= 1e-9);
    }

    #[test]
    fn combined_payoff_is_bounded(w in weights(), e in weights(), y in 0.0f64..=1.0) {
        let spec = standard_payoff(1).unwrap();
        let bins = 50;
        let resample = |w: &[f64]| -> Vec<f64> { (0..bins).map(|i| w[i * w.len() / bins]).collect() };
        let p = density(&resample(&w));
        let x = Features::with_experts(vec![density(&resample(&e))]);
        let v = spec.evaluate(&x, &p, y).unwrap();
        prop_assert!(v.norm_sq() <= spec.bound() + 1e-12);
    }

    #[test]
    fn qce_nature_picks_a_maximizer(w in weights(), history in prop::collection::vec(0.0f64..1.0, 0..30)) {
        let grid: Vec<f64> = (1..50).map(|i| i as f64 / 50.0).collect();
        let mut nature = QceNature::new(grid.clone(), default_levels());
        for u in history {
            nature.choose(|_| u);
        }
        let p = density(&w);
        let before = nature.clone();
        let y = nature.choose(|y| p.cdf_clamped(y));
        let got = before.qce_with(p.cdf_clamped(y));
        for g in &grid {
            prop_assert!(before.qce_with(p.cdf_clamped(*g)) <= got);
        }
    }

    #[test]
    fn exact_quantile_oracle_meets_budget(outcomes in prop::collection::vec(0.0f64..=1.0, 1..150)) {
        let spec: Arc<dyn PayoffSpec> = Arc::new(QuantilePayoff::standard());
        let mut oracle = QuantileStepOracle::new(&[(default_levels(), 1.0)], 0.0, 1.0).unwrap();
        let mut game = Game::new(spec.clone(), 0);
        for (t, y) in outcomes.into_iter().enumerate() {
            game.play_step(Features::default(), &mut oracle, y).unwrap();
            let budget = spec.bound() / (t + 1) as f64;
            prop_assert!(game.state().avg().norm_sq() <= budget + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn runs_replay_identically(seed in 0u64..1000, aci in any::<bool>()) {
        let cfg = ExperimentConfig {
            mode: Mode::Adversarial,
            oracle: if aci { OracleKind::Aci } else { OracleKind::Quantile },
            nature: NatureKind::Qce,
            horizon: 200,
            seed,
            ..Default::default()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        prop_assert_eq!(a.steps_csv().unwrap(), b.steps_csv().unwrap());
        prop_assert_eq!(a.report_json(), b.report_json());
    }
}
