use metn_core::time_layer::{fit, FitOptions, TimeKind, TimeModel};
use proptest::prelude::*;

const WINDOW: f64 = 20.0;

fn arb_model() -> impl Strategy<Value = TimeModel> {
    prop_oneof![
        (0.1f64..5.0).prop_map(|r| TimeModel::poisson(r, WINDOW).unwrap()),
        prop::collection::vec(0.0f64..3.0, 1..6).prop_map(|rates| {
            let b = rates.len();
            let edges = (0..=b).map(|k| WINDOW * k as f64 / b as f64).collect();
            TimeModel::nhpp(edges, rates, WINDOW).unwrap()
        }),
        (0.1f64..3.0, 0.0f64..0.95, 0.1f64..5.0)
            .prop_map(|(mu, eta, beta)| TimeModel::hawkes_exp(mu, eta, beta, WINDOW).unwrap()),
        (0.1f64..3.0, 0.0f64..0.95, 0.1f64..2.0, 1.2f64..4.0)
            .prop_map(|(mu, eta, c, gamma)| TimeModel::hawkes_pl(mu, eta, c, gamma, WINDOW).unwrap()),
    ]
}

fn arb_times() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..WINDOW, 0..40).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn loglik_matches_pointwise_intensity(model in arb_model(), times in arb_times()) {
        let mut direct = -model.compensator(&times, WINDOW).unwrap();
        for (k, &t) in times.iter().enumerate() {
            direct += model.intensity(&times[..k], t).unwrap().ln();
        }
        let ll = model.log_likelihood(&times).unwrap();
        prop_assert!((ll - direct).abs() <= 1e-9 * (1.0 + direct.abs()), "{} vs {}", ll, direct);
    }

    #[test]
    fn rescaled_gaps_telescope(model in arb_model(), times in arb_times()) {
        prop_assume!(!times.is_empty());
        let gaps = model.compensator_transform(&times).unwrap();
        let last = *times.last().unwrap();
        let expected = model.compensator(&times[..times.len() - 1], last).unwrap();
        let sum: f64 = gaps.iter().sum();
        prop_assert!(gaps.iter().all(|&g| g >= -1e-12));
        prop_assert!((sum - expected).abs() <= 1e-9 * (1.0 + expected));
    }

    #[test]
    fn scaling_is_linear_in_expected_count(model in arb_model(), factor in 0.0f64..10.0) {
        let base = model.expected_count();
        let scaled = model.scaled(factor).unwrap().expected_count();
        prop_assert!((scaled - factor * base).abs() <= 1e-9 * (1.0 + factor * base));
    }

    #[test]
    fn serde_roundtrip(model in arb_model()) {
        let json = serde_json::to_string(&model).unwrap();
        let back: TimeModel = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, model);
    }
}

#[test]
fn seeded_simulation_is_reproducible() {
    let m = TimeModel::hawkes_exp(1.0, 0.5, 2.0, 100.0).unwrap();
    assert_eq!(m.simulate_seeded(7), m.simulate_seeded(7));
    assert_ne!(m.simulate_seeded(7), m.simulate_seeded(8));
    let times = m.simulate_seeded(7);
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
    assert!(times.iter().all(|&t| (0.0..=100.0).contains(&t)));
}

#[test]
fn poisson_fit_is_the_closed_form_mle() {
    let times: Vec<f64> = (0..37).map(|k| k as f64 * 0.25).collect();
    let r = fit(TimeKind::Poisson, &times, 10.0, &FitOptions::default()).unwrap();
    let metn_core::TimeParams::Poisson { rate } = *r.model.params() else { panic!() };
    assert!((rate - 3.7).abs() < 1e-12);
    let ll = 37.0 * 3.7f64.ln() - 37.0;
    assert!((r.loglik - ll).abs() < 1e-9);
}

#[test]
fn hawkes_fit_beats_poisson_on_clustered_data() {
    let m = TimeModel::hawkes_exp(0.5, 0.7, 3.0, 500.0).unwrap();
    let times = m.simulate_seeded(3);
    let opts = FitOptions { seed: 1, ..Default::default() };
    let h = fit(TimeKind::HawkesExp, &times, 500.0, &opts).unwrap();
    let p = fit(TimeKind::Poisson, &times, 500.0, &opts).unwrap();
    assert!(h.loglik > p.loglik);
    assert!(h.loglik >= m.log_likelihood(&times).unwrap() - 1e-6);
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(TimeModel::hawkes_exp(1.0, 1.0, 2.0, 10.0).is_err());
    assert!(TimeModel::poisson(-1.0, 10.0).is_err());
    assert!(TimeModel::hawkes_pl(1.0, 0.5, 0.5, 1.0, 10.0).is_err());
    let m = TimeModel::poisson(1.0, 10.0).unwrap();
    assert!(m.log_likelihood(&[2.0, 1.0]).is_err());
    assert!(m.log_likelihood(&[11.0]).is_err());
}
