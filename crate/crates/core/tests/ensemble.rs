use metn_core::ensemble::Bundle;
use metn_core::event_store::{sufficient_stats, write_events};
use metn_core::mark_layer::{edge_poisson_weights, sender_partition_weights, EdgePartition};
use metn_core::{EnsembleModel, Event, EventLog, Mask, TimeModel};
use proptest::prelude::*;

const T: f64 = 50.0;

fn arb_log() -> impl Strategy<Value = EventLog> {
    (2usize..6).prop_flat_map(|n| {
        prop::collection::vec((0.0f64..T, 0..n, 1..n), 2..50).prop_map(move |raw| {
            let events = raw.into_iter().map(|(t, i, d)| Event::new(t, i, (i + d) % n)).collect();
            EventLog::with_node_count(n, events, T).unwrap()
        })
    })
}

fn arb_profile() -> impl Strategy<Value = TimeModel> {
    prop_oneof![
        (0.1f64..3.0).prop_map(|r| TimeModel::poisson(r, T).unwrap()),
        (0.1f64..2.0, 0.0f64..0.9, 0.2f64..4.0).prop_map(|(m, e, b)| TimeModel::hawkes_exp(m, e, b, T).unwrap()),
        (0.1f64..2.0, 0.0f64..0.9, 0.2f64..2.0, 1.5f64..3.0)
            .prop_map(|(m, e, c, g)| TimeModel::hawkes_pl(m, e, c, g, T).unwrap()),
    ]
}

fn global(log: &EventLog, profile: TimeModel) -> EnsembleModel {
    let stats = sufficient_stats(log);
    let marks = edge_poisson_weights(&stats).unwrap();
    EnsembleModel::assemble("global", log.labels().to_vec(), vec![profile], marks, vec![stats.total as f64]).unwrap()
}

fn per_sender(log: &EventLog, profile: &TimeModel) -> EnsembleModel {
    let stats = sufficient_stats(log);
    let marks = sender_partition_weights(&stats, &Mask::observed(&stats)).unwrap();
    let n = log.n_nodes();
    let budgets = stats.out_strength.iter().map(|&s| s as f64).collect();
    EnsembleModel::assemble("sender", log.labels().to_vec(), vec![profile.clone(); n], marks, budgets).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn joint_loglik_splits_into_time_and_marks(log in arb_log(), profile in arb_profile()) {
        for model in [global(&log, profile.clone()), per_sender(&log, &profile)] {
            let joint = model.joint_log_likelihood(&log).unwrap();
            let direct = model.log_likelihood_direct(&log).unwrap();
            prop_assert!((joint.total - (joint.time_part + joint.mark_part)).abs() < 1e-9 * (1.0 + joint.total.abs()));
            prop_assert!((joint.total - direct).abs() <= 1e-9 * (1.0 + direct.abs()), "{} vs {}", joint.total, direct);
            prop_assert_eq!(joint.events, log.len());
        }
    }

    #[test]
    fn scaled_parts_meet_their_budgets(log in arb_log(), profile in arb_profile()) {
        let model = per_sender(&log, &profile);
        for (g, &b) in model.time_models().iter().zip(model.budgets()) {
            prop_assert!((g.expected_count() - b).abs() <= 1e-9 * b.max(1.0));
        }
        let integrated = model.integrated_intensities().sum();
        prop_assert!((integrated - log.len() as f64).abs() <= 1e-8 * log.len() as f64);
    }
}

#[test]
fn bundle_roundtrip_is_lossless() {
    let log = EventLog::with_node_count(
        4,
        (0..40).map(|k| Event::new(k as f64 + 0.5, k % 4, (k + 1 + k / 4 % 3) % 4)).collect(),
        T,
    )
    .unwrap();
    let model = per_sender(&log, &TimeModel::hawkes_exp(0.3, 0.4, 1.3, T).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let mut bundle = Bundle::new(model.clone());
    bundle.notes.push("hello".into());
    bundle.save(dir.path()).unwrap();
    let back = Bundle::load(dir.path()).unwrap();
    assert_eq!(back.notes, vec!["hello".to_string()]);
    assert_eq!(back.model.budgets(), model.budgets());
    assert_eq!(back.model.scales(), model.scales());
    assert_eq!(back.model.marks().weights(), model.marks().weights());
    assert_eq!(back.model.marks().partition(), &EdgePartition::BySender);
    assert_eq!(back.model.labels(), model.labels());
    assert_eq!(back.model.log_likelihood_direct(&log).unwrap(), model.log_likelihood_direct(&log).unwrap());
    assert_eq!(back.model.sample(11), model.sample(11));
}

#[test]
fn corrupt_bundle_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Bundle::load(dir.path()).is_err());
    std::fs::write(dir.path().join("manifest.json"), "{ not json").unwrap();
    assert!(Bundle::load(dir.path()).is_err());
}

#[test]
fn sampling_is_seeded_and_budget_matched() {
    let log = EventLog::with_node_count(
        3,
        (0..30).map(|k| Event::new(k as f64, k % 3, (k + 1) % 3)).collect(),
        T,
    )
    .unwrap();
    let model = global(&log, TimeModel::poisson(1.0, T).unwrap());
    let (a, b) = (model.sample(5), model.sample(5));
    let (mut x, mut y) = (Vec::new(), Vec::new());
    write_events(&a, &mut x).unwrap();
    write_events(&b, &mut y).unwrap();
    assert_eq!(x, y);
    let reps = 400;
    let mean = (0..reps).map(|s| model.sample(s).len() as f64).sum::<f64>() / reps as f64;
    // Poisson total with mean 30: the sample mean has SE sqrt(30 / 400).
    assert!((mean - 30.0).abs() < 4.0 * (30.0f64 / reps as f64).sqrt(), "mean {mean}");
    for e in a.events() {
        assert!(model.marks().prob(e.src, e.dst) > 0.0);
    }
}

#[test]
fn window_transfer_rescales_budgets() {
    let log = EventLog::with_node_count(2, (0..10).map(|k| Event::new(k as f64, k % 2, 1 - k % 2)).collect(), T).unwrap();
    let model = global(&log, TimeModel::hawkes_exp(0.1, 0.5, 1.0, T).unwrap());
    let moved = model.for_window(20.0, 0.5).unwrap();
    assert_eq!(moved.horizon(), 20.0);
    assert!((moved.total_budget() - 5.0).abs() < 1e-12);
    assert!((moved.time_models()[0].expected_count() - 5.0).abs() < 1e-9);
}

#[test]
fn mismatched_parts_are_rejected() {
    let log = EventLog::with_node_count(2, vec![Event::new(1.0, 0, 1)], T).unwrap();
    let marks = edge_poisson_weights(&sufficient_stats(&log)).unwrap();
    let p = TimeModel::poisson(1.0, T).unwrap();
    assert!(EnsembleModel::assemble("x", log.labels().to_vec(), vec![p.clone(), p.clone()], marks.clone(), vec![1.0]).is_err());
    assert!(EnsembleModel::assemble("x", log.labels().to_vec(), vec![p.clone()], marks.clone(), vec![-1.0]).is_err());
    let other = TimeModel::poisson(1.0, 2.0 * T).unwrap();
    assert!(EnsembleModel::assemble("x", vec!["a".into()], vec![other], marks, vec![1.0]).is_err());
}
