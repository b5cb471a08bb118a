use metn_core::event_store::{sufficient_stats, SufficientStats};
use metn_core::mark_layer::{
    block_degree_mask, block_unique_counts, check_feasibility, ipfp_strength_weights, mark_log_likelihood,
    read_weights_csv, sender_partition_weights, write_weights_csv, BlockMap, IpfpOptions, MarginTargets, Quotas,
    WeightsSidecar,
};
use metn_core::{Event, EventLog, Mask};
use ndarray::Array2;
use proptest::prelude::*;

/// Positive weights on a random mask with every row and column nonempty;
/// its margins are feasible by construction.
fn arb_feasible() -> impl Strategy<Value = (Mask, MarginTargets)> {
    (2usize..8).prop_flat_map(|n| {
        (prop::collection::vec(any::<bool>(), n * n), prop::collection::vec(0.1f64..10.0, n * n)).prop_map(
            move |(bits, w)| {
                let mask = Mask::from_fn(n, |i, j| i != j && (bits[i * n + j] || j == (i + 1) % n));
                let mut out = vec![0.0; n];
                let mut inn = vec![0.0; n];
                for (i, j) in mask.pairs() {
                    out[i] += w[i * n + j];
                    inn[j] += w[i * n + j];
                }
                (mask, MarginTargets::new(out, inn).unwrap())
            },
        )
    })
}

fn arb_stats() -> impl Strategy<Value = (SufficientStats, BlockMap)> {
    (3usize..9, 1usize..4).prop_flat_map(|(n, b)| {
        (prop::collection::vec((0..n, 1..n), 1..80), prop::collection::vec(0..b, n)).prop_map(move |(raw, assign)| {
            let events = raw.iter().enumerate().map(|(k, &(i, d))| Event::new(k as f64, i, (i + d) % n)).collect();
            let log = EventLog::with_node_count(n, events, raw.len() as f64).unwrap();
            (sufficient_stats(&log), BlockMap::new(&assign))
        })
    })
}

fn margins(w: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    (w.rows().into_iter().map(|r| r.sum()).collect(), w.columns().into_iter().map(|c| c.sum()).collect())
}

proptest! {
    #[test]
    fn scaling_matches_margins_on_support((mask, targets) in arb_feasible()) {
        prop_assert!(check_feasibility(&targets, &mask).feasible);
        let (w, report) = ipfp_strength_weights(&targets, &mask, &IpfpOptions::default()).unwrap();
        prop_assert!(report.converged);
        let (rows, cols) = margins(w.weights());
        let scale = targets.total().max(1.0);
        for i in 0..mask.n_nodes() {
            prop_assert!((rows[i] - targets.out_strength[i]).abs() <= 1e-7 * scale);
            prop_assert!((cols[i] - targets.in_strength[i]).abs() <= 1e-7 * scale);
            for j in 0..mask.n_nodes() {
                prop_assert!(mask.contains(i, j) || w.weight(i, j) == 0.0);
            }
        }
    }

    #[test]
    fn scaling_commutes_with_target_scaling((mask, targets) in arb_feasible(), c in 0.01f64..100.0) {
        let opts = IpfpOptions::default();
        let (w1, _) = ipfp_strength_weights(&targets, &mask, &opts).unwrap();
        let (w2, _) = ipfp_strength_weights(&targets.scaled(c), &mask, &opts).unwrap();
        let diff = (w2.weights() - &(w1.weights() * c)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        prop_assert!(diff <= 1e-6 * c * targets.total().max(1.0));
        let pdiff = (w1.probs() - w2.probs()).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        prop_assert!(pdiff <= 1e-8);
    }

    #[test]
    fn block_mask_meets_quotas((stats, blocks) in arb_stats()) {
        let (mask, report) = block_degree_mask(&stats, &blocks, &Quotas::FromData).unwrap();
        let want = block_unique_counts(&stats, &blocks);
        let mut got = Array2::<usize>::zeros(want.dim());
        for (i, j) in mask.pairs() {
            got[[blocks.block_of(i), blocks.block_of(j)]] += 1;
        }
        prop_assert_eq!(&got, &want);
        prop_assert!(report.zero_count_fills.is_empty());
        // Data quotas keep exactly the observed support.
        prop_assert_eq!(mask, Mask::observed(&stats));
    }

    #[test]
    fn sender_rows_are_distributions((stats, _) in arb_stats()) {
        let w = sender_partition_weights(&stats, &Mask::observed(&stats)).unwrap();
        prop_assert_eq!(w.n_parts(), stats.n_nodes());
        let probs = w.probs();
        for i in 0..stats.n_nodes() {
            let row = probs.row(i).sum();
            if stats.out_strength[i] > 0 {
                prop_assert!((row - 1.0).abs() < 1e-12);
            } else {
                prop_assert_eq!(row, 0.0);
            }
        }
    }

    #[test]
    fn weights_csv_roundtrip((mask, targets) in arb_feasible()) {
        let (w, _) = ipfp_strength_weights(&targets, &mask, &IpfpOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_weights_csv(&w, &mut buf).unwrap();
        let back = read_weights_csv(buf.as_slice(), WeightsSidecar::of(&w, None)).unwrap();
        prop_assert_eq!(back.weights(), w.weights());
        prop_assert_eq!(back.mask(), w.mask());
    }
}

#[test]
fn explicit_quotas_fill_by_count_then_lexicographically() {
    // Block 0 = {0, 1, 2}; only 2 -> 1 is active.
    let log = EventLog::with_node_count(3, vec![Event::new(0.0, 2, 1), Event::new(1.0, 2, 1)], 1.0).unwrap();
    let stats = sufficient_stats(&log);
    let blocks = BlockMap::new(&[0, 0, 0]);
    let (mask, report) = block_degree_mask(&stats, &blocks, &Quotas::Explicit(Array2::from_elem((1, 1), 3))).unwrap();
    assert_eq!(mask.pairs(), vec![(0, 1), (0, 2), (2, 1)]);
    assert_eq!(report.zero_count_fills, vec![(0, 0, 2)]);
    assert!(block_degree_mask(&stats, &blocks, &Quotas::Explicit(Array2::from_elem((1, 1), 7))).is_err());
}

#[test]
fn infeasible_margins_yield_a_cut() {
    // Nodes 0 and 1 may only send to node 2, which cannot absorb their total.
    let mask = Mask::from_pairs(4, [(0, 2), (1, 2), (2, 3), (3, 0), (3, 1)]).unwrap();
    let targets = MarginTargets::new(vec![2.0, 2.0, 1.0, 1.0], vec![1.0, 1.0, 1.0, 3.0]).unwrap();
    let report = check_feasibility(&targets, &mask);
    assert!(!report.feasible);
    assert!(report.deficit > 0.0);
    assert!(report.cut_rows.contains(&0) && report.cut_rows.contains(&1));
    assert!(report.cut_cols.contains(&2));
    let (sum_rows, sum_cols): (f64, f64) = (
        report.cut_rows.iter().map(|&i| targets.out_strength[i]).sum(),
        report.cut_cols.iter().map(|&j| targets.in_strength[j]).sum(),
    );
    assert!(sum_rows > sum_cols);
}

#[test]
fn unsupported_marks_give_minus_infinity() {
    let log = EventLog::with_node_count(3, vec![Event::new(0.0, 0, 1), Event::new(1.0, 1, 2)], 2.0).unwrap();
    let train = EventLog::with_node_count(3, vec![Event::new(0.0, 0, 1)], 1.0).unwrap();
    let w = sender_partition_weights(&sufficient_stats(&train), &Mask::observed(&sufficient_stats(&train))).unwrap();
    let ll = mark_log_likelihood(&w, &log).unwrap();
    assert_eq!(ll.value, f64::NEG_INFINITY);
    assert_eq!(ll.supported_events, 1);
    assert_eq!(ll.unsupported.len(), 1);
    assert_eq!((ll.unsupported[0].src, ll.unsupported[0].dst), (1, 2));
}
