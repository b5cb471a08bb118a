use metn_core::diagnostics::{
    block_unique_edge_heatmap, default_motif_window, degree_clustering_scatter, motif_counts, motif_table,
    raster_export, Cell, Column, MotifKind, RasterGroup, ReportTable, ScatterSource,
};
use metn_core::event_store::sufficient_stats;
use metn_core::mark_layer::{edge_poisson_weights, BlockMap};
use metn_core::{EnsembleModel, Event, EventLog, TimeModel};
use proptest::prelude::*;

fn arb_log() -> impl Strategy<Value = EventLog> {
    (2usize..6).prop_flat_map(|n| {
        // Coarse times so that ties occur.
        prop::collection::vec((0u32..40, 0..n, 1..n), 0..60).prop_map(move |raw| {
            let events = raw.into_iter().map(|(t, i, d)| Event::new(t as f64 * 0.25, i, (i + d) % n)).collect();
            EventLog::with_node_count(n, events, 10.0).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn motif_sweep_matches_all_pairs(log in arb_log(), window in 0.1f64..5.0) {
        let ev = log.events();
        let mut counts = [0u64; 4];
        let mut opportunities = 0u64;
        for a in ev {
            for b in ev {
                let dt = b.t - a.t;
                if dt > 0.0 && dt <= window {
                    opportunities += 1;
                    for (c, kind) in counts.iter_mut().zip(MotifKind::ALL) {
                        *c += u64::from(kind.matches((a.src, a.dst), (b.src, b.dst)));
                    }
                }
            }
        }
        for (k, m) in motif_counts(&log, window).unwrap().iter().enumerate() {
            prop_assert_eq!(m.kind, MotifKind::ALL[k]);
            prop_assert_eq!(m.count, counts[k]);
            prop_assert_eq!(m.opportunities, opportunities);
            prop_assert!((0.0..=1.0).contains(&m.rate));
        }
    }

    #[test]
    fn raster_ranks_are_bounded(log in arb_log(), top_k in 1usize..4) {
        let table = raster_export(&log, top_k, RasterGroup::Node).unwrap();
        table.validate().unwrap();
        for r in table.column("rank").unwrap() {
            let rank = r.as_f64().unwrap();
            prop_assert!(rank >= 1.0 && rank <= top_k as f64);
        }
    }
}

#[test]
fn motif_window_defaults_to_ten_median_gaps() {
    let times = [0.0, 1.0, 2.0, 4.0, 8.0];
    let log = EventLog::with_node_count(2, times.iter().map(|&t| Event::new(t, 0, 1)).collect(), 8.0).unwrap();
    // Gaps 1, 1, 2, 4: median 1.5.
    assert_eq!(default_motif_window(&log), 15.0);
    let empty = EventLog::with_node_count(2, vec![], 1.0).unwrap();
    assert_eq!(default_motif_window(&empty), 1.0);
    assert!(motif_counts(&log, 0.0).is_err());
}

#[test]
fn tables_enforce_their_schema() {
    let mut t = ReportTable::new("t", vec![Column::text("name"), Column::float("x").nullable()]);
    t.push(vec!["a".into(), 1.5.into()]).unwrap();
    t.push(vec!["b".into(), Cell::Empty]).unwrap();
    assert!(t.push(vec!["c".into()]).is_err());
    assert!(t.push(vec![1.5.into(), "c".into()]).is_err());
    let mut strict = ReportTable::new("s", vec![Column::float("x")]);
    assert!(strict.push(vec![Cell::Empty]).is_err());

    let mut out = Vec::new();
    t.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "name,x\na,1.5\nb,\n");

    let mut other = ReportTable::new("u", vec![Column::text("name")]);
    assert!(other.append(t.clone()).is_err());
    other = ReportTable::new("u", t.columns().to_vec());
    other.append(t.clone()).unwrap();
    assert_eq!(other.len(), 2);

    let tagged = t.with_leading_column(Column::text("case"), "c1".into()).unwrap();
    assert_eq!(tagged.columns()[0].name, "case");
    assert!(tagged.rows().iter().all(|r| r[0].as_str() == Some("c1")));
}

#[test]
fn saved_tables_carry_schema_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let log = EventLog::with_node_count(3, vec![Event::new(0.0, 0, 1), Event::new(0.5, 1, 2)], 1.0).unwrap();
    let mut t = motif_table(&[("data", 0, &log)], 1.0).unwrap();
    t.flag("example");
    t.save(dir.path()).unwrap();
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("motifs.schema.json")).unwrap()).unwrap();
    assert_eq!(schema["rows"], 4);
    assert_eq!(schema["flags"][0], "example");
    let csv = std::fs::read_to_string(dir.path().join("motifs.csv")).unwrap();
    assert!(csv.starts_with("source,replicate,motif,window,count,opportunities,rate\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn heatmap_residual_is_expected_minus_observed() {
    let events: Vec<Event> = (0..20).map(|k| Event::new(k as f64, k % 4, (k + 1 + k % 3) % 4)).filter(|e| e.src != e.dst).collect();
    let log = EventLog::with_node_count(4, events, 20.0).unwrap();
    let stats = sufficient_stats(&log);
    let model = EnsembleModel::assemble(
        "edge",
        log.labels().to_vec(),
        vec![TimeModel::poisson(1.0, 20.0).unwrap()],
        edge_poisson_weights(&stats).unwrap(),
        vec![stats.total as f64],
    )
    .unwrap();
    let blocks = BlockMap::new(&[0, 0, 1, 1]);
    let (obs, exp, res) = block_unique_edge_heatmap(&log, &model, &blocks).unwrap();
    assert_eq!(obs.len(), 4);
    let total_obs: f64 = obs.column("value").unwrap().iter().map(|c| c.as_f64().unwrap()).sum();
    assert_eq!(total_obs, stats.unique_edges as f64);
    for k in 0..4 {
        let (o, e, r) = (obs.rows()[k][2].as_f64().unwrap(), exp.rows()[k][2].as_f64().unwrap(), res.rows()[k][2].as_f64().unwrap());
        assert!((r - (e - o)).abs() < 1e-12);
        assert!(e <= o + 1e-12, "expected unique dyads cannot exceed the support");
    }
    let scatter = degree_clustering_scatter(ScatterSource::Model(&model)).unwrap();
    assert_eq!(scatter.len(), 4);
    scatter.validate().unwrap();
}
