//! Timestamped directed-edge event logs.
//!
//! An [`EventLog`] is the input every other layer consumes: a time-sorted
//! sequence of `(t, src, dst)` interactions on a dense node index set, observed
//! on a window `[0, T]`. Logs are loaded from the canonical CSV format
//! (`t,src,dst` with arbitrary string labels), split into train/test windows,
//! and summarised by their edge counts and node strengths.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventStoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: self-loop on node '{label}'")]
    SelfLoop { line: u64, label: String },
    #[error("event log is empty")]
    Empty,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("need at least {needed} events, got {got}")]
    TooFewEvents { needed: usize, got: usize },
    #[error("node label '{0}' is not part of the node universe")]
    UnknownLabel(String),
    #[error("invalid event log: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, EventStoreError>;

/// One directed interaction `src -> dst` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub src: usize,
    pub dst: usize,
}

impl Event {
    pub fn new(t: f64, src: usize, dst: usize) -> Self {
        Self { t, src, dst }
    }
}

/// Time-sorted directed events on nodes `0..n` observed over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    labels: Vec<String>,
    events: Vec<Event>,
    horizon: f64,
    time_unit: Option<f64>,
    time_origin: f64,
}

impl EventLog {
    /// Builds a log from events in arbitrary order. Events are stably sorted
    /// by time, so simultaneous events keep their input order.
    pub fn new(labels: Vec<String>, mut events: Vec<Event>, horizon: f64) -> Result<Self> {
        let n = labels.len();
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(EventStoreError::Invalid(format!("horizon {horizon} is not a finite nonnegative time")));
        }
        for e in &events {
            if !e.t.is_finite() || e.t < 0.0 || e.t > horizon {
                return Err(EventStoreError::Invalid(format!(
                    "event time {} outside window [0, {horizon}]",
                    e.t
                )));
            }
            if e.src >= n || e.dst >= n {
                return Err(EventStoreError::Invalid(format!(
                    "event ({}, {}) references a node outside 0..{n}",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(EventStoreError::Invalid(format!("self-loop on node {}", e.src)));
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self { labels, events, horizon, time_unit: None, time_origin: 0.0 })
    }

    /// Log on nodes labelled `"0".."n-1"`.
    pub fn with_node_count(n: usize, events: Vec<Event>, horizon: f64) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()).collect(), events, horizon)
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Unit applied by affine rescaling at load time, if any.
    pub fn time_unit(&self) -> Option<f64> {
        self.time_unit
    }

    /// Raw timestamp mapped to `t = 0`.
    pub fn time_origin(&self) -> f64 {
        self.time_origin
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.t).collect()
    }

    /// Same events observed on a different window end.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let last = self.events.last().map_or(0.0, |e| e.t);
        if !horizon.is_finite() || horizon < last {
            return Err(EventStoreError::Invalid(format!(
                "horizon {horizon} precedes the last event at {last}"
            )));
        }
        Ok(Self { horizon, ..self.clone() })
    }

    /// Re-expresses the log on a wider node universe given by `labels`.
    /// Every label of this log must appear in `labels`.
    pub fn reindex(&self, labels: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let map: Vec<usize> = self
            .labels
            .iter()
            .map(|l| index.get(l.as_str()).copied().ok_or_else(|| EventStoreError::UnknownLabel(l.clone())))
            .collect::<Result<_>>()?;
        let events = self
            .events
            .iter()
            .map(|e| Event::new(e.t, map[e.src], map[e.dst]))
            .collect();
        Ok(Self {
            labels: labels.to_vec(),
            events,
            horizon: self.horizon,
            time_unit: self.time_unit,
            time_origin: self.time_origin,
        })
    }

    /// Label lookup, for reporting.
    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }
}

/// What to do with `i -> i` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfLoopPolicy {
    #[default]
    Drop,
    Error,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub self_loops: SelfLoopPolicy,
    /// Rescale `t -> (t - t_min) / unit`.
    pub time_unit: Option<f64>,
    /// Window end in output time units; defaults to the last timestamp.
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub dropped_self_loops: usize,
}

pub fn load_events(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<(EventLog, LoadReport)> {
    read_events(File::open(path)?, opts)
}

/// Parses canonical CSV. A leading `t,src,dst` header is optional.
pub fn read_events<R: Read>(reader: R, opts: &LoadOptions) -> Result<(EventLog, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut intern = |label: &str| -> usize {
        if let Some(&i) = index.get(label) {
            return i;
        }
        labels.push(label.to_string());
        index.insert(label.to_string(), labels.len() - 1);
        labels.len() - 1
    };

    let mut raw: Vec<Event> = Vec::new();
    let mut report = LoadReport::default();
    let mut first = true;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if first {
            first = false;
            if rec.get(0) == Some("t") {
                continue;
            }
        }
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != 3 {
            return Err(EventStoreError::Malformed {
                line,
                reason: format!("expected 3 fields (t,src,dst), found {}", rec.len()),
            });
        }
        report.rows += 1;
        let t: f64 = rec[0].parse().map_err(|_| EventStoreError::Malformed {
            line,
            reason: format!("timestamp '{}' is not a number", &rec[0]),
        })?;
        if !t.is_finite() {
            return Err(EventStoreError::Malformed { line, reason: "timestamp is not finite".into() });
        }
        let (src, dst) = (&rec[1], &rec[2]);
        if src.is_empty() || dst.is_empty() {
            return Err(EventStoreError::Malformed { line, reason: "empty node label".into() });
        }
        if src == dst {
            match opts.self_loops {
                SelfLoopPolicy::Drop => {
                    report.dropped_self_loops += 1;
                    continue;
                }
                SelfLoopPolicy::Error => {
                    return Err(EventStoreError::SelfLoop { line, label: src.to_string() })
                }
            }
        }
        let (s, d) = (intern(src), intern(dst));
        raw.push(Event::new(t, s, d));
    }
    if report.dropped_self_loops > 0 {
        log::warn!("dropped {} self-loop rows", report.dropped_self_loops);
    }
    if raw.is_empty() {
        return Err(EventStoreError::Empty);
    }

    let mut origin = 0.0;
    if let Some(unit) = opts.time_unit {
        if !(unit.is_finite() && unit > 0.0) {
            return Err(EventStoreError::Invalid(format!("time unit {unit} must be positive")));
        }
        origin = raw.iter().map(|e| e.t).fold(f64::INFINITY, f64::min);
        for e in &mut raw {
            e.t = (e.t - origin) / unit;
        }
    } else if let Some(e) = raw.iter().find(|e| e.t < 0.0) {
        return Err(EventStoreError::Invalid(format!(
            "negative timestamp {} (use a time unit to rescale)",
            e.t
        )));
    }
    let last = raw.iter().map(|e| e.t).fold(0.0, f64::max);
    let horizon = opts.horizon.unwrap_or(last);
    let mut log = EventLog::new(labels, raw, horizon)?;
    log.time_unit = opts.time_unit;
    log.time_origin = origin;
    Ok((log, report))
}

/// Writes the canonical CSV (`t,src,dst` header, labels as node names).
/// Times use the shortest representation that parses back to the same `f64`.
pub fn write_events<W: Write>(log: &EventLog, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "src", "dst"])?;
    for e in log.events() {
        w.write_record([e.t.to_string().as_str(), log.label(e.src), log.label(e.dst)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_events(log: &EventLog, path: impl AsRef<Path>) -> Result<()> {
    write_events(log, std::io::BufWriter::new(File::create(path)?))
}

/// Where to cut a log into train and test windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitSpec {
    /// The first `n` events form the training window.
    ByCount(usize),
    /// Events strictly before this time form the training window.
    ByTime(f64),
}

/// Splits a log into `(train, test)`. The split point `τ` becomes the training
/// horizon, and test times are shifted to `t - τ` on the window `[0, T - τ]`.
/// For count splits `τ` is the time of the first test event.
pub fn split(log: &EventLog, spec: SplitSpec) -> Result<(EventLog, EventLog)> {
    let events = log.events();
    let (cut, tau) = match spec {
        SplitSpec::ByCount(k) => {
            if k == 0 || k >= events.len() {
                return Err(EventStoreError::InvalidSplit(format!(
                    "count boundary {k} must lie in 1..{}",
                    events.len()
                )));
            }
            (k, events[k].t)
        }
        SplitSpec::ByTime(tau) => {
            if !(tau > 0.0 && tau < log.horizon()) {
                return Err(EventStoreError::InvalidSplit(format!(
                    "time boundary {tau} must lie strictly inside (0, {})",
                    log.horizon()
                )));
            }
            (events.partition_point(|e| e.t < tau), tau)
        }
    };
    if cut == 0 || cut == events.len() {
        return Err(EventStoreError::InvalidSplit("one side of the split is empty".into()));
    }
    let train = EventLog {
        labels: log.labels.clone(),
        events: events[..cut].to_vec(),
        horizon: tau,
        time_unit: log.time_unit,
        time_origin: log.time_origin,
    };
    let test = EventLog {
        labels: log.labels.clone(),
        events: events[cut..].iter().map(|e| Event::new((e.t - tau).max(0.0), e.src, e.dst)).collect(),
        horizon: log.horizon() - tau,
        time_unit: log.time_unit,
        time_origin: log.time_origin + tau * log.time_unit.unwrap_or(1.0),
    };
    Ok((train, test))
}

/// Edge counts and node strengths of a log.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub counts: Array2<u64>,
    pub out_strength: Vec<u64>,
    pub in_strength: Vec<u64>,
    pub total: u64,
    pub unique_edges: usize,
}

impl SufficientStats {
    pub fn n_nodes(&self) -> usize {
        self.out_strength.len()
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[[i, j]]
    }
}

pub fn sufficient_stats(log: &EventLog) -> SufficientStats {
    let n = log.n_nodes();
    let mut counts = Array2::<u64>::zeros((n, n));
    let mut out_strength = vec![0u64; n];
    let mut in_strength = vec![0u64; n];
    for e in log.events() {
        counts[[e.src, e.dst]] += 1;
        out_strength[e.src] += 1;
        in_strength[e.dst] += 1;
    }
    let unique_edges = counts.iter().filter(|&&c| c > 0).count();
    SufficientStats { counts, out_strength, in_strength, total: log.len() as u64, unique_edges }
}

/// Moments of consecutive gaps in the merged event stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub mean: f64,
    /// Unbiased (n - 1 denominator).
    pub variance: f64,
    pub count: usize,
}

pub fn interevent_stats(log: &EventLog) -> Result<GapStats> {
    gap_stats(&log.times())
}

pub fn gap_stats(times: &[f64]) -> Result<GapStats> {
    if times.len() < 2 {
        return Err(EventStoreError::TooFewEvents { needed: 2, got: times.len() });
    }
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let variance = if gaps.len() > 1 {
        gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(GapStats { mean, variance, count: gaps.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(s: &str, opts: &LoadOptions) -> Result<(EventLog, LoadReport)> {
        read_events(s.as_bytes(), opts)
    }

    #[test]
    fn loads_and_sorts_three_rows() {
        let (log, rep) = load_str("0.5,a,b\n0.2,b,c\n0.9,a,c\n", &LoadOptions::default()).unwrap();
        assert_eq!(log.n_nodes(), 3);
        assert_eq!(log.labels(), ["a", "b", "c"]);
        assert_eq!(
            log.events(),
            [Event::new(0.2, 1, 2), Event::new(0.5, 0, 1), Event::new(0.9, 0, 2)]
        );
        assert_eq!(log.horizon(), 0.9);
        assert_eq!(rep.rows, 3);
    }

    #[test]
    fn header_is_optional() {
        let (a, _) = load_str("t,src,dst\n1,x,y\n", &LoadOptions::default()).unwrap();
        let (b, _) = load_str("1,x,y\n", &LoadOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(load_str("", &LoadOptions::default()), Err(EventStoreError::Empty)));
        assert!(matches!(load_str("t,src,dst\n", &LoadOptions::default()), Err(EventStoreError::Empty)));
    }

    #[test]
    fn self_loop_policies() {
        let csv = "0.5,a,b\n1.0,a,a\n";
        let (log, rep) = load_str(csv, &LoadOptions::default()).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(rep.dropped_self_loops, 1);
        let opts = LoadOptions { self_loops: SelfLoopPolicy::Error, ..Default::default() };
        match load_str(csv, &opts) {
            Err(EventStoreError::SelfLoop { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        match load_str("0.5,a,b\nxyz,a,b\n", &LoadOptions::default()) {
            Err(EventStoreError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_str("0.5,a\n", &LoadOptions::default()),
            Err(EventStoreError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn rescaling_records_unit() {
        let opts = LoadOptions { time_unit: Some(10.0), ..Default::default() };
        let (log, _) = load_str("100,a,b\n120,b,a\n150,a,b\n", &opts).unwrap();
        assert_eq!(log.times(), vec![0.0, 2.0, 5.0]);
        assert_eq!(log.time_unit(), Some(10.0));
        assert_eq!(log.time_origin(), 100.0);
        assert_eq!(log.horizon(), 5.0);
    }

    #[test]
    fn ties_keep_input_order() {
        let (log, _) = load_str("1,a,b\n1,c,d\n0,e,f\n1,b,a\n", &LoadOptions::default()).unwrap();
        let pairs: Vec<_> = log.events().iter().map(|e| (log.label(e.src), log.label(e.dst))).collect();
        assert_eq!(pairs, [("e", "f"), ("a", "b"), ("c", "d"), ("b", "a")]);
    }

    #[test]
    fn write_then_load_is_identity() {
        let csv = "0.30000000000000004,a,b\n0.1,b,\"c,d\"\n2.5e-7,a,\"c,d\"\n";
        let (log, _) = load_str(csv, &LoadOptions::default()).unwrap();
        let mut first = Vec::new();
        write_events(&log, &mut first).unwrap();
        let (again, _) = read_events(first.as_slice(), &LoadOptions::default()).unwrap();
        let mut second = Vec::new();
        write_events(&again, &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(log.times(), again.times());
    }

    fn ramp(k: usize) -> EventLog {
        let events = (0..k).map(|i| Event::new(i as f64, i % 3, (i + 1) % 3)).collect();
        EventLog::with_node_count(3, events, (k - 1) as f64).unwrap()
    }

    #[test]
    fn split_by_count() {
        let log = ramp(4000);
        let (train, test) = split(&log, SplitSpec::ByCount(3000)).unwrap();
        assert_eq!(train.len(), 3000);
        assert_eq!(test.len(), 1000);
        assert_eq!(train.horizon(), 3000.0);
        assert_eq!(test.times()[0], 0.0);
        assert_eq!(test.horizon(), 999.0);
        assert_eq!(train.n_nodes(), test.n_nodes());

        let (a, b) = split(&ramp(2), SplitSpec::ByCount(1)).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn split_rejects_degenerate_boundaries() {
        let log = ramp(10);
        assert!(split(&log, SplitSpec::ByTime(log.horizon())).is_err());
        assert!(split(&log, SplitSpec::ByTime(0.0)).is_err());
        assert!(split(&log, SplitSpec::ByCount(0)).is_err());
        assert!(split(&log, SplitSpec::ByCount(10)).is_err());
        let (train, test) = split(&log, SplitSpec::ByTime(4.5)).unwrap();
        assert_eq!((train.len(), test.len()), (5, 5));
        assert_eq!(test.times()[0], 0.5);
    }

    #[test]
    fn counts_strengths_and_unique_edges() {
        let log = EventLog::with_node_count(
            2,
            vec![Event::new(0.1, 0, 1), Event::new(0.2, 0, 1), Event::new(0.3, 1, 0)],
            1.0,
        )
        .unwrap();
        let s = sufficient_stats(&log);
        assert_eq!(s.count(0, 1), 2);
        assert_eq!(s.count(1, 0), 1);
        assert_eq!(s.out_strength, vec![2, 1]);
        assert_eq!(s.in_strength, vec![1, 2]);
        assert_eq!(s.total, 3);
        assert_eq!(s.unique_edges, 2);

        let empty = sufficient_stats(&EventLog::with_node_count(3, vec![], 1.0).unwrap());
        assert_eq!(empty.total, 0);
        assert_eq!(empty.unique_edges, 0);
        assert!(empty.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn gap_moments() {
        let g = gap_stats(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!((g.mean, g.variance, g.count), (1.0, 0.0, 3));
        // gaps 1 and 2: mean 1.5, unbiased variance ((0.5)^2 + (0.5)^2) / 1
        let g = gap_stats(&[0.0, 1.0, 3.0]).unwrap();
        assert_eq!((g.mean, g.variance, g.count), (1.5, 0.5, 2));
        assert!(matches!(gap_stats(&[1.0]), Err(EventStoreError::TooFewEvents { .. })));
    }

    #[test]
    fn reindex_onto_wider_universe() {
        let (log, _) = load_str("0.1,b,a\n", &LoadOptions::default()).unwrap();
        let universe: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let wide = log.reindex(&universe).unwrap();
        assert_eq!(wide.events(), [Event::new(0.1, 1, 0)]);
        assert!(log.reindex(&universe[..1]).is_err());
    }
}
