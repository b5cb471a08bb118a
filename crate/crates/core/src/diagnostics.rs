//! Plot-ready report tables derived from logs and models.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{clustering_from_probabilities, EnsembleError, EnsembleModel};
use crate::event_store::{gap_stats, sufficient_stats, EventLog};
use crate::mark_layer::BlockMap;
use crate::time_layer::{implied_gap_moments, MomentOptions, TimeError, TimeModel, TimeParams};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("table {table}: {reason}")]
    Schema { table: String, reason: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("expected {expected} nodes, got {got}")]
    NodeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DiagError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int,
    Float,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnType,
    pub nullable: bool,
}

impl Column {
    pub fn int(name: &str) -> Self {
        Self { name: name.into(), kind: ColumnType::Int, nullable: false }
    }

    pub fn float(name: &str) -> Self {
        Self { name: name.into(), kind: ColumnType::Float, nullable: false }
    }

    pub fn text(name: &str) -> Self {
        Self { name: name.into(), kind: ColumnType::Text, nullable: false }
    }

    pub fn nullable(mut self) -> Self {
        self.nullable = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Int(v) => Some(v as f64),
            Cell::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

/// A named rectangular table whose rows are checked against its schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    name: String,
    columns: Vec<Column>,
    rows: Vec<Vec<Cell>>,
    flags: Vec<String>,
}

#[derive(Serialize)]
struct Schema<'a> {
    name: &'a str,
    columns: &'a [Column],
    rows: usize,
    flags: &'a [String],
}

impl ReportTable {
    pub fn new(name: &str, columns: Vec<Column>) -> Self {
        Self { name: name.into(), columns, rows: Vec::new(), flags: Vec::new() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn flag(&mut self, flag: impl Into<String>) {
        self.flags.push(flag.into());
    }

    fn schema_error(&self, reason: String) -> DiagError {
        DiagError::Schema { table: self.name.clone(), reason }
    }

    fn check_row(&self, row: &[Cell]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(self.schema_error(format!("row has {} cells, schema has {}", row.len(), self.columns.len())));
        }
        for (cell, col) in row.iter().zip(&self.columns) {
            let ok = match (cell, col.kind) {
                (Cell::Empty, _) => col.nullable,
                (Cell::Int(_), ColumnType::Int) | (Cell::Float(_), ColumnType::Float) | (Cell::Text(_), ColumnType::Text) => true,
                _ => false,
            };
            if !ok {
                return Err(self.schema_error(format!("cell {cell:?} does not fit column {:?}", col.name)));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        self.check_row(&row)?;
        self.rows.push(row);
        Ok(())
    }

    /// Index of a column by name.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let k = self.column_index(name)?;
        Some(self.rows.iter().map(|r| &r[k]).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.rows.iter().try_for_each(|r| self.check_row(r))
    }

    /// Prepends a column holding `value` in every row.
    pub fn with_leading_column(mut self, column: Column, value: Cell) -> Result<Self> {
        self.columns.insert(0, column);
        for row in &mut self.rows {
            row.insert(0, value.clone());
        }
        self.validate()?;
        Ok(self)
    }

    /// Appends the rows and flags of a table with the same columns.
    pub fn append(&mut self, other: ReportTable) -> Result<()> {
        if other.columns != self.columns {
            return Err(self.schema_error(format!("cannot append table {:?} with different columns", other.name)));
        }
        self.rows.extend(other.rows);
        self.flags.extend(other.flags);
        Ok(())
    }

    pub fn renamed(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.validate()?;
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            wtr.write_record(row.iter().map(Cell::render))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn schema_json(&self) -> serde_json::Value {
        serde_json::to_value(Schema { name: &self.name, columns: &self.columns, rows: self.rows.len(), flags: &self.flags })
            .expect("schema serialises")
    }

    /// Writes `<name>.csv` and `<name>.schema.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut w = BufWriter::new(File::create(dir.join(format!("{}.csv", self.name)))?);
        self.write_csv(&mut w)?;
        w.flush()?;
        let mut s = BufWriter::new(File::create(dir.join(format!("{}.schema.json", self.name)))?);
        serde_json::to_writer_pretty(&mut s, &self.schema_json())?;
        s.write_all(b"\n")?;
        s.flush()?;
        Ok(())
    }
}

/// One row of the inter-event table.
#[derive(Debug, Clone, Copy)]
pub struct IntereventInput<'a> {
    pub dataset: &'a str,
    pub split: &'a str,
    pub log: &'a EventLog,
    pub poisson: Option<&'a TimeModel>,
    pub hawkes_exp: Option<&'a TimeModel>,
    pub hawkes_pl: Option<&'a TimeModel>,
}

/// Empirical gap moments next to model-implied ones. Missing fits leave
/// their columns empty and add a flag.
pub fn interevent_table(inputs: &[IntereventInput<'_>], moments: &MomentOptions) -> Result<ReportTable> {
    let mut table = ReportTable::new(
        "interevent",
        vec![
            Column::text("dataset"),
            Column::text("split"),
            Column::float("emp_mean").nullable(),
            Column::float("emp_var").nullable(),
            Column::int("gaps"),
            Column::float("poisson_mean").nullable(),
            Column::float("poisson_var").nullable(),
            Column::float("hawkes_exp_mean").nullable(),
            Column::float("hawkes_exp_var").nullable(),
            Column::float("hawkes_pl_mean").nullable(),
            Column::float("hawkes_pl_var").nullable(),
        ],
    );
    for input in inputs {
        let gaps = gap_stats(&input.log.times()).ok();
        let mut row: Vec<Cell> = vec![
            input.dataset.into(),
            input.split.into(),
            gaps.map(|g| g.mean).into(),
            gaps.map(|g| g.variance).into(),
            gaps.map_or(0, |g| g.count).into(),
        ];
        match input.poisson.map(TimeModel::params) {
            Some(&TimeParams::Poisson { rate }) if rate > 0.0 => {
                row.push((1.0 / rate).into());
                row.push((1.0 / (rate * rate)).into());
            }
            _ => {
                row.extend([Cell::Empty, Cell::Empty]);
                table.flag(format!("{}/{}: no Poisson fit", input.dataset, input.split));
            }
        }
        for (name, model) in [("hawkes-exp", input.hawkes_exp), ("hawkes-pl", input.hawkes_pl)] {
            match model {
                Some(m) if m.stationary_rate() > 0.0 => {
                    let g = implied_gap_moments(m, moments)?;
                    row.push(g.mean.into());
                    row.push(g.variance.into());
                }
                _ => {
                    row.extend([Cell::Empty, Cell::Empty]);
                    table.flag(format!("{}/{}: no {name} fit", input.dataset, input.split));
                }
            }
        }
        table.push(row)?;
    }
    if inputs.iter().any(|i| i.hawkes_exp.is_some() || i.hawkes_pl.is_some()) {
        table.flag(format!("hawkes variances simulated from about {} events, seed {}", moments.events, moments.seed));
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotifKind {
    /// `(i→j, j→i)`
    Reciprocity,
    /// `(i→j, i→k)`, `k ≠ j`
    Broadcast,
    /// `(i→k, j→k)`, `j ≠ i`
    Convergence,
    /// `(i→j, i→j)`
    Repeat,
}

impl MotifKind {
    pub const ALL: [MotifKind; 4] = [Self::Reciprocity, Self::Broadcast, Self::Convergence, Self::Repeat];

    pub fn name(self) -> &'static str {
        match self {
            Self::Reciprocity => "reciprocity",
            Self::Broadcast => "broadcast",
            Self::Convergence => "convergence",
            Self::Repeat => "repeat",
        }
    }

    /// Whether the ordered pair `(first, second)` of edges forms this motif.
    pub fn matches(self, first: (usize, usize), second: (usize, usize)) -> bool {
        let ((i, j), (k, l)) = (first, second);
        match self {
            Self::Reciprocity => k == j && l == i,
            Self::Broadcast => k == i && l != j,
            Self::Convergence => l == j && k != i,
            Self::Repeat => k == i && l == j,
        }
    }
}

impl std::str::FromStr for MotifKind {
    type Err = DiagError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DiagError::Invalid(format!("unknown motif {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotifSpec {
    pub kind: MotifKind,
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotifCounts {
    pub kind: MotifKind,
    pub window: f64,
    pub count: u64,
    /// Ordered event pairs `(e1, e2)` with `0 < t2 - t1 <= Δ`.
    pub opportunities: u64,
    pub rate: f64,
}

/// Counts of all four motifs in one sliding-window sweep.
pub fn motif_counts(log: &EventLog, window: f64) -> Result<[MotifCounts; 4]> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(DiagError::Invalid(format!("motif window {window} must be positive")));
    }
    let ev = log.events();
    let mut counts = [0u64; 4];
    let mut opportunities = 0u64;
    // Second events of the current anchor lie in ev[lo..hi].
    let (mut lo, mut hi) = (0, 0);
    for a in 0..ev.len() {
        let t = ev[a].t;
        while lo < ev.len() && ev[lo].t <= t {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < ev.len() && ev[hi].t - t <= window {
            hi += 1;
        }
        opportunities += (hi - lo) as u64;
        let first = (ev[a].src, ev[a].dst);
        for e in &ev[lo..hi] {
            for (c, kind) in counts.iter_mut().zip(MotifKind::ALL) {
                *c += u64::from(kind.matches(first, (e.src, e.dst)));
            }
        }
    }
    Ok(std::array::from_fn(|k| {
        let count = counts[k];
        let rate = if opportunities > 0 { count as f64 / opportunities as f64 } else { 0.0 };
        MotifCounts { kind: MotifKind::ALL[k], window, count, opportunities, rate }
    }))
}

pub fn motif_rates(log: &EventLog, spec: MotifSpec) -> Result<MotifCounts> {
    Ok(motif_counts(log, spec.window)?.into_iter().find(|m| m.kind == spec.kind).unwrap())
}

/// Ten times the median gap, falling back to the mean gap and then to 1.
pub fn default_motif_window(log: &EventLog) -> f64 {
    let mut gaps: Vec<f64> = log.times().windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return 1.0;
    }
    gaps.sort_by(f64::total_cmp);
    let m = gaps.len();
    let median = if m % 2 == 1 { gaps[m / 2] } else { 0.5 * (gaps[m / 2 - 1] + gaps[m / 2]) };
    let mean = gaps.iter().sum::<f64>() / m as f64;
    [median, mean].into_iter().find(|&g| g > 0.0).map_or(1.0, |g| 10.0 * g)
}

/// Motif rows for several logs: `source, replicate, motif, window, count,
/// opportunities, rate`.
pub fn motif_table(sources: &[(&str, usize, &EventLog)], window: f64) -> Result<ReportTable> {
    let mut table = ReportTable::new(
        "motifs",
        vec![
            Column::text("source"),
            Column::int("replicate"),
            Column::text("motif"),
            Column::float("window"),
            Column::int("count"),
            Column::int("opportunities"),
            Column::float("rate"),
        ],
    );
    for &(source, rep, log) in sources {
        for m in motif_counts(log, window)? {
            table.push(vec![
                source.into(),
                rep.into(),
                m.kind.name().into(),
                m.window.into(),
                Cell::Int(m.count as i64),
                Cell::Int(m.opportunities as i64),
                m.rate.into(),
            ])?;
        }
    }
    Ok(table)
}

/// A model scored by [`per_event_loglik_table`].
#[derive(Debug, Clone, Copy)]
pub enum Scored<'a> {
    Ensemble(&'a EnsembleModel),
    /// A time layer alone, scored on the merged event stream.
    Time(&'a TimeModel),
}

/// Per model: totals and per-event averages of the time, mark and joint
/// log-likelihood. Non-finite rows are kept and flagged.
pub fn per_event_loglik_table(models: &[(&str, Scored<'_>)], log: &EventLog) -> Result<ReportTable> {
    let mut table = ReportTable::new(
        "loglik",
        vec![
            Column::text("model"),
            Column::text("kind"),
            Column::int("events"),
            Column::float("time_total"),
            Column::float("mark_total").nullable(),
            Column::float("total"),
            Column::float("time_per_event").nullable(),
            Column::float("mark_per_event").nullable(),
            Column::float("total_per_event").nullable(),
            Column::float("supported_per_event").nullable(),
            Column::int("unsupported_events"),
            Column::text("flag"),
        ],
    );
    let k = log.len();
    let per = |x: f64| if k > 0 { Cell::Float(x / k as f64) } else { Cell::Empty };
    for &(name, model) in models {
        let (kind, time, mark, total, supported, unsupported) = match model {
            Scored::Ensemble(m) => {
                let ll = m.joint_log_likelihood(log)?;
                let bad: u64 = ll.unsupported.iter().map(|u| u.events).sum();
                ("ensemble", ll.time_part, Some(ll.mark_part), ll.total, Some(ll.supported_total), bad)
            }
            Scored::Time(m) => {
                let ll = m.log_likelihood(&log.times())?;
                ("time", ll, None, ll, None, 0)
            }
        };
        let flag = if total.is_finite() { String::new() } else { "non-finite".to_string() };
        if !total.is_finite() {
            table.flag(format!("{name}: non-finite log-likelihood"));
        }
        table.push(vec![
            name.into(),
            kind.into(),
            k.into(),
            time.into(),
            mark.into(),
            total.into(),
            per(time),
            mark.map_or(Cell::Empty, per),
            per(total),
            supported.map_or(Cell::Empty, per),
            Cell::Int(unsupported as i64),
            flag.into(),
        ])?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy)]
pub enum RasterGroup<'a> {
    Node,
    Block(&'a BlockMap),
}

/// Long-format raster rows `(entity, rank, direction, t)` for the `top_k`
/// most active entities (events sent plus received; ties by label).
pub fn raster_export(log: &EventLog, top_k: usize, group: RasterGroup<'_>) -> Result<ReportTable> {
    if top_k == 0 {
        return Err(DiagError::Invalid("top_k must be at least 1".into()));
    }
    let (names, of): (Vec<String>, Box<dyn Fn(usize) -> usize>) = match group {
        RasterGroup::Node => (log.labels().to_vec(), Box::new(|i| i)),
        RasterGroup::Block(b) => {
            if b.n_nodes() != log.n_nodes() {
                return Err(DiagError::NodeMismatch { expected: log.n_nodes(), got: b.n_nodes() });
            }
            (b.names().to_vec(), Box::new(move |i| b.block_of(i)))
        }
    };
    let mut activity = vec![0usize; names.len()];
    for e in log.events() {
        activity[of(e.src)] += 1;
        activity[of(e.dst)] += 1;
    }
    let mut order: Vec<usize> = (0..names.len()).filter(|&k| activity[k] > 0).collect();
    order.sort_by(|&a, &b| activity[b].cmp(&activity[a]).then_with(|| names[a].cmp(&names[b])));
    order.truncate(top_k);
    let mut rank = vec![None; names.len()];
    for (r, &k) in order.iter().enumerate() {
        rank[k] = Some(r + 1);
    }
    let mut table = ReportTable::new(
        "raster",
        vec![Column::text("entity"), Column::int("rank"), Column::text("direction"), Column::float("t")],
    );
    for e in log.events() {
        for (node, dir) in [(e.src, "out"), (e.dst, "in")] {
            let k = of(node);
            if let Some(r) = rank[k] {
                table.push(vec![names[k].as_str().into(), r.into(), dir.into(), e.t.into()])?;
            }
        }
    }
    Ok(table)
}

fn block_matrix_table(name: &str, blocks: &BlockMap, values: &Array2<f64>) -> Result<ReportTable> {
    let mut table = ReportTable::new(name, vec![Column::text("from_block"), Column::text("to_block"), Column::float("value")]);
    for ((a, b), &v) in values.indexed_iter() {
        table.push(vec![blocks.names()[a].as_str().into(), blocks.names()[b].as_str().into(), v.into()])?;
    }
    Ok(table)
}

/// Observed unique dyads, expected unique dyads and their residual
/// (expected minus observed) per block pair.
pub fn block_unique_edge_heatmap(
    log: &EventLog,
    model: &EnsembleModel,
    blocks: &BlockMap,
) -> Result<(ReportTable, ReportTable, ReportTable)> {
    if log.n_nodes() != model.n_nodes() {
        return Err(DiagError::NodeMismatch { expected: model.n_nodes(), got: log.n_nodes() });
    }
    let observed = crate::mark_layer::block_unique_counts(&sufficient_stats(log), blocks).mapv(|c| c as f64);
    let expected = model.expected_unique_by_block(blocks)?;
    let residual = &expected - &observed;
    Ok((
        block_matrix_table("heatmap_obs", blocks, &observed)?,
        block_matrix_table("heatmap_exp", blocks, &expected)?,
        block_matrix_table("heatmap_res", blocks, &residual)?,
    ))
}

/// Source of a degree/clustering scatter.
#[derive(Debug, Clone, Copy)]
pub enum ScatterSource<'a> {
    Model(&'a EnsembleModel),
    /// Binarised observed dyads.
    Log(&'a EventLog),
}

/// Per node: out-degree and local clustering of the undirected collapse,
/// expected under a model or empirical from a log.
pub fn degree_clustering_scatter(source: ScatterSource<'_>) -> Result<ReportTable> {
    let (labels, degree, clustering, kind) = match source {
        ScatterSource::Model(m) => (m.labels(), m.expected_out_degree(), m.expected_clustering()?, "expected"),
        ScatterSource::Log(log) => {
            let n = log.n_nodes();
            if n > crate::ensemble::CLUSTERING_NODE_LIMIT {
                return Err(EnsembleError::TooLarge { n, limit: crate::ensemble::CLUSTERING_NODE_LIMIT }.into());
            }
            let stats = sufficient_stats(log);
            let a = stats.counts.mapv(|c| if c > 0 { 1.0 } else { 0.0 });
            let degree = a.outer_iter().map(|r| r.sum()).collect();
            let q = Array2::from_shape_fn((n, n), |(i, j)| if i != j && (a[[i, j]] > 0.0 || a[[j, i]] > 0.0) { 1.0 } else { 0.0 });
            (log.labels(), degree, clustering_from_probabilities(&q), "empirical")
        }
    };
    let mut table = ReportTable::new(
        "scatter",
        vec![Column::int("node"), Column::text("label"), Column::text("kind"), Column::float("out_degree"), Column::float("clustering")],
    );
    for (i, label) in labels.iter().enumerate() {
        table.push(vec![i.into(), label.as_str().into(), kind.into(), degree[i].into(), clustering[i].into()])?;
    }
    Ok(table)
}

/// Per node: observed against expected out-degree and out-strength.
pub fn degree_calibration_table(model: &EnsembleModel, log: &EventLog) -> Result<ReportTable> {
    if log.n_nodes() != model.n_nodes() {
        return Err(DiagError::NodeMismatch { expected: model.n_nodes(), got: log.n_nodes() });
    }
    let stats = sufficient_stats(log);
    let mu = model.integrated_intensities();
    let expected_degree = model.expected_out_degree();
    let mut table = ReportTable::new(
        "degrees",
        vec![
            Column::int("node"),
            Column::text("label"),
            Column::int("observed_out_degree"),
            Column::float("expected_out_degree"),
            Column::int("observed_out_strength"),
            Column::float("expected_out_strength"),
        ],
    );
    for i in 0..log.n_nodes() {
        let observed_degree = stats.counts.row(i).iter().filter(|&&c| c > 0).count();
        table.push(vec![
            i.into(),
            log.label(i).into(),
            observed_degree.into(),
            expected_degree[i].into(),
            Cell::Int(stats.out_strength[i] as i64),
            mu.row(i).sum().into(),
        ])?;
    }
    Ok(table)
}
