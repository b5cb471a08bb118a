//! Time-independent edge weights `w_ij` on a binary support mask.
//!
//! Covers count-proportional (edge-Poisson) weights, strength-constrained
//! maximum-entropy weights by masked biproportional scaling, block-degree
//! masks with unique-edge quotas, sender-partitioned weight rows, a max-flow
//! feasibility certificate and the categorical mark likelihood.

mod flow;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_store::{EventLog, SufficientStats};
use flow::FlowNetwork;

#[derive(Debug, Error)]
pub enum MarkError {
    #[error("expected {expected} nodes, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("all edge counts are zero")]
    NoEvents,
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("positive targets without support: rows {rows:?}, columns {cols:?}")]
    EmptySupport { rows: Vec<usize>, cols: Vec<usize> },
    #[error("quota {quota} for block pair ({a}, {b}) exceeds its capacity {capacity}")]
    QuotaExceedsCapacity { a: usize, b: usize, quota: usize, capacity: usize },
    #[error("quota matrix is {rows}x{cols}, expected {expected}x{expected}")]
    QuotaShape { rows: usize, cols: usize, expected: usize },
    #[error("block map: {0}")]
    BlockMap(String),
    #[error("weights file line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MarkError>;

/// Binary support matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "RawMask", try_from = "RawMask")]
pub struct Mask {
    support: Array2<bool>,
}

#[derive(Serialize, Deserialize)]
struct RawMask {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl From<Mask> for RawMask {
    fn from(m: Mask) -> Self {
        RawMask { n: m.n_nodes(), pairs: m.pairs() }
    }
}

impl TryFrom<RawMask> for Mask {
    type Error = MarkError;
    fn try_from(raw: RawMask) -> Result<Self> {
        Mask::from_pairs(raw.n, raw.pairs)
    }
}

impl Mask {
    pub fn empty(n: usize) -> Self {
        Self { support: Array2::from_elem((n, n), false) }
    }

    /// Every off-diagonal pair.
    pub fn full(n: usize) -> Self {
        Self::from_fn(n, |_, _| true)
    }

    /// The diagonal is always excluded.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self { support: Array2::from_shape_fn((n, n), |(i, j)| i != j && f(i, j)) }
    }

    /// Pairs with at least one observed event.
    pub fn observed(stats: &SufficientStats) -> Self {
        Self::from_fn(stats.n_nodes(), |i, j| stats.count(i, j) > 0)
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = Self::empty(n);
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(MarkError::Dimension { expected: n, got: i.max(j) + 1 });
            }
            if i == j {
                return Err(MarkError::InvalidWeights(format!("mask pair ({i}, {i}) is on the diagonal")));
            }
            m.support[[i, j]] = true;
        }
        Ok(m)
    }

    pub fn n_nodes(&self) -> usize {
        self.support.nrows()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.support[[i, j]]
    }

    pub fn count(&self) -> usize {
        self.support.iter().filter(|&&b| b).count()
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.support.row(i).iter().filter(|&&b| b).count()
    }

    pub fn col_len(&self, j: usize) -> usize {
        self.support.column(j).iter().filter(|&&b| b).count()
    }

    /// Supported pairs in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.support.indexed_iter().filter(|(_, &b)| b).map(|(ij, _)| ij).collect()
    }
}

/// Node-to-block assignment with blocks numbered `0..B`, all nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBlockMap")]
pub struct BlockMap {
    assignment: Vec<usize>,
    names: Vec<String>,
}

#[derive(Deserialize)]
struct RawBlockMap {
    assignment: Vec<usize>,
    names: Vec<String>,
}

impl TryFrom<RawBlockMap> for BlockMap {
    type Error = MarkError;
    fn try_from(raw: RawBlockMap) -> Result<Self> {
        let mut used = vec![false; raw.names.len()];
        for &b in &raw.assignment {
            *used.get_mut(b).ok_or_else(|| MarkError::BlockMap(format!("block {b} has no name")))? = true;
        }
        if let Some(b) = used.iter().position(|u| !u) {
            return Err(MarkError::BlockMap(format!("block {b} is empty")));
        }
        Ok(BlockMap { assignment: raw.assignment, names: raw.names })
    }
}

impl BlockMap {
    /// Compacts arbitrary block ids to `0..B` in increasing id order.
    pub fn new(assignment: &[usize]) -> Self {
        let mut ids: Vec<usize> = assignment.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let compact = assignment.iter().map(|b| ids.binary_search(b).unwrap()).collect();
        Self { assignment: compact, names: ids.iter().map(|b| b.to_string()).collect() }
    }

    /// Compacts block labels to `0..B` in order of first appearance.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut names: Vec<String> = Vec::new();
        let assignment = labels
            .iter()
            .map(|l| match names.iter().position(|n| n == l.as_ref()) {
                Some(b) => b,
                None => {
                    names.push(l.as_ref().to_string());
                    names.len() - 1
                }
            })
            .collect();
        Self { assignment, names }
    }

    pub fn n_nodes(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.names.len()
    }

    pub fn block_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn members(&self, block: usize) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.assignment[i] == block).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_blocks()];
        for &b in &self.assignment {
            sizes[b] += 1;
        }
        sizes
    }
}

/// Reads a `node,block` CSV (header optional) against a node universe.
/// Every node must be assigned; rows naming unknown nodes are skipped.
pub fn read_block_map<R: Read>(reader: R, node_labels: &[String]) -> Result<BlockMap> {
    let index: std::collections::HashMap<&str, usize> =
        node_labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut blocks: Vec<Option<String>> = vec![None; node_labels.len()];
    let mut skipped = 0usize;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if rec.len() != 2 {
            return Err(MarkError::Malformed { line, reason: format!("expected 2 fields, got {}", rec.len()) });
        }
        if k == 0 && &rec[0] == "node" && &rec[1] == "block" {
            continue;
        }
        match index.get(&rec[0]) {
            Some(&i) => blocks[i] = Some(rec[1].to_string()),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("block map: skipped {skipped} rows for nodes outside the event log");
    }
    let missing: Vec<&str> =
        blocks.iter().zip(node_labels).filter(|(b, _)| b.is_none()).map(|(_, l)| l.as_str()).collect();
    if !missing.is_empty() {
        return Err(MarkError::BlockMap(format!("{} nodes have no block, first: {}", missing.len(), missing[0])));
    }
    let labels: Vec<String> = blocks.into_iter().map(Option::unwrap).collect();
    Ok(BlockMap::from_labels(&labels))
}

pub fn load_block_map(path: impl AsRef<Path>, node_labels: &[String]) -> Result<BlockMap> {
    read_block_map(BufReader::new(File::open(path)?), node_labels)
}

/// Partition of the dyads into parts `E_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EdgePartition {
    Global,
    /// One part per source node.
    BySender,
    /// One part per block of the source node.
    BySourceBlock { blocks: BlockMap },
}

impl EdgePartition {
    pub fn n_parts(&self, n: usize) -> usize {
        match self {
            Self::Global => 1,
            Self::BySender => n,
            Self::BySourceBlock { blocks } => blocks.n_blocks(),
        }
    }

    pub fn part_of(&self, i: usize, _j: usize) -> usize {
        match self {
            Self::Global => 0,
            Self::BySender => i,
            Self::BySourceBlock { blocks } => blocks.block_of(i),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::BySender => "by-sender",
            Self::BySourceBlock { .. } => "by-source-block",
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            Self::BySourceBlock { blocks } if blocks.n_nodes() != n => {
                Err(MarkError::Dimension { expected: n, got: blocks.n_nodes() })
            }
            _ => Ok(()),
        }
    }
}

/// Row and column scaling factors with `w_ij = x_i y_j M_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Nonnegative weights on a mask, with per-part totals `W_r` and mark
/// probabilities `p_ij = w_ij / W_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkWeights {
    weights: Array2<f64>,
    mask: Mask,
    partition: EdgePartition,
    part_totals: Vec<f64>,
    factors: Option<Factors>,
    provenance: String,
    flags: Vec<String>,
}

impl MarkWeights {
    pub fn new(weights: Array2<f64>, mask: Mask, partition: EdgePartition) -> Result<Self> {
        let n = mask.n_nodes();
        if weights.dim() != (n, n) {
            return Err(MarkError::Dimension { expected: n, got: weights.nrows().max(weights.ncols()) });
        }
        for ((i, j), &w) in weights.indexed_iter() {
            if !w.is_finite() || w < 0.0 {
                return Err(MarkError::InvalidWeights(format!("w[{i},{j}] = {w}")));
            }
            if w > 0.0 && !mask.contains(i, j) {
                return Err(MarkError::InvalidWeights(format!("w[{i},{j}] = {w} outside the mask")));
            }
        }
        partition.check(n)?;
        let mut part_totals = vec![0.0; partition.n_parts(n)];
        for ((i, j), &w) in weights.indexed_iter() {
            part_totals[partition.part_of(i, j)] += w;
        }
        Ok(Self { weights, mask, partition, part_totals, factors: None, provenance: String::new(), flags: Vec::new() })
    }

    pub fn with_partition(self, partition: EdgePartition) -> Result<Self> {
        let Self { weights, mask, factors, provenance, flags, .. } = self;
        let mut out = Self::new(weights, mask, partition)?;
        out.factors = factors;
        out.provenance = provenance;
        out.flags = flags;
        Ok(out)
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn with_factors(mut self, factors: Factors) -> Self {
        self.factors = Some(factors);
        self
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.flags.push(flag.into());
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.mask.n_nodes()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[[i, j]]
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn partition(&self) -> &EdgePartition {
        &self.partition
    }

    pub fn n_parts(&self) -> usize {
        self.part_totals.len()
    }

    pub fn part_of(&self, i: usize, j: usize) -> usize {
        self.partition.part_of(i, j)
    }

    pub fn part_totals(&self) -> &[f64] {
        &self.part_totals
    }

    pub fn factors(&self) -> Option<&Factors> {
        self.factors.as_ref()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    /// Mark probability within the pair's part (0 when the part is empty).
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        let total = self.part_totals[self.part_of(i, j)];
        if total > 0.0 {
            self.weights[[i, j]] / total
        } else {
            0.0
        }
    }

    pub fn probs(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.weights.dim(), |(i, j)| self.prob(i, j))
    }

    /// Pairs of part `r` with positive weight, row-major, with their weights.
    pub fn part_support(&self, r: usize) -> Vec<((usize, usize), f64)> {
        self.weights
            .indexed_iter()
            .filter(|&((i, j), &w)| w > 0.0 && self.part_of(i, j) == r)
            .map(|(ij, &w)| (ij, w))
            .collect()
    }
}

/// Out- and in-strength targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginTargets {
    pub out_strength: Vec<f64>,
    pub in_strength: Vec<f64>,
}

impl MarginTargets {
    pub fn new(out_strength: Vec<f64>, in_strength: Vec<f64>) -> Result<Self> {
        if out_strength.len() != in_strength.len() {
            return Err(MarkError::Dimension { expected: out_strength.len(), got: in_strength.len() });
        }
        if out_strength.iter().chain(&in_strength).any(|s| !s.is_finite() || *s < 0.0) {
            return Err(MarkError::InvalidTargets("strengths must be finite and nonnegative".into()));
        }
        let (so, si): (f64, f64) = (out_strength.iter().sum(), in_strength.iter().sum());
        if (so - si).abs() > 1e-9 * so.max(si).max(1.0) {
            return Err(MarkError::InvalidTargets(format!("out-strengths sum to {so}, in-strengths to {si}")));
        }
        Ok(Self { out_strength, in_strength })
    }

    pub fn from_stats(stats: &SufficientStats) -> Self {
        let f = |v: &[u64]| v.iter().map(|&x| x as f64).collect();
        Self { out_strength: f(&stats.out_strength), in_strength: f(&stats.in_strength) }
    }

    pub fn n_nodes(&self) -> usize {
        self.out_strength.len()
    }

    pub fn total(&self) -> f64 {
        self.out_strength.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            out_strength: self.out_strength.iter().map(|s| s * factor).collect(),
            in_strength: self.in_strength.iter().map(|s| s * factor).collect(),
        }
    }
}

/// Case (1): `w_ij = N_ij` on the observed support, one global part.
pub fn edge_poisson_weights(stats: &SufficientStats) -> Result<MarkWeights> {
    if stats.total == 0 {
        return Err(MarkError::NoEvents);
    }
    let weights = stats.counts.mapv(|c| c as f64);
    Ok(MarkWeights::new(weights, Mask::observed(stats), EdgePartition::Global)?.with_provenance("edge-poisson"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpfpOptions {
    /// Maximum absolute margin violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpfpOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpfpReport {
    pub iterations: usize,
    pub max_violation: f64,
    pub converged: bool,
    /// `KL(out targets ‖ row sums)` after each sweep.
    pub kl_history: Vec<f64>,
}

/// `r ln(r/ρ) - r + ρ`, accurate when `ρ ≈ r`.
fn kl_term(r: f64, rho: f64) -> f64 {
    if r == 0.0 {
        return rho;
    }
    let x = (rho - r) / r;
    let core = if x.abs() < 1e-4 { x * x * (0.5 - x * (1.0 / 3.0 - 0.25 * x)) } else { x - x.ln_1p() };
    r * core
}

/// Case (3): maximum-entropy weights `w_ij = x_i y_j M_ij` matching out- and
/// in-strength targets, by alternating row and column scaling. Rows and
/// columns with zero target are fixed at zero. Non-convergence is not an
/// error: the last iterate is returned with `converged = false` and a flag.
pub fn ipfp_strength_weights(
    targets: &MarginTargets,
    mask: &Mask,
    opts: &IpfpOptions,
) -> Result<(MarkWeights, IpfpReport)> {
    let n = mask.n_nodes();
    if targets.n_nodes() != n {
        return Err(MarkError::Dimension { expected: n, got: targets.n_nodes() });
    }
    let (r, c) = (&targets.out_strength, &targets.in_strength);
    let row_adj: Vec<Vec<usize>> =
        (0..n).map(|i| if r[i] > 0.0 { (0..n).filter(|&j| c[j] > 0.0 && mask.contains(i, j)).collect() } else { vec![] }).collect();
    let mut col_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, cols) in row_adj.iter().enumerate() {
        for &j in cols {
            col_adj[j].push(i);
        }
    }
    let empty_rows: Vec<usize> = (0..n).filter(|&i| r[i] > 0.0 && row_adj[i].is_empty()).collect();
    let empty_cols: Vec<usize> = (0..n).filter(|&j| c[j] > 0.0 && col_adj[j].is_empty()).collect();
    if !empty_rows.is_empty() || !empty_cols.is_empty() {
        return Err(MarkError::EmptySupport { rows: empty_rows, cols: empty_cols });
    }

    let max_target = r.iter().chain(c).fold(0.0f64, |m, &v| m.max(v));
    let tol = opts.tol.max(64.0 * f64::EPSILON * max_target);
    let mut x: Vec<f64> = r.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut y: Vec<f64> = c.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut kl_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        for i in 0..n {
            if !row_adj[i].is_empty() {
                x[i] = r[i] / row_adj[i].iter().map(|&j| y[j]).sum::<f64>();
            }
        }
        for j in 0..n {
            if !col_adj[j].is_empty() {
                y[j] = c[j] / col_adj[j].iter().map(|&i| x[i]).sum::<f64>();
            }
        }
        let mut violation = 0.0f64;
        let mut kl = 0.0;
        for i in 0..n {
            let rho = x[i] * row_adj[i].iter().map(|&j| y[j]).sum::<f64>();
            violation = violation.max((rho - r[i]).abs());
            kl += kl_term(r[i], rho);
        }
        kl_history.push(kl);
        if violation <= tol {
            converged = true;
            break;
        }
    }

    let mut weights = Array2::zeros((n, n));
    for (i, cols) in row_adj.iter().enumerate() {
        for &j in cols {
            weights[[i, j]] = x[i] * y[j];
        }
    }
    let row_viol = (0..n).map(|i| (weights.row(i).sum() - r[i]).abs());
    let col_viol = (0..n).map(|j| (weights.column(j).sum() - c[j]).abs());
    let max_violation = row_viol.chain(col_viol).fold(0.0f64, f64::max);
    let report = IpfpReport { iterations, max_violation, converged, kl_history };
    let mut mw = MarkWeights::new(weights, mask.clone(), EdgePartition::Global)?
        .with_factors(Factors { x, y })
        .with_provenance("ipfp-strength");
    if !converged {
        log::warn!("masked scaling did not converge in {iterations} sweeps (violation {max_violation:.3e})");
        mw = mw.with_flag(format!("ipfp not converged after {iterations} sweeps, max violation {max_violation:e}"));
    }
    Ok((mw, report))
}

/// Unique-edge quotas for a block-degree mask.
#[derive(Debug, Clone, PartialEq)]
pub enum Quotas {
    /// Observed unique dyads per block pair.
    FromData,
    Explicit(Array2<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMaskReport {
    pub quotas: Vec<Vec<usize>>,
    /// Block pairs whose quota exceeded their observed dyads, with the number
    /// of zero-count dyads filled in lexicographic order.
    pub zero_count_fills: Vec<(usize, usize, usize)>,
}

/// Observed unique dyads per block pair.
pub fn block_unique_counts(stats: &SufficientStats, blocks: &BlockMap) -> Array2<usize> {
    let b = blocks.n_blocks();
    let mut out = Array2::zeros((b, b));
    for ((i, j), &c) in stats.counts.indexed_iter() {
        if c > 0 {
            out[[blocks.block_of(i), blocks.block_of(j)]] += 1;
        }
    }
    out
}

/// Case (4): for each block pair `(a, b)`, keep exactly `K_ab` dyads, the
/// most active by count with ties broken by lexicographic `(i, j)`.
pub fn block_degree_mask(stats: &SufficientStats, blocks: &BlockMap, quotas: &Quotas) -> Result<(Mask, BlockMaskReport)> {
    let n = stats.n_nodes();
    if blocks.n_nodes() != n {
        return Err(MarkError::Dimension { expected: n, got: blocks.n_nodes() });
    }
    let nb = blocks.n_blocks();
    let quota = match quotas {
        Quotas::FromData => block_unique_counts(stats, blocks),
        Quotas::Explicit(q) => {
            if q.dim() != (nb, nb) {
                return Err(MarkError::QuotaShape { rows: q.nrows(), cols: q.ncols(), expected: nb });
            }
            q.clone()
        }
    };
    let members: Vec<Vec<usize>> = (0..nb).map(|b| blocks.members(b)).collect();
    let mut mask = Mask::empty(n);
    let mut fills = Vec::new();
    for a in 0..nb {
        for b in 0..nb {
            let k = quota[[a, b]];
            let mut dyads: Vec<(usize, usize)> = members[a]
                .iter()
                .flat_map(|&i| members[b].iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
                .collect();
            if k > dyads.len() {
                return Err(MarkError::QuotaExceedsCapacity { a, b, quota: k, capacity: dyads.len() });
            }
            // Members are ascending, so a stable sort keeps lexicographic ties.
            dyads.sort_by(|p, q| stats.count(q.0, q.1).cmp(&stats.count(p.0, p.1)));
            let active = dyads.iter().filter(|&&(i, j)| stats.count(i, j) > 0).count();
            if k > active {
                fills.push((a, b, k - active));
            }
            for &(i, j) in &dyads[..k] {
                mask.support[[i, j]] = true;
            }
        }
    }
    if !fills.is_empty() {
        log::warn!("{} block pairs filled with zero-count dyads", fills.len());
    }
    let report = BlockMaskReport { quotas: quota.outer_iter().map(|r| r.to_vec()).collect(), zero_count_fills: fills };
    Ok((mask, report))
}

/// Case (5): one part per sender with `p_ij = N_ij / s_i` restricted to the
/// mask. Senders whose restricted count is zero get a uniform row over their
/// mask support, flagged.
pub fn sender_partition_weights(stats: &SufficientStats, mask: &Mask) -> Result<MarkWeights> {
    let n = stats.n_nodes();
    if mask.n_nodes() != n {
        return Err(MarkError::Dimension { expected: n, got: mask.n_nodes() });
    }
    let empty: Vec<usize> = (0..n).filter(|&i| stats.out_strength[i] > 0 && mask.row_len(i) == 0).collect();
    if !empty.is_empty() {
        return Err(MarkError::EmptySupport { rows: empty, cols: vec![] });
    }
    let mut weights = Array2::zeros((n, n));
    let mut fallback = Vec::new();
    for i in 0..n {
        let restricted: u64 = (0..n).filter(|&j| mask.contains(i, j)).map(|j| stats.count(i, j)).sum();
        if restricted > 0 {
            for j in (0..n).filter(|&j| mask.contains(i, j)) {
                weights[[i, j]] = stats.count(i, j) as f64 / restricted as f64;
            }
        } else if mask.row_len(i) > 0 {
            let m = mask.row_len(i) as f64;
            for j in (0..n).filter(|&j| mask.contains(i, j)) {
                weights[[i, j]] = 1.0 / m;
            }
            fallback.push(i);
        }
    }
    let mut mw = MarkWeights::new(weights, mask.clone(), EdgePartition::BySender)?.with_provenance("sender-partition");
    if !fallback.is_empty() {
        mw = mw.with_flag(format!("uniform rows for senders without counts on their mask: {fallback:?}"));
    }
    Ok(mw)
}

/// Max-flow certificate for margin feasibility on a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub total: f64,
    pub max_flow: f64,
    pub deficit: f64,
    /// Rows with positive target on the source side of a minimum cut: their
    /// combined out-target exceeds the in-target of `cut_cols`, the only
    /// columns they can reach.
    pub cut_rows: Vec<usize>,
    pub cut_cols: Vec<usize>,
    pub empty_rows: Vec<usize>,
    pub empty_cols: Vec<usize>,
}

impl FeasibilityReport {
    pub fn describe(&self, labels: &[String]) -> String {
        if self.feasible {
            return format!("feasible: max flow {} equals total {}", self.max_flow, self.total);
        }
        let name = |v: &[usize]| v.iter().map(|&i| labels.get(i).cloned().unwrap_or(i.to_string())).collect::<Vec<_>>().join(", ");
        let mut s = format!("infeasible: max flow {} < total {} (deficit {})", self.max_flow, self.total, self.deficit);
        s += &format!("\n  cut rows: [{}]\n  reachable columns: [{}]", name(&self.cut_rows), name(&self.cut_cols));
        if !self.empty_rows.is_empty() {
            s += &format!("\n  rows with positive target and empty mask: [{}]", name(&self.empty_rows));
        }
        if !self.empty_cols.is_empty() {
            s += &format!("\n  columns with positive target and empty mask: [{}]", name(&self.empty_cols));
        }
        s
    }
}

/// Source → row `i` (capacity `s_i^out`), row → column where `M_ij = 1`
/// (unbounded), column `j` → sink (capacity `s_j^in`). Feasible iff the
/// maximum flow saturates the total.
pub fn check_feasibility(targets: &MarginTargets, mask: &Mask) -> FeasibilityReport {
    let n = mask.n_nodes().min(targets.n_nodes());
    let (r, c) = (&targets.out_strength, &targets.in_strength);
    let total = targets.total();
    let (source, sink) = (2 * n, 2 * n + 1);
    let mut g = FlowNetwork::new(2 * n + 2, 1e-12 * total.max(1.0));
    for i in 0..n {
        if r[i] > 0.0 {
            g.add_arc(source, i, r[i]);
        }
        if c[i] > 0.0 {
            g.add_arc(n + i, sink, c[i]);
        }
    }
    for (i, j) in mask.pairs() {
        if r[i] > 0.0 && c[j] > 0.0 {
            g.add_arc(i, n + j, f64::INFINITY);
        }
    }
    let max_flow = g.max_flow(source, sink);
    let deficit = (total - max_flow).max(0.0);
    let feasible = deficit <= 1e-9 * total.max(1.0);
    let (mut cut_rows, mut cut_cols) = (Vec::new(), Vec::new());
    if !feasible {
        let side = g.source_side(source);
        cut_rows = (0..n).filter(|&i| side[i] && r[i] > 0.0).collect();
        cut_cols = (0..n).filter(|&j| side[n + j]).collect();
    }
    let empty_rows = (0..n).filter(|&i| r[i] > 0.0 && (0..n).all(|j| !mask.contains(i, j) || c[j] == 0.0)).collect();
    let empty_cols = (0..n).filter(|&j| c[j] > 0.0 && (0..n).all(|i| !mask.contains(i, j) || r[i] == 0.0)).collect();
    FeasibilityReport { feasible, total, max_flow, deficit, cut_rows, cut_cols, empty_rows, empty_cols }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsupportedPair {
    pub src: usize,
    pub dst: usize,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkLogLik {
    /// `Σ_k log p_{i_k j_k}`; `-inf` when any event has zero probability.
    pub value: f64,
    /// The same sum over events with positive probability only.
    pub supported_value: f64,
    pub supported_events: usize,
    pub unsupported: Vec<UnsupportedPair>,
}

/// Categorical log-likelihood of the observed marks under `p_ij`.
pub fn mark_log_likelihood(weights: &MarkWeights, log: &EventLog) -> Result<MarkLogLik> {
    if log.n_nodes() != weights.n_nodes() {
        return Err(MarkError::Dimension { expected: weights.n_nodes(), got: log.n_nodes() });
    }
    let n = log.n_nodes();
    let mut counts = Array2::<u64>::zeros((n, n));
    for e in log.events() {
        counts[[e.src, e.dst]] += 1;
    }
    let mut supported_value = 0.0;
    let mut supported_events = 0usize;
    let mut unsupported = Vec::new();
    for ((i, j), &k) in counts.indexed_iter() {
        if k == 0 {
            continue;
        }
        let p = weights.prob(i, j);
        if p > 0.0 {
            supported_value += k as f64 * p.ln();
            supported_events += k as usize;
        } else {
            unsupported.push(UnsupportedPair { src: i, dst: j, events: k });
        }
    }
    let value = if unsupported.is_empty() { supported_value } else { f64::NEG_INFINITY };
    Ok(MarkLogLik { value, supported_value, supported_events, unsupported })
}

/// JSON sidecar stored next to the weights CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSidecar {
    pub n_nodes: usize,
    pub provenance: String,
    pub partition: EdgePartition,
    pub mask: Mask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Factors>,
    #[serde(default)]
    pub flags: Vec<String>,
    /// Calibration report (IPFP convergence, block quotas, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<serde_json::Value>,
}

impl WeightsSidecar {
    pub fn of(weights: &MarkWeights, report: Option<serde_json::Value>) -> Self {
        Self {
            n_nodes: weights.n_nodes(),
            provenance: weights.provenance.clone(),
            partition: weights.partition.clone(),
            mask: weights.mask.clone(),
            factors: weights.factors.clone(),
            flags: weights.flags.clone(),
            report,
        }
    }
}

/// Nonzero weights as `i,j,w` triplets in row-major order.
pub fn write_weights_csv<W: Write>(weights: &MarkWeights, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["i", "j", "w"])?;
    for ((i, j), &w) in weights.weights.indexed_iter() {
        if w > 0.0 {
            wtr.write_record([i.to_string(), j.to_string(), w.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_weights_csv<R: Read>(reader: R, sidecar: WeightsSidecar) -> Result<MarkWeights> {
    let n = sidecar.n_nodes;
    if sidecar.mask.n_nodes() != n {
        return Err(MarkError::Dimension { expected: n, got: sidecar.mask.n_nodes() });
    }
    let mut weights = Array2::zeros((n, n));
    let mut rdr = csv::Reader::from_reader(reader);
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| MarkError::Malformed { line, reason };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let i: usize = rec[0].parse().map_err(|_| bad(format!("bad row index {:?}", &rec[0])))?;
        let j: usize = rec[1].parse().map_err(|_| bad(format!("bad column index {:?}", &rec[1])))?;
        let w: f64 = rec[2].parse().map_err(|_| bad(format!("bad weight {:?}", &rec[2])))?;
        if i >= n || j >= n {
            return Err(bad(format!("index ({i}, {j}) out of range for {n} nodes")));
        }
        weights[[i, j]] = w;
    }
    let mut mw = MarkWeights::new(weights, sidecar.mask, sidecar.partition)?.with_provenance(sidecar.provenance);
    mw.factors = sidecar.factors;
    mw.flags = sidecar.flags;
    Ok(mw)
}

pub fn save_weights(
    weights: &MarkWeights,
    csv_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
    report: Option<serde_json::Value>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(csv_path)?);
    write_weights_csv(weights, &mut w)?;
    w.flush()?;
    let mut s = BufWriter::new(File::create(sidecar_path)?);
    serde_json::to_writer_pretty(&mut s, &WeightsSidecar::of(weights, report))?;
    s.write_all(b"\n")?;
    s.flush()?;
    Ok(())
}

pub fn load_weights(csv_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<MarkWeights> {
    let sidecar: WeightsSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path)?))?;
    read_weights_csv(BufReader::new(File::open(csv_path)?), sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_store::{sufficient_stats, Event};
    use ndarray::array;

    fn stats_from(counts: Array2<u64>) -> SufficientStats {
        let n = counts.nrows();
        let out_strength = (0..n).map(|i| counts.row(i).sum()).collect();
        let in_strength = (0..n).map(|j| counts.column(j).sum()).collect();
        let total = counts.sum();
        let unique_edges = counts.iter().filter(|&&c| c > 0).count();
        SufficientStats { counts, out_strength, in_strength, total, unique_edges }
    }

    #[test]
    fn edge_poisson_is_proportional() {
        let w = edge_poisson_weights(&stats_from(array![[0, 2], [1, 0]])).unwrap();
        assert!((w.prob(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.prob(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.prob(0, 0), 0.0);
        assert!(matches!(edge_poisson_weights(&stats_from(Array2::zeros((2, 2)))), Err(MarkError::NoEvents)));
    }

    #[test]
    fn ipfp_two_nodes() {
        let t = MarginTargets::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let (w, rep) = ipfp_strength_weights(&t, &Mask::full(2), &IpfpOptions::default()).unwrap();
        assert!(rep.converged);
        assert!((w.weight(0, 1) - 1.0).abs() < 1e-12 && (w.weight(1, 0) - 1.0).abs() < 1e-12);
        assert_eq!(w.weight(0, 0), 0.0);
    }

    #[test]
    fn ipfp_uniform_three_nodes() {
        let t = MarginTargets::new(vec![2.0; 3], vec![2.0; 3]).unwrap();
        let (w, _) = ipfp_strength_weights(&t, &Mask::full(3), &IpfpOptions::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 1.0 };
                assert!((w.weight(i, j) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ipfp_rejects_empty_support() {
        let t = MarginTargets::new(vec![1.0, 0.0, 1.0], vec![0.0, 2.0, 0.0]).unwrap();
        let mask = Mask::from_pairs(3, [(0, 1)]).unwrap();
        match ipfp_strength_weights(&t, &mask, &IpfpOptions::default()) {
            Err(MarkError::EmptySupport { rows, .. }) => assert_eq!(rows, vec![2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn block_mask_top_k() {
        let blocks = BlockMap::new(&[0, 0, 1]);
        let counts = array![[0, 5, 3], [1, 0, 0], [4, 0, 0]];
        let q = Quotas::Explicit(array![[1, 1], [1, 0]]);
        let (mask, rep) = block_degree_mask(&stats_from(counts), &blocks, &q).unwrap();
        assert_eq!(mask.pairs(), vec![(0, 1), (0, 2), (2, 0)]);
        assert!(rep.zero_count_fills.is_empty());
    }

    #[test]
    fn block_mask_capacity_and_fills() {
        let blocks = BlockMap::new(&[0, 0, 1]);
        let stats = stats_from(Array2::zeros((3, 3)));
        let q = Quotas::Explicit(array![[3, 0], [0, 0]]);
        assert!(matches!(block_degree_mask(&stats, &blocks, &q), Err(MarkError::QuotaExceedsCapacity { .. })));
        let q = Quotas::Explicit(array![[2, 2], [2, 0]]);
        let (mask, rep) = block_degree_mask(&stats, &blocks, &q).unwrap();
        assert_eq!(mask, Mask::full(3));
        assert_eq!(rep.zero_count_fills.len(), 3);
    }

    #[test]
    fn sender_rows() {
        let stats = stats_from(array![[0, 3, 1], [0, 0, 0], [1, 1, 0]]);
        let mask = Mask::full(3);
        let w = sender_partition_weights(&stats, &mask).unwrap();
        assert_eq!((w.prob(0, 1), w.prob(0, 2)), (0.75, 0.25));
        assert_eq!(w.prob(1, 0), 0.5);
        assert_eq!(w.flags().len(), 1);
    }

    #[test]
    fn feasibility_names_empty_row() {
        let t = MarginTargets::new(vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]).unwrap();
        let mask = Mask::from_pairs(3, [(0, 1), (0, 2)]).unwrap();
        let rep = check_feasibility(&t, &mask);
        assert!(!rep.feasible);
        assert_eq!(rep.empty_rows, vec![1]);
        assert!(rep.cut_rows.contains(&1));
        assert!((rep.deficit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feasibility_two_node_corner() {
        let t = MarginTargets::new(vec![2.0, 1.0], vec![2.0, 1.0]).unwrap();
        let rep = check_feasibility(&t, &Mask::full(2));
        assert!(!rep.feasible);
        let ok = MarginTargets::new(vec![2.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(check_feasibility(&ok, &Mask::full(2)).feasible);
        let zero = MarginTargets::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!(check_feasibility(&zero, &Mask::empty(3)).feasible);
    }

    #[test]
    fn mark_loglik_uniform_and_unsupported() {
        let mask = Mask::from_pairs(3, [(0, 1), (1, 2)]).unwrap();
        let w = MarkWeights::new(Array2::from_shape_fn((3, 3), |(i, j)| if mask.contains(i, j) { 1.0 } else { 0.0 }), mask, EdgePartition::Global).unwrap();
        let log = EventLog::with_node_count(3, vec![Event::new(0.1, 0, 1), Event::new(0.2, 1, 2), Event::new(0.3, 0, 1)], 1.0).unwrap();
        let ll = mark_log_likelihood(&w, &log).unwrap();
        assert!((ll.value - 3.0 * 0.5f64.ln()).abs() < 1e-14);
        let bad = EventLog::with_node_count(3, vec![Event::new(0.1, 2, 0)], 1.0).unwrap();
        let ll = mark_log_likelihood(&w, &bad).unwrap();
        assert_eq!(ll.value, f64::NEG_INFINITY);
        assert_eq!(ll.unsupported, vec![UnsupportedPair { src: 2, dst: 0, events: 1 }]);
    }

    #[test]
    fn weights_round_trip() {
        let log = EventLog::with_node_count(3, vec![Event::new(0.1, 0, 1), Event::new(0.2, 1, 2), Event::new(0.3, 2, 0)], 1.0).unwrap();
        let stats = sufficient_stats(&log);
        let (w, rep) = ipfp_strength_weights(&MarginTargets::from_stats(&stats), &Mask::full(3), &IpfpOptions::default()).unwrap();
        let w = w.with_partition(EdgePartition::BySourceBlock { blocks: BlockMap::new(&[0, 1, 1]) }).unwrap();
        let mut buf = Vec::new();
        write_weights_csv(&w, &mut buf).unwrap();
        let side = WeightsSidecar::of(&w, Some(serde_json::to_value(&rep).unwrap()));
        let side: WeightsSidecar = serde_json::from_str(&serde_json::to_string(&side).unwrap()).unwrap();
        let back = read_weights_csv(buf.as_slice(), side).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn block_map_reading() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let bm = read_block_map("node,block\nc,x\na,y\nb,x\nz,q\n".as_bytes(), &labels).unwrap();
        assert_eq!(bm.assignment(), &[0, 1, 1]);
        assert_eq!(bm.names(), &["y".to_string(), "x".to_string()]);
        assert!(read_block_map("a,1\n".as_bytes(), &labels).is_err());
    }
}
