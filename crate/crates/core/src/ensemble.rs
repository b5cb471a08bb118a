//! Factorised marked ensembles `λ_ij(t) = φ_r(t) w_ij` with `φ_r = G_r / W_r`.
//!
//! Each part `r` of the edge partition carries a time profile `G_r`, the
//! superposed intensity of all its dyads, scaled so that its expected event
//! count over the window equals the part budget `S_r`. Marks are drawn
//! i.i.d. within the part with probabilities `p_ij = w_ij / W_r`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_store::{Event, EventLog, EventStoreError};
use crate::mark_layer::{self, BlockMap, MarkError, MarkLogLik, MarkWeights, UnsupportedPair};
use crate::rng;
use crate::time_layer::{TimeError, TimeModel};

/// Node count above which the `O(n³)` expected clustering is refused.
pub const CLUSTERING_NODE_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("expected {expected} {what}, got {got}")]
    Count { what: &'static str, expected: usize, got: usize },
    #[error("part {part}: time window {got} differs from horizon {expected}")]
    WindowMismatch { part: usize, expected: f64, got: f64 },
    #[error("part {part}: budget {budget} must be finite and nonnegative")]
    InvalidBudget { part: usize, budget: f64 },
    #[error("part {part}: positive budget {budget} but the time profile has zero expected count")]
    NoIntensity { part: usize, budget: f64 },
    #[error("part {part}: positive budget {budget} but zero total weight")]
    NoWeight { part: usize, budget: f64 },
    #[error("part {part}: scaled expected count {got} differs from budget {expected}")]
    BudgetMismatch { part: usize, expected: f64, got: f64 },
    #[error("log has {got} nodes, model has {expected}")]
    NodeMismatch { expected: usize, got: usize },
    #[error("log horizon {got} differs from model horizon {expected}")]
    HorizonMismatch { expected: f64, got: f64 },
    #[error("{n} nodes exceeds the limit of {limit} for expected clustering")]
    TooLarge { n: usize, limit: usize },
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Mark(#[from] MarkError),
    #[error(transparent)]
    Events(#[from] EventStoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

#[derive(Debug, Clone)]
struct PartSampler {
    pairs: Vec<(usize, usize)>,
    index: WeightedIndex<f64>,
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    case: String,
    labels: Vec<String>,
    horizon: f64,
    marks: MarkWeights,
    profiles: Vec<TimeModel>,
    time: Vec<TimeModel>,
    budgets: Vec<f64>,
    scales: Vec<f64>,
    samplers: Vec<Option<PartSampler>>,
}

impl EnsembleModel {
    /// Scales each profile so that its expected count on the window equals
    /// the part budget: `G_r = s_r · profile_r` with `s_r = S_r / E[N_r(T)]`
    /// (see [`TimeModel::scaled`]). Parts with zero budget get a zero profile.
    pub fn assemble(
        case: impl Into<String>,
        labels: Vec<String>,
        profiles: Vec<TimeModel>,
        marks: MarkWeights,
        budgets: Vec<f64>,
    ) -> Result<Self> {
        let parts = marks.n_parts();
        if labels.len() != marks.n_nodes() {
            return Err(EnsembleError::Count { what: "node labels", expected: marks.n_nodes(), got: labels.len() });
        }
        if profiles.len() != parts {
            return Err(EnsembleError::Count { what: "time profiles", expected: parts, got: profiles.len() });
        }
        if budgets.len() != parts {
            return Err(EnsembleError::Count { what: "budgets", expected: parts, got: budgets.len() });
        }
        let horizon = profiles.first().map_or(1.0, TimeModel::window);
        let mut time = Vec::with_capacity(parts);
        let mut scales = Vec::with_capacity(parts);
        for (r, (profile, &budget)) in profiles.iter().zip(&budgets).enumerate() {
            if profile.window() != horizon {
                return Err(EnsembleError::WindowMismatch { part: r, expected: horizon, got: profile.window() });
            }
            if !budget.is_finite() || budget < 0.0 {
                return Err(EnsembleError::InvalidBudget { part: r, budget });
            }
            let scale = if budget > 0.0 {
                if marks.part_totals()[r] <= 0.0 {
                    return Err(EnsembleError::NoWeight { part: r, budget });
                }
                let base = profile.expected_count();
                if !(base > 0.0) {
                    return Err(EnsembleError::NoIntensity { part: r, budget });
                }
                budget / base
            } else {
                0.0
            };
            let g = profile.scaled(scale)?;
            let got = g.expected_count();
            if (got - budget).abs() > 1e-9 * budget.max(1.0) {
                return Err(EnsembleError::BudgetMismatch { part: r, expected: budget, got });
            }
            time.push(g);
            scales.push(scale);
        }
        let samplers = (0..parts)
            .map(|r| {
                let support = marks.part_support(r);
                if support.is_empty() {
                    return None;
                }
                let (pairs, w): (Vec<_>, Vec<_>) = support.into_iter().unzip();
                Some(PartSampler { pairs, index: WeightedIndex::new(w).expect("positive weights") })
            })
            .collect();
        Ok(Self { case: case.into(), labels, horizon, marks, profiles, time, budgets, scales, samplers })
    }

    /// The same profiles and weights on another window with budgets
    /// multiplied by `budget_factor` (test-split scoring).
    pub fn for_window(&self, window: f64, budget_factor: f64) -> Result<Self> {
        let profiles = self.profiles.iter().map(|p| p.with_window(window)).collect::<std::result::Result<_, _>>()?;
        let budgets = self.budgets.iter().map(|b| b * budget_factor).collect();
        Self::assemble(self.case.clone(), self.labels.clone(), profiles, self.marks.clone(), budgets)
    }

    pub fn case(&self) -> &str {
        &self.case
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_parts(&self) -> usize {
        self.time.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn marks(&self) -> &MarkWeights {
        &self.marks
    }

    /// Unscaled profiles as passed to [`assemble`](Self::assemble).
    pub fn profiles(&self) -> &[TimeModel] {
        &self.profiles
    }

    /// Scaled part profiles `G_r`.
    pub fn time_models(&self) -> &[TimeModel] {
        &self.time
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    /// `μ_ij = S_r p_ij`, the expected count of dyad `(i, j)` on the window.
    pub fn integrated_intensities(&self) -> Array2<f64> {
        let n = self.n_nodes();
        Array2::from_shape_fn((n, n), |(i, j)| self.budgets[self.marks.part_of(i, j)] * self.marks.prob(i, j))
    }

    fn check_log(&self, log: &EventLog) -> Result<()> {
        if log.n_nodes() != self.n_nodes() {
            return Err(EnsembleError::NodeMismatch { expected: self.n_nodes(), got: log.n_nodes() });
        }
        if log.horizon() != self.horizon {
            return Err(EnsembleError::HorizonMismatch { expected: self.horizon, got: log.horizon() });
        }
        Ok(())
    }

    /// Event times of each part, in log order.
    pub fn part_times(&self, log: &EventLog) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.n_parts()];
        for e in log.events() {
            out[self.marks.part_of(e.src, e.dst)].push(e.t);
        }
        out
    }

    /// Decomposed log-likelihood. The time part is `Σ_r ℓ(G_r)` on the
    /// events of each part, which absorbs the `W_r` normalisation; the mark
    /// part is the categorical likelihood of the marks under `p_ij`.
    pub fn joint_log_likelihood(&self, log: &EventLog) -> Result<JointLogLik> {
        self.check_log(log)?;
        let part_time: Vec<f64> = self
            .part_times(log)
            .iter()
            .zip(&self.time)
            .map(|(times, g)| g.log_likelihood(times))
            .collect::<std::result::Result<_, _>>()?;
        let time_part: f64 = part_time.iter().sum();
        let MarkLogLik { value, supported_value, supported_events, unsupported } =
            mark_layer::mark_log_likelihood(&self.marks, log)?;
        Ok(JointLogLik {
            total: time_part + value,
            time_part,
            mark_part: value,
            supported_total: time_part + supported_value,
            events: log.len(),
            supported_events,
            part_time,
            unsupported,
        })
    }

    /// `Σ_k log λ_{i_k j_k}(t_k) - Σ_ij ∫ λ_ij` evaluated dyad by dyad.
    pub fn log_likelihood_direct(&self, log: &EventLog) -> Result<f64> {
        self.check_log(log)?;
        let part_times = self.part_times(log);
        let mut intensities = Vec::with_capacity(self.n_parts());
        let mut compensators = Vec::with_capacity(self.n_parts());
        for (times, g) in part_times.iter().zip(&self.time) {
            intensities.push(g.event_intensities(times)?);
            compensators.push(g.total_compensator(times)?);
        }
        let mut cursor = vec![0usize; self.n_parts()];
        let mut acc = 0.0;
        for e in log.events() {
            let r = self.marks.part_of(e.src, e.dst);
            let lambda = intensities[r][cursor[r]] * self.marks.prob(e.src, e.dst);
            cursor[r] += 1;
            acc += if lambda > 0.0 { lambda.ln() } else { f64::NEG_INFINITY };
        }
        for ((i, j), _) in self.marks.weights().indexed_iter() {
            acc -= compensators[self.marks.part_of(i, j)] * self.marks.prob(i, j);
        }
        Ok(acc)
    }

    /// `Σ_ij ∫ (λ_ij log λ_ij - λ_ij) dt` along the history in `log`.
    pub fn entropy_functional(&self, log: &EventLog) -> Result<f64> {
        self.check_log(log)?;
        let part_times = self.part_times(log);
        let n = self.n_nodes();
        let mut plogp = vec![0.0; self.n_parts()];
        for i in 0..n {
            for j in 0..n {
                let p = self.marks.prob(i, j);
                if p > 0.0 {
                    plogp[self.marks.part_of(i, j)] += p * p.ln();
                }
            }
        }
        let mut acc = 0.0;
        for (r, (times, g)) in part_times.iter().zip(&self.time).enumerate() {
            acc += g.entropy_functional(times)? + g.total_compensator(times)? * plogp[r];
        }
        Ok(acc)
    }

    /// One network: each part's profile simulated on its own stream, marks
    /// drawn i.i.d. within the part.
    pub fn sample(&self, seed: u64) -> EventLog {
        let mut events = Vec::new();
        for (r, g) in self.time.iter().enumerate() {
            let Some(sampler) = &self.samplers[r] else { continue };
            let mut rng = rng::stream(seed, &format!("part-{r}"));
            for t in g.simulate(&mut rng) {
                let (i, j) = sampler.pairs[sampler.index.sample(&mut rng)];
                events.push(Event::new(t, i, j));
            }
        }
        EventLog::new(self.labels.clone(), events, self.horizon).expect("sampled events satisfy log invariants")
    }

    /// `Σ_ij (1 - e^{-μ_ij})`.
    pub fn expected_unique_edges(&self) -> f64 {
        self.integrated_intensities().iter().map(|&m| -(-m).exp_m1()).sum()
    }

    /// Expected unique dyads from block `a` to block `b`.
    pub fn expected_unique_by_block(&self, blocks: &BlockMap) -> Result<Array2<f64>> {
        if blocks.n_nodes() != self.n_nodes() {
            return Err(EnsembleError::NodeMismatch { expected: self.n_nodes(), got: blocks.n_nodes() });
        }
        let nb = blocks.n_blocks();
        let mut out = Array2::zeros((nb, nb));
        for ((i, j), &m) in self.integrated_intensities().indexed_iter() {
            out[[blocks.block_of(i), blocks.block_of(j)]] += -(-m).exp_m1();
        }
        Ok(out)
    }

    /// `E[k_i^out] = Σ_j (1 - e^{-μ_ij})`.
    pub fn expected_out_degree(&self) -> Vec<f64> {
        self.integrated_intensities().outer_iter().map(|row| row.iter().map(|&m| -(-m).exp_m1()).sum()).collect()
    }

    /// Expected local clustering under independent Poissonized dyads on the
    /// undirected collapse `q_ij = 1 - (1 - p_ij)(1 - p_ji)`.
    pub fn expected_clustering(&self) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        if n > CLUSTERING_NODE_LIMIT {
            return Err(EnsembleError::TooLarge { n, limit: CLUSTERING_NODE_LIMIT });
        }
        let mu = self.integrated_intensities();
        let p = mu.mapv(|m| -(-m).exp_m1());
        let q = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 - (1.0 - p[[i, j]]) * (1.0 - p[[j, i]]) });
        Ok(clustering_from_probabilities(&q))
    }
}

/// `c_i = Σ_{j<k} q_ij q_ik q_jk / Σ_{j<k} q_ij q_ik` for a symmetric matrix
/// with zero diagonal (0 when the denominator vanishes).
pub fn clustering_from_probabilities(q: &Array2<f64>) -> Vec<f64> {
    let n = q.nrows();
    (0..n)
        .map(|i| {
            let qi = q.row(i);
            let s: f64 = qi.sum();
            let s2: f64 = qi.iter().map(|x| x * x).sum();
            let pairs = 0.5 * (s * s - s2);
            if pairs <= 0.0 {
                return 0.0;
            }
            let mut closed = 0.0;
            for j in 0..n {
                if qi[j] == 0.0 {
                    continue;
                }
                let row = q.row(j);
                let inner: f64 = (j + 1..n).map(|k| row[k] * qi[k]).sum();
                closed += qi[j] * inner;
            }
            closed / pairs
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLogLik {
    /// `time_part + mark_part`; `-inf` with any unsupported mark.
    pub total: f64,
    pub time_part: f64,
    pub mark_part: f64,
    /// `time_part` plus the mark terms of supported events only.
    pub supported_total: f64,
    pub events: usize,
    pub supported_events: usize,
    pub part_time: Vec<f64>,
    pub unsupported: Vec<UnsupportedPair>,
}

/// Fit diagnostics carried alongside a part profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Serialize, Deserialize)]
struct TimeModelFile {
    #[serde(flatten)]
    model: TimeModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loglik: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub case: String,
    pub n_nodes: usize,
    pub horizon: f64,
    pub labels: Vec<String>,
    pub budgets: Vec<f64>,
    pub scales: Vec<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// A model with its fit diagnostics, stored as a directory:
/// `time_<r>.json`, `weights.csv`, `weights.json`, `manifest.json`.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub model: EnsembleModel,
    pub fits: Vec<Option<FitSummary>>,
    pub weights_report: Option<serde_json::Value>,
    pub notes: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path)
        .map_err(|e| EnsembleError::CorruptBundle(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| EnsembleError::CorruptBundle(format!("{}: {e}", path.display())))
}

impl Bundle {
    pub fn new(model: EnsembleModel) -> Self {
        let fits = vec![None; model.n_parts()];
        Self { model, fits, weights_report: None, notes: Vec::new() }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let m = &self.model;
        for (r, profile) in m.profiles.iter().enumerate() {
            let fit = self.fits.get(r).copied().flatten();
            let file = TimeModelFile {
                model: profile.clone(),
                loglik: fit.map(|f| f.loglik),
                iterations: fit.map(|f| f.iterations),
                converged: fit.map(|f| f.converged),
            };
            write_json(&dir.join(format!("time_{r}.json")), &file)?;
        }
        mark_layer::save_weights(&m.marks, dir.join("weights.csv"), dir.join("weights.json"), self.weights_report.clone())?;
        let manifest = Manifest {
            case: m.case.clone(),
            n_nodes: m.n_nodes(),
            horizon: m.horizon,
            labels: m.labels.clone(),
            budgets: m.budgets.clone(),
            scales: m.scales.clone(),
            notes: self.notes.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let marks = mark_layer::load_weights(dir.join("weights.csv"), dir.join("weights.json"))
            .map_err(|e| EnsembleError::CorruptBundle(format!("weights: {e}")))?;
        let sidecar: mark_layer::WeightsSidecar = read_json(&dir.join("weights.json"))?;
        let mut profiles = Vec::new();
        let mut fits = Vec::new();
        for r in 0..manifest.budgets.len() {
            let file: TimeModelFile = read_json(&dir.join(format!("time_{r}.json")))?;
            fits.push(match (file.loglik, file.iterations, file.converged) {
                (Some(loglik), Some(iterations), Some(converged)) => Some(FitSummary { loglik, iterations, converged }),
                _ => None,
            });
            profiles.push(file.model);
        }
        let model = EnsembleModel::assemble(manifest.case, manifest.labels, profiles, marks, manifest.budgets)?;
        if model.horizon != manifest.horizon {
            return Err(EnsembleError::CorruptBundle(format!(
                "horizon {} in manifest, {} in time models",
                manifest.horizon, model.horizon
            )));
        }
        for (r, (&a, &b)) in model.scales.iter().zip(&manifest.scales).enumerate() {
            if (a - b).abs() > 1e-9 * a.abs().max(b.abs()).max(1e-300) {
                return Err(EnsembleError::CorruptBundle(format!("part {r}: scale {b} in manifest, recomputed {a}")));
            }
        }
        Ok(Self { model, fits, weights_report: sidecar.report, notes: manifest.notes })
    }
}
