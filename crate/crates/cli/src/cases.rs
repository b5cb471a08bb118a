//! Construction of the six ensemble cases from a training log.

use std::path::Path;

use ndarray::Array2;
use serde_json::{json, Value};

use metn_core::ensemble::{Bundle, EnsembleModel, FitSummary};
use metn_core::event_store::{EventLog, SufficientStats};
use metn_core::mark_layer::{
    block_degree_mask, check_feasibility, edge_poisson_weights, ipfp_strength_weights, sender_partition_weights, BlockMap,
    EdgePartition, MarginTargets, MarkWeights, Mask, Quotas,
};
use metn_core::rng::derive_seed;
use metn_core::time_layer::{fit, FitOptions, TimeKind, TimeModel};

use crate::config::{ModelCase, RunConfig};
use crate::error::{CliError, Result};

/// Everything a case needs from the training data.
pub struct CaseInputs<'a> {
    pub train: &'a EventLog,
    pub stats: &'a SufficientStats,
    pub blocks: Option<&'a BlockMap>,
    pub quotas: &'a Quotas,
    pub config: &'a RunConfig,
}

pub struct CaseOutcome {
    pub bundle: Bundle,
    /// Calibration details for the fit report.
    pub report: Value,
}

/// Reads quotas as `from-data` or a `from_block,to_block,quota` CSV over
/// block names; unlisted pairs get quota 0.
pub fn load_quotas(spec: &str, blocks: Option<&BlockMap>) -> Result<Quotas> {
    if spec == "from-data" {
        return Ok(Quotas::FromData);
    }
    let Some(blocks) = blocks else {
        return Err(CliError::Usage("explicit quotas need a block map".into()));
    };
    let nb = blocks.n_blocks();
    let index = |name: &str| blocks.names().iter().position(|n| n == name);
    let mut q = Array2::zeros((nb, nb));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(spec)
        .map_err(|e| CliError::Usage(format!("cannot read quotas {spec}: {e}")))?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::data(spec, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |why: String| CliError::Data(format!("{spec} line {line}: {why}"));
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let a = index(&rec[0]).ok_or_else(|| bad(format!("unknown block {:?}", &rec[0])))?;
        let b = index(&rec[1]).ok_or_else(|| bad(format!("unknown block {:?}", &rec[1])))?;
        q[[a, b]] = rec[2].parse().map_err(|_| bad(format!("bad quota {:?}", &rec[2])))?;
    }
    Ok(Quotas::Explicit(q))
}

struct Profile {
    model: TimeModel,
    fit: Option<FitSummary>,
}

fn fit_options(config: &RunConfig, label: &str) -> FitOptions {
    FitOptions { bins: config.bins, seed: derive_seed(config.seed, label), ..FitOptions::default() }
}

fn fit_profile(kind: TimeKind, times: &[f64], window: f64, opts: &FitOptions, notes: &mut Vec<String>, what: &str) -> Result<Profile> {
    let r = fit(kind, times, window, opts).map_err(|e| CliError::data(format!("fitting {what}"), e))?;
    if !r.converged {
        let msg = format!("{what}: {} fit did not converge after {} iterations", kind.name(), r.iterations);
        log::warn!("{msg}");
        notes.push(msg);
    }
    Ok(Profile { model: r.model, fit: Some(FitSummary { loglik: r.loglik, iterations: r.iterations, converged: r.converged }) })
}

fn require_blocks<'a>(case: ModelCase, blocks: Option<&'a BlockMap>) -> Result<&'a BlockMap> {
    blocks.ok_or_else(|| CliError::Usage(format!("case {} needs a block map", case.name())))
}

fn strength_weights(case: ModelCase, inputs: &CaseInputs<'_>, mask: &Mask, report: &mut Value) -> Result<MarkWeights> {
    let targets = MarginTargets::from_stats(inputs.stats);
    let feas = check_feasibility(&targets, mask);
    report["feasibility"] = serde_json::to_value(&feas)?;
    if !feas.feasible {
        return Err(CliError::Infeasible { case: case.name().into(), detail: feas.describe(inputs.train.labels()) });
    }
    let (w, rep) = ipfp_strength_weights(&targets, mask, &inputs.config.ipfp)?;
    let mut summary = serde_json::to_value(&rep)?;
    // The KL trace is long; keep its ends.
    summary["kl_history"] = json!({
        "len": rep.kl_history.len(),
        "first": rep.kl_history.first(),
        "last": rep.kl_history.last(),
    });
    report["ipfp"] = summary;
    Ok(w)
}

/// Fits the time layers, calibrates the weights and assembles the ensemble
/// of one case on the training log.
pub fn build_case(case: ModelCase, inputs: &CaseInputs<'_>) -> Result<CaseOutcome> {
    let cfg = inputs.config;
    let train = inputs.train;
    let window = train.horizon();
    let times = train.times();
    let k = train.len() as f64;
    let mut notes = Vec::new();
    let mut report = json!({ "case": case.name() });
    let label = |what: &str| format!("fit/{}/{what}", case.name());

    let (profiles, weights, budgets): (Vec<Profile>, MarkWeights, Vec<f64>) = match case {
        ModelCase::EdgePoisson => {
            let p = fit_profile(TimeKind::Poisson, &times, window, &fit_options(cfg, &label("global")), &mut notes, "global profile")?;
            (vec![p], edge_poisson_weights(inputs.stats)?, vec![k])
        }
        ModelCase::HawkesEdgeTotals => {
            let p = fit_profile(cfg.hawkes_kind, &times, window, &fit_options(cfg, &label("global")), &mut notes, "global profile")?;
            (vec![p], edge_poisson_weights(inputs.stats)?, vec![k])
        }
        ModelCase::HawkesStrengthMask => {
            let mask = Mask::full(train.n_nodes());
            let w = strength_weights(case, inputs, &mask, &mut report)?;
            let p = fit_profile(cfg.hawkes_kind, &times, window, &fit_options(cfg, &label("global")), &mut notes, "global profile")?;
            (vec![p], w, vec![k])
        }
        ModelCase::HawkesBlockMask => {
            let blocks = require_blocks(case, inputs.blocks)?;
            let (mask, mrep) = block_degree_mask(inputs.stats, blocks, inputs.quotas).map_err(|e| match e {
                metn_core::mark_layer::MarkError::QuotaExceedsCapacity { .. } => {
                    CliError::Infeasible { case: case.name().into(), detail: e.to_string() }
                }
                other => other.into(),
            })?;
            for &(a, b, filled) in &mrep.zero_count_fills {
                notes.push(format!(
                    "block pair ({}, {}): {filled} zero-count dyads filled in lexicographic order",
                    blocks.names()[a],
                    blocks.names()[b]
                ));
            }
            report["block_mask"] = serde_json::to_value(&mrep)?;
            let w = strength_weights(case, inputs, &mask, &mut report)?;
            let p = fit_profile(cfg.hawkes_kind, &times, window, &fit_options(cfg, &label("global")), &mut notes, "global profile")?;
            (vec![p], w, vec![k])
        }
        ModelCase::SenderHawkes => {
            let w = sender_partition_weights(inputs.stats, &Mask::observed(inputs.stats))?;
            let mut part_times = vec![Vec::new(); train.n_nodes()];
            for e in train.events() {
                part_times[e.src].push(e.t);
            }
            let mut profiles = Vec::with_capacity(train.n_nodes());
            let mut fallback = Vec::new();
            for (i, ts) in part_times.iter().enumerate() {
                let what = format!("sender {}", train.label(i));
                let p = if ts.len() >= cfg.sender_min_events.max(2) {
                    fit_profile(cfg.hawkes_kind, ts, window, &fit_options(cfg, &label(&format!("sender-{i}"))), &mut notes, &what)?
                } else {
                    if !ts.is_empty() {
                        fallback.push(train.label(i).to_string());
                    }
                    Profile { model: TimeModel::poisson(ts.len() as f64 / window, window)?, fit: None }
                };
                profiles.push(p);
            }
            if !fallback.is_empty() {
                notes.push(format!(
                    "{} senders with fewer than {} events use a Poisson profile: {}",
                    fallback.len(),
                    cfg.sender_min_events,
                    fallback.join(", ")
                ));
            }
            let budgets = inputs.stats.out_strength.iter().map(|&s| s as f64).collect();
            (profiles, w, budgets)
        }
        ModelCase::Partitioned => {
            let blocks = require_blocks(case, inputs.blocks)?;
            let mask = Mask::full(train.n_nodes());
            let w = strength_weights(case, inputs, &mask, &mut report)?
                .with_partition(EdgePartition::BySourceBlock { blocks: blocks.clone() })?;
            let nb = blocks.n_blocks();
            let mut part_times = vec![Vec::new(); nb];
            let mut budgets = vec![0.0; nb];
            for e in train.events() {
                part_times[blocks.block_of(e.src)].push(e.t);
                budgets[blocks.block_of(e.src)] += 1.0;
            }
            let mut profiles = Vec::with_capacity(nb);
            for (b, ts) in part_times.iter().enumerate() {
                let what = format!("source block {}", blocks.names()[b]);
                profiles.push(if ts.is_empty() {
                    Profile { model: TimeModel::poisson(0.0, window)?, fit: None }
                } else {
                    fit_profile(TimeKind::Nhpp, ts, window, &fit_options(cfg, &label(&format!("block-{b}"))), &mut notes, &what)?
                });
            }
            (profiles, w, budgets)
        }
    };

    for flag in weights.flags() {
        notes.push(flag.clone());
    }
    let fits = profiles.iter().map(|p| p.fit).collect();
    let model = EnsembleModel::assemble(
        case.name(),
        train.labels().to_vec(),
        profiles.into_iter().map(|p| p.model).collect(),
        weights,
        budgets,
    )?;
    report["scales"] = json!(model.scales());
    report["notes"] = json!(notes);
    let weights_report = report.get("ipfp").cloned().map(|ipfp| {
        let mut r = json!({ "ipfp": ipfp });
        if let Some(b) = report.get("block_mask") {
            r["block_mask"] = b.clone();
        }
        r
    });
    let bundle = Bundle { model, fits, weights_report, notes };
    Ok(CaseOutcome { bundle, report })
}

pub fn bundle_dir(bundles: &Path, case: ModelCase) -> std::path::PathBuf {
    bundles.join(case.name())
}

/// Loads the bundle of every case, naming the first missing one.
pub fn load_bundles(bundles: &Path, cases: &[ModelCase]) -> Result<Vec<(ModelCase, Bundle)>> {
    cases
        .iter()
        .map(|&c| {
            let dir = bundle_dir(bundles, c);
            if !dir.join("manifest.json").is_file() {
                return Err(CliError::Missing(format!("bundle for case {} ({}); run `metn fit` first", c.name(), dir.display())));
            }
            Ok((c, Bundle::load(&dir)?))
        })
        .collect()
}
