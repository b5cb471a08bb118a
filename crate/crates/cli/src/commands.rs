use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use metn_core::diagnostics::{
    block_unique_edge_heatmap, default_motif_window, degree_calibration_table, degree_clustering_scatter, interevent_table,
    motif_table, per_event_loglik_table, raster_export, Cell, Column, IntereventInput, RasterGroup, ReportTable,
    ScatterSource, Scored,
};
use metn_core::ensemble::{Bundle, EnsembleModel};
use metn_core::event_store::{load_events, save_events, split, sufficient_stats, EventLog, LoadOptions};
use metn_core::mark_layer::{load_block_map, BlockMap};
use metn_core::rng::derive_seed;
use metn_core::time_layer::{fit, FitOptions, MomentOptions, TimeKind, TimeModel};

use crate::cases::{build_case, bundle_dir, load_bundles, load_quotas, CaseInputs, CaseOutcome};
use crate::config::{ModelCase, RunConfig};
use crate::error::{CliError, Result};

/// Input log, its split and the block map, as configured.
pub struct Prepared {
    pub dataset: String,
    pub train: EventLog,
    pub test: Option<EventLog>,
    pub blocks: Option<BlockMap>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let input = cfg.input.as_ref().ok_or_else(|| CliError::Usage("no input event log".into()))?;
    let opts = LoadOptions { self_loops: cfg.self_loops, time_unit: cfg.time_unit, horizon: cfg.horizon };
    let (full, report) = load_events(input, &opts).map_err(|e| CliError::data(input.display(), e))?;
    if report.dropped_self_loops > 0 {
        log::warn!("dropped {} self-loop events from {}", report.dropped_self_loops, input.display());
    }
    log::info!("loaded {} events on {} nodes over [0, {}]", full.len(), full.n_nodes(), full.horizon());
    let blocks = match &cfg.block_map {
        Some(p) => Some(load_block_map(p, full.labels()).map_err(|e| CliError::data(p.display(), e))?),
        None => None,
    };
    let (train, test) = match cfg.split {
        Some(spec) => {
            let (a, b) = split(&full, spec)?;
            (a, Some(b))
        }
        None => (full, None),
    };
    let dataset = input.file_stem().map_or_else(|| "input".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Prepared { dataset, train, test, blocks })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Fits one time layer to the merged training stream.
pub fn cmd_fit_time(cfg: &RunConfig, kind: TimeKind, out: Option<&Path>) -> Result<()> {
    let data = prepare(cfg)?;
    let opts = FitOptions { bins: cfg.bins, seed: derive_seed(cfg.seed, &format!("fit-time/{}", kind.name())), ..Default::default() };
    let r = fit(kind, &data.train.times(), data.train.horizon(), &opts)?;
    if !r.converged {
        log::warn!("{} fit did not converge after {} iterations", kind.name(), r.iterations);
    }
    let mut value = serde_json::to_value(&r.model)?;
    value["loglik"] = json!(r.loglik);
    value["iterations"] = json!(r.iterations);
    value["converged"] = json!(r.converged);
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            write_json(path, &value)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
    }
}

/// Fits every configured case and writes `bundles/<case>/` plus
/// `fit_report.json`. Cases are built concurrently; a failed case does not
/// stop the others, but the first failure decides the exit status.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let stats = sufficient_stats(&data.train);
    let quotas = load_quotas(&cfg.quotas, data.blocks.as_ref())?;
    let cases = cfg.resolved_cases();
    let inputs = CaseInputs { train: &data.train, stats: &stats, blocks: data.blocks.as_ref(), quotas: &quotas, config: cfg };

    let outcomes: Vec<Result<CaseOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = cases.iter().map(|&c| s.spawn({
            let inputs = &inputs;
            move || build_case(c, inputs)
        })).collect();
        handles.into_iter().map(|h| h.join().expect("case fit panicked")).collect()
    });

    let bundles = cfg.bundles_dir();
    fs::create_dir_all(&bundles)?;
    let mut entries = Vec::new();
    let mut failure = None;
    for (&case, outcome) in cases.iter().zip(outcomes) {
        let dir = bundle_dir(&bundles, case);
        match outcome {
            Ok(o) => {
                o.bundle.save(&dir)?;
                let mut entry = o.report;
                entry["fits"] = serde_json::to_value(&o.bundle.fits)?;
                entries.push(entry);
                log::info!("case {}: bundle written", case.name());
            }
            Err(e) => {
                if dir.exists() {
                    fs::remove_dir_all(&dir)?;
                }
                entries.push(json!({ "case": case.name(), "error": e.to_string() }));
                failure.get_or_insert(e);
            }
        }
    }
    let report = json!({
        "dataset": data.dataset,
        "n_nodes": data.train.n_nodes(),
        "train_events": data.train.len(),
        "train_horizon": data.train.horizon(),
        "test_events": data.test.as_ref().map(|t| t.len()),
        "seed": cfg.seed,
        "cases": entries,
    });
    write_json(&cfg.out.join("fit_report.json"), &report)?;
    failure.map_or(Ok(()), Err)
}

/// Draws `reps` event logs from a bundle, optionally on another horizon at
/// the same event rate.
pub fn cmd_simulate(bundle: &Path, out: &Path, reps: usize, seed: u64, horizon: Option<f64>) -> Result<Vec<PathBuf>> {
    if !bundle.join("manifest.json").is_file() {
        return Err(CliError::Missing(format!("no bundle at {}", bundle.display())));
    }
    let b = Bundle::load(bundle)?;
    let model = match horizon {
        Some(h) if !(h > 0.0 && h.is_finite()) => return Err(CliError::Usage(format!("horizon {h} must be positive"))),
        Some(h) => b.model.for_window(h, h / b.model.horizon())?,
        None => b.model,
    };
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(reps);
    for k in 0..reps {
        let log = model.sample(derive_seed(seed, &format!("simulate/{k}")));
        let path = out.join(format!("sample_{k}.csv"));
        save_events(&log, &path)?;
        written.push(path);
    }
    Ok(written)
}

fn check_universe(model: &EnsembleModel, log: &EventLog) -> Result<()> {
    if model.labels() != log.labels() {
        let first = model.labels().iter().zip(log.labels()).position(|(a, b)| a != b);
        return Err(CliError::Data(format!(
            "node universe mismatch for case {}: bundle has {} nodes, log has {}{}",
            model.case(),
            model.n_nodes(),
            log.n_nodes(),
            first.map_or(String::new(), |k| format!(" (first difference at node {k})"))
        )));
    }
    Ok(())
}

fn test_model(model: &EnsembleModel, train: &EventLog, test: &EventLog) -> Result<EnsembleModel> {
    Ok(model.for_window(test.horizon(), test.len() as f64 / train.len() as f64)?)
}

fn loglik_tables(bundles: &[(ModelCase, Bundle)], data: &Prepared) -> Result<(ReportTable, ReportTable)> {
    let scored: Vec<(&str, Scored<'_>)> = bundles.iter().map(|(c, b)| (c.name(), Scored::Ensemble(&b.model))).collect();
    let train = per_event_loglik_table(&scored, &data.train)?.renamed("loglik_train");
    let test = match &data.test {
        Some(test) => {
            let models = bundles.iter().map(|(_, b)| test_model(&b.model, &data.train, test)).collect::<Result<Vec<_>>>()?;
            let scored: Vec<(&str, Scored<'_>)> =
                bundles.iter().zip(&models).map(|((c, _), m)| (c.name(), Scored::Ensemble(m))).collect();
            per_event_loglik_table(&scored, test)?
        }
        None => {
            let mut t = per_event_loglik_table(&[], &data.train)?;
            t.flag("no test split configured");
            t
        }
    };
    Ok((train, test.renamed("loglik_test")))
}

fn time_fit_table(bundles: &[(ModelCase, Bundle)], train: &EventLog) -> Result<ReportTable> {
    let mut table = ReportTable::new(
        "time_fit",
        vec![
            Column::text("case"),
            Column::int("part"),
            Column::text("kind"),
            Column::int("events"),
            Column::float("fit_loglik").nullable(),
            Column::float("eval_loglik"),
            Column::int("iterations").nullable(),
            Column::text("converged"),
        ],
    );
    for (case, b) in bundles {
        let parts = b.model.part_times(train);
        for (r, (profile, times)) in b.model.profiles().iter().zip(&parts).enumerate() {
            let fit = b.fits.get(r).copied().flatten();
            table.push(vec![
                case.name().into(),
                r.into(),
                profile.kind_name().into(),
                times.len().into(),
                fit.map(|f| f.loglik).into(),
                profile.log_likelihood(times)?.into(),
                fit.map_or(Cell::Empty, |f| f.iterations.into()),
                fit.map_or("n/a", |f| if f.converged { "yes" } else { "no" }).into(),
            ])?;
        }
    }
    Ok(table)
}

fn unsupported_table(bundles: &[(ModelCase, Bundle)], data: &Prepared) -> Result<ReportTable> {
    let mut table = ReportTable::new(
        "unsupported",
        vec![Column::text("case"), Column::text("split"), Column::text("src"), Column::text("dst"), Column::int("events")],
    );
    for (case, b) in bundles {
        let mut splits = vec![("train", b.model.clone(), &data.train)];
        if let Some(test) = &data.test {
            splits.push(("test", test_model(&b.model, &data.train, test)?, test));
        }
        for (name, model, log) in splits {
            for u in model.joint_log_likelihood(log)?.unsupported {
                table.push(vec![
                    case.name().into(),
                    name.into(),
                    log.label(u.src).into(),
                    log.label(u.dst).into(),
                    Cell::Int(u.events as i64),
                ])?;
            }
        }
    }
    Ok(table)
}

fn load_checked(cfg: &RunConfig, data: &Prepared) -> Result<Vec<(ModelCase, Bundle)>> {
    let bundles = load_bundles(&cfg.bundles_dir(), &cfg.resolved_cases())?;
    for (_, b) in &bundles {
        check_universe(&b.model, &data.train)?;
    }
    Ok(bundles)
}

/// Scores the fitted bundles on the train and test logs into `eval/`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let bundles = load_checked(cfg, &data)?;
    let dir = cfg.out.join("eval");
    fs::create_dir_all(&dir)?;
    let (train, test) = loglik_tables(&bundles, &data)?;
    train.save(&dir)?;
    test.save(&dir)?;
    time_fit_table(&bundles, &data.train)?.save(&dir)?;
    unsupported_table(&bundles, &data)?.save(&dir)?;
    Ok(())
}

fn report_time_models(cfg: &RunConfig, log: &EventLog, split_name: &str) -> [Option<TimeModel>; 3] {
    let fit_kind = |kind: TimeKind| {
        if !cfg.time_kinds.contains(&kind) {
            return None;
        }
        let opts = FitOptions {
            bins: cfg.bins,
            seed: derive_seed(cfg.seed, &format!("report/time/{split_name}/{}", kind.name())),
            ..Default::default()
        };
        match fit(kind, &log.times(), log.horizon(), &opts) {
            Ok(r) => Some(r.model),
            Err(e) => {
                log::warn!("{split_name}: cannot fit {}: {e}", kind.name());
                None
            }
        }
    };
    [fit_kind(TimeKind::Poisson), fit_kind(TimeKind::HawkesExp), fit_kind(TimeKind::HawkesPl)]
}

fn tagged(table: ReportTable, column: &str, value: &str) -> Result<ReportTable> {
    Ok(table.with_leading_column(Column::text(column), value.into())?)
}

/// Concatenates per-case tables under a leading `case` column.
fn per_case(
    name: &str,
    bundles: &[(ModelCase, Bundle)],
    mut make: impl FnMut(&EnsembleModel) -> Result<ReportTable>,
) -> Result<Option<ReportTable>> {
    let mut out: Option<ReportTable> = None;
    for (case, b) in bundles {
        let t = tagged(make(&b.model)?, "case", case.name())?.renamed(name);
        match out.as_mut() {
            Some(acc) => acc.append(t)?,
            None => out = Some(t),
        }
    }
    Ok(out)
}

fn heatmap_columns() -> Vec<Column> {
    vec![Column::text("from_block"), Column::text("to_block"), Column::float("value")]
}

/// Writes the diagnostic CSV suite into `report/`.
pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let bundles = load_checked(cfg, &data)?;
    let dir = cfg.out.join("report");
    fs::create_dir_all(&dir)?;

    let moments = MomentOptions { events: cfg.moment_events, seed: derive_seed(cfg.seed, "report/moments") };
    let train_models = report_time_models(cfg, &data.train, "train");
    let test_models = data.test.as_ref().map(|t| report_time_models(cfg, t, "test"));
    let mut inputs = Vec::new();
    let mut splits: Vec<(&str, &EventLog, &[Option<TimeModel>; 3])> = vec![("train", &data.train, &train_models)];
    if let (Some(t), Some(m)) = (&data.test, &test_models) {
        splits.push(("test", t, m));
    }
    for &(split, log, m) in &splits {
        if log.len() < 2 {
            log::warn!("{split} split has fewer than two events; no inter-event row");
            continue;
        }
        inputs.push(IntereventInput {
            dataset: &data.dataset,
            split,
            log,
            poisson: m[0].as_ref(),
            hawkes_exp: m[1].as_ref(),
            hawkes_pl: m[2].as_ref(),
        });
    }
    interevent_table(&inputs, &moments)?.save(&dir)?;

    let window = cfg.motif_window.unwrap_or_else(|| default_motif_window(&data.train));
    let mut samples = Vec::new();
    for (case, b) in &bundles {
        for k in 0..cfg.samples {
            let seed = derive_seed(cfg.seed, &format!("report/sample/{}/{k}", case.name()));
            samples.push((case.name(), k, b.model.sample(seed)));
        }
    }
    let mut sources: Vec<(&str, usize, &EventLog)> = vec![("data", 0, &data.train)];
    sources.extend(samples.iter().map(|(c, k, log)| (*c, *k, log)));
    motif_table(&sources, window)?.save(&dir)?;

    let (train_ll, test_ll) = loglik_tables(&bundles, &data)?;
    let mut loglik = tagged(train_ll, "split", "train")?.renamed("loglik");
    loglik.append(tagged(test_ll, "split", "test")?.renamed("loglik"))?;
    loglik.save(&dir)?;

    raster_export(&data.train, cfg.raster_top_k, RasterGroup::Node)?.save(&dir)?;
    if let Some(blocks) = &data.blocks {
        raster_export(&data.train, cfg.raster_top_k, RasterGroup::Block(blocks))?.renamed("raster_blocks").save(&dir)?;
    }

    match (&data.blocks, bundles.first()) {
        (Some(blocks), Some((_, first))) => {
            let (obs, _, _) = block_unique_edge_heatmap(&data.train, &first.model, blocks)?;
            obs.save(&dir)?;
            let exp = per_case("heatmap_exp", &bundles, |m| Ok(block_unique_edge_heatmap(&data.train, m, blocks)?.1))?;
            let res = per_case("heatmap_res", &bundles, |m| Ok(block_unique_edge_heatmap(&data.train, m, blocks)?.2))?;
            exp.expect("at least one bundle").save(&dir)?;
            res.expect("at least one bundle").save(&dir)?;
        }
        _ => {
            for name in ["heatmap_obs", "heatmap_exp", "heatmap_res"] {
                let mut columns = heatmap_columns();
                if name != "heatmap_obs" {
                    columns.insert(0, Column::text("case"));
                }
                let mut t = ReportTable::new(name, columns);
                t.flag(if data.blocks.is_none() { "no block map configured" } else { "no bundles" });
                t.save(&dir)?;
            }
        }
    }

    let mut scatter = tagged(degree_clustering_scatter(ScatterSource::Log(&data.train))?, "source", "data")?;
    for (case, b) in &bundles {
        scatter.append(tagged(degree_clustering_scatter(ScatterSource::Model(&b.model))?, "source", case.name())?)?;
    }
    scatter.save(&dir)?;

    match per_case("degrees", &bundles, |m| Ok(degree_calibration_table(m, &data.train)?))? {
        Some(t) => t.save(&dir)?,
        None => ReportTable::new("degrees", vec![Column::text("case")]).save(&dir)?,
    }
    Ok(())
}

/// `fit`, then `evaluate`, then `report`.
pub fn cmd_run(cfg: &RunConfig) -> Result<()> {
    cmd_fit(cfg)?;
    cmd_evaluate(cfg)?;
    cmd_report(cfg)
}

/// Writes the bundled synthetic dataset into `dir`.
pub fn cmd_generate(dir: &Path, spec: &crate::synth::SynthSpec, seed: u64) -> Result<()> {
    let data = crate::synth::generate(spec)?;
    crate::synth::write_dataset(&data, dir, seed)
}
