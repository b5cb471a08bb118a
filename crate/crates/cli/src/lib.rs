//! Command-line driver for fitting, sampling and evaluating temporal
//! network ensembles.

pub mod cases;
pub mod commands;
pub mod config;
pub mod error;
pub mod synth;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use metn_core::event_store::{SelfLoopPolicy, SplitSpec};
use metn_core::time_layer::TimeKind;

use config::{ModelCase, RunConfig};
use error::Result;

#[derive(Debug, Parser)]
#[command(name = "metn", version, about = "Maximum-entropy temporal network ensembles")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic benchmark dataset and a config that runs it.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        nodes: usize,
        #[arg(long, default_value_t = 5000)]
        events: usize,
        #[arg(long, default_value_t = 5)]
        blocks: usize,
    },
    /// Fit one time layer to the merged training stream.
    FitTime {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_kind)]
        kind: TimeKind,
        /// JSON output file; stdout when absent.
        #[arg(long = "model-out")]
        model_out: Option<PathBuf>,
    },
    /// Fit every configured model case and write bundles.
    Fit(RunArgs),
    /// Sample event logs from a bundle.
    Simulate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Window length; the event rate is kept.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Score bundles on the train and test logs.
    Evaluate(RunArgs),
    /// Write the diagnostic CSV suite.
    Report(RunArgs),
    /// Fit, evaluate and report.
    Run(RunArgs),
}

/// Config file plus overrides shared by the pipeline commands.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, conflicts_with = "split_time")]
    pub split_count: Option<usize>,
    #[arg(long)]
    pub split_time: Option<f64>,
    #[arg(long)]
    pub time_unit: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, value_parser = parse_self_loops)]
    pub self_loops: Option<SelfLoopPolicy>,
    #[arg(long)]
    pub block_map: Option<PathBuf>,
    /// Comma-separated case names.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub cases: Option<Vec<ModelCase>>,
    /// `from-data` or a quota CSV.
    #[arg(long)]
    pub quotas: Option<String>,
    #[arg(long)]
    pub motif_window: Option<f64>,
    #[arg(long, value_parser = parse_kind)]
    pub hawkes_kind: Option<TimeKind>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Sampled networks per case in the report.
    #[arg(long)]
    pub samples: Option<usize>,
}

fn parse_kind(s: &str) -> std::result::Result<TimeKind, String> {
    s.parse()
}

fn parse_self_loops(s: &str) -> std::result::Result<SelfLoopPolicy, String> {
    match s {
        "drop" => Ok(SelfLoopPolicy::Drop),
        "error" => Ok(SelfLoopPolicy::Error),
        _ => Err(format!("expected 'drop' or 'error', got '{s}'")),
    }
}

impl RunArgs {
    /// The config file (or defaults) with command-line overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            };
        }
        set!(input);
        set!(out);
        set!(seed);
        set!(time_unit);
        set!(horizon);
        set!(self_loops);
        set!(block_map);
        set!(cases);
        set!(quotas);
        set!(motif_window);
        set!(hawkes_kind);
        set!(bins);
        set!(samples);
        if let Some(k) = self.split_count {
            cfg.split = Some(SplitSpec::ByCount(k));
        }
        if let Some(t) = self.split_time {
            cfg.split = Some(SplitSpec::ByTime(t));
        }
        Ok(cfg)
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out, seed, nodes, events, blocks } => {
            let spec = synth::SynthSpec { nodes, events, blocks, ..Default::default() };
            commands::cmd_generate(&out, &spec, seed)
        }
        Command::FitTime { run, kind, model_out } => commands::cmd_fit_time(&run.resolve()?, kind, model_out.as_deref()),
        Command::Fit(run) => commands::cmd_fit(&run.resolve()?),
        Command::Simulate { bundle, out, reps, seed, horizon } => {
            commands::cmd_simulate(&bundle, &out, reps, seed, horizon).map(|_| ())
        }
        Command::Evaluate(run) => commands::cmd_evaluate(&run.resolve()?),
        Command::Report(run) => commands::cmd_report(&run.resolve()?),
        Command::Run(run) => commands::cmd_run(&run.resolve()?),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).parse_default_env().try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

