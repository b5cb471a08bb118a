//! Run configuration: one JSON or TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use metn_core::event_store::{SelfLoopPolicy, SplitSpec};
use metn_core::mark_layer::IpfpOptions;
use metn_core::time_layer::TimeKind;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelCase {
    /// Constant rate, weights proportional to dyad counts.
    EdgePoisson,
    /// Global Hawkes profile, weights proportional to dyad counts.
    HawkesEdgeTotals,
    /// Global Hawkes profile, strength-constrained weights on the full mask.
    HawkesStrengthMask,
    /// Global Hawkes profile, strength-constrained weights on a block-degree mask.
    HawkesBlockMask,
    /// One Hawkes profile per sender on the observed support.
    SenderHawkes,
    /// One piecewise NHPP profile per source block, strength-constrained weights.
    Partitioned,
}

impl ModelCase {
    pub const ALL: [ModelCase; 6] = [
        Self::EdgePoisson,
        Self::HawkesEdgeTotals,
        Self::HawkesStrengthMask,
        Self::HawkesBlockMask,
        Self::SenderHawkes,
        Self::Partitioned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EdgePoisson => "edge-poisson",
            Self::HawkesEdgeTotals => "hawkes-edge-totals",
            Self::HawkesStrengthMask => "hawkes-strength-mask",
            Self::HawkesBlockMask => "hawkes-block-mask",
            Self::SenderHawkes => "sender-hawkes",
            Self::Partitioned => "partitioned",
        }
    }

    pub fn needs_blocks(self) -> bool {
        matches!(self, Self::HawkesBlockMask | Self::Partitioned)
    }
}

impl std::str::FromStr for ModelCase {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown model case '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Event CSV (`t,src,dst`).
    pub input: Option<PathBuf>,
    pub time_unit: Option<f64>,
    pub horizon: Option<f64>,
    pub self_loops: SelfLoopPolicy,
    pub split: Option<SplitSpec>,
    /// Time-layer kinds fitted for the inter-event table and `fit-time`.
    pub time_kinds: Vec<TimeKind>,
    /// Time layer of the Hawkes cases.
    pub hawkes_kind: TimeKind,
    /// Empty means every case whose prerequisites are present.
    pub cases: Vec<ModelCase>,
    /// `node,block` CSV.
    pub block_map: Option<PathBuf>,
    /// `from-data`, or a `from_block,to_block,quota` CSV.
    pub quotas: String,
    pub motif_window: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub bins: usize,
    /// Senders with fewer events get a Poisson profile in `sender-hawkes`.
    pub sender_min_events: usize,
    pub ipfp: IpfpOptions,
    /// Simulated events behind Hawkes-implied gap variances.
    pub moment_events: usize,
    /// Simulated networks per case for report motifs.
    pub samples: usize,
    pub raster_top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            time_unit: None,
            horizon: None,
            self_loops: SelfLoopPolicy::Drop,
            split: None,
            time_kinds: vec![TimeKind::Poisson, TimeKind::Nhpp, TimeKind::HawkesExp, TimeKind::HawkesPl],
            hawkes_kind: TimeKind::HawkesExp,
            cases: Vec::new(),
            block_map: None,
            quotas: "from-data".into(),
            motif_window: None,
            seed: 0,
            out: PathBuf::from("metn-out"),
            bins: 50,
            sender_min_events: 10,
            ipfp: IpfpOptions::default(),
            moment_events: 1_000_000,
            samples: 1,
            raster_top_k: 10,
        }
    }
}

impl RunConfig {
    /// Reads a `.toml` or `.json` file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        };
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.input.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.block_map.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.out);
        if cfg.quotas != "from-data" {
            let mut q = PathBuf::from(&cfg.quotas);
            resolve(&mut q);
            cfg.quotas = q.to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    /// The cases to run: the configured list, or all cases whose
    /// prerequisites are present.
    pub fn resolved_cases(&self) -> Vec<ModelCase> {
        if self.cases.is_empty() {
            ModelCase::ALL.into_iter().filter(|c| !c.needs_blocks() || self.block_map.is_some()).collect()
        } else {
            self.cases.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_none() {
            return Err(CliError::Usage("no input event log (set `input` or pass --input)".into()));
        }
        if let Some(c) = self.resolved_cases().iter().find(|c| c.needs_blocks()) {
            if self.block_map.is_none() {
                return Err(CliError::Usage(format!("case {} needs a block map (--block-map)", c.name())));
            }
        }
        if let Some(w) = self.motif_window {
            if !(w > 0.0) {
                return Err(CliError::Usage(format!("motif window {w} must be positive")));
            }
        }
        if self.bins == 0 || self.raster_top_k == 0 {
            return Err(CliError::Usage("bins and raster_top_k must be positive".into()));
        }
        Ok(())
    }

    pub fn bundles_dir(&self) -> PathBuf {
        self.out.join("bundles")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            input = "events.csv"
            split = { by-count = 3000 }
            cases = ["edge-poisson", "sender-hawkes"]
            seed = 7
            [ipfp]
            tol = 1e-9
            "#,
        )
        .unwrap();
        assert_eq!(cfg.split, Some(SplitSpec::ByCount(3000)));
        assert_eq!(cfg.cases, vec![ModelCase::EdgePoisson, ModelCase::SenderHawkes]);
        assert_eq!(cfg.ipfp.tol, 1e-9);
        assert_eq!(cfg.ipfp.max_iter, 10_000);
        assert_eq!(cfg.bins, 50);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn block_cases_need_a_block_map() {
        let mut cfg = RunConfig { input: Some("x.csv".into()), ..Default::default() };
        assert_eq!(cfg.resolved_cases().len(), 4);
        cfg.cases = vec![ModelCase::Partitioned];
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
        cfg.block_map = Some("b.csv".into());
        cfg.validate().unwrap();
    }
}
