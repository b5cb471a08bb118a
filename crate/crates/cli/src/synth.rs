//! Bursty synthetic dataset with planted block structure.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use metn_core::event_store::{save_events, Event, EventLog};
use metn_core::rng::stream;
use metn_core::time_layer::TimeModel;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub nodes: usize,
    pub events: usize,
    pub blocks: usize,
    /// Global exponential-kernel Hawkes profile.
    pub mu: f64,
    pub eta: f64,
    pub beta: f64,
    /// Log-scale spread of node activity.
    pub activity_sigma: f64,
    /// Dyad inclusion probability within and across blocks.
    pub p_in: f64,
    pub p_out: f64,
    /// Weight multiplier of cross-block dyads.
    pub cross_affinity: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            nodes: 100,
            events: 5000,
            blocks: 5,
            mu: 2.0,
            eta: 0.6,
            beta: 2.0,
            activity_sigma: 0.8,
            p_in: 0.3,
            p_out: 0.05,
            cross_affinity: 0.3,
            seed: 20_240_601,
        }
    }
}

pub struct SynthData {
    pub log: EventLog,
    /// Block index of each node, in label order.
    pub blocks: Vec<usize>,
}

pub fn node_label(i: usize) -> String {
    format!("v{i:03}")
}

pub fn block_label(b: usize) -> String {
    format!("b{b}")
}

fn times(spec: &SynthSpec) -> Result<Vec<f64>> {
    let rate = spec.mu / (1.0 - spec.eta);
    let mut window = 1.2 * spec.events as f64 / rate;
    for attempt in 0.. {
        let model = TimeModel::hawkes_exp(spec.mu, spec.eta, spec.beta, window)?;
        let mut ts = model.simulate(&mut stream(spec.seed, &format!("synth/times/{attempt}")));
        if ts.len() >= spec.events {
            ts.truncate(spec.events);
            return Ok(ts);
        }
        window *= 2.0;
    }
    unreachable!()
}

/// Draws the dataset. Marks are i.i.d. given a sparse weight matrix
/// `w_ij = a_i a_j affinity(b_i, b_j)` on a random support; the draw is
/// repeated until every node takes part in some event.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    let n = spec.nodes;
    if n < 3 || spec.blocks == 0 || spec.blocks > n || spec.events < 2 {
        return Err(CliError::Usage("synthetic spec needs nodes >= 3, 1 <= blocks <= nodes, events >= 2".into()));
    }
    if !(spec.eta >= 0.0 && spec.eta < 1.0) {
        return Err(CliError::Usage(format!("branching ratio {} must lie in [0, 1)", spec.eta)));
    }
    let ts = times(spec)?;
    let block: Vec<usize> = (0..n).map(|i| i % spec.blocks).collect();
    let lognormal = LogNormal::new(0.0, spec.activity_sigma).map_err(|e| CliError::Usage(e.to_string()))?;
    for attempt in 0.. {
        let mut rng = stream(spec.seed, &format!("synth/marks/{attempt}"));
        let activity: Vec<f64> = (0..n).map(|_| lognormal.sample(&mut rng)).collect();
        let mut pairs = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            let mut row_empty = true;
            for j in 0..n {
                let same = block[i] == block[j];
                if i == j || !rng.random_bool(if same { spec.p_in } else { spec.p_out }) {
                    continue;
                }
                row_empty = false;
                pairs.push((i, j));
                weights.push(activity[i] * activity[j] * if same { 1.0 } else { spec.cross_affinity });
            }
            if row_empty {
                let j = (i + 1) % n;
                pairs.push((i, j));
                weights.push(activity[i] * activity[j]);
            }
        }
        let pick = WeightedIndex::new(&weights).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut seen = vec![false; n];
        let events: Vec<Event> = ts
            .iter()
            .map(|&t| {
                let (i, j) = pairs[pick.sample(&mut rng)];
                seen[i] = true;
                seen[j] = true;
                Event::new(t, i, j)
            })
            .collect();
        if seen.iter().all(|&s| s) {
            let horizon = *ts.last().expect("at least two events");
            let log = EventLog::new((0..n).map(node_label).collect(), events, horizon)?;
            return Ok(SynthData { log, blocks: block });
        }
        log::debug!("synthetic draw {attempt} left nodes without events; redrawing marks");
    }
    unreachable!()
}

/// Writes `events.csv`, `blocks.csv` and a `config.toml` that runs every
/// case on an 80/20 count split.
pub fn write_dataset(data: &SynthData, dir: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_events(&data.log, dir.join("events.csv"))?;
    let mut w = csv::Writer::from_path(dir.join("blocks.csv"))?;
    w.write_record(["node", "block"])?;
    for (i, &b) in data.blocks.iter().enumerate() {
        w.write_record([node_label(i), block_label(b)])?;
    }
    w.flush()?;
    let train = data.log.len() * 4 / 5;
    let mut f = fs::File::create(dir.join("config.toml"))?;
    write!(
        f,
        "input = \"events.csv\"\n\
         block_map = \"blocks.csv\"\n\
         split = {{ by-count = {train} }}\n\
         cases = [\"edge-poisson\", \"hawkes-edge-totals\", \"hawkes-strength-mask\", \"hawkes-block-mask\", \"sender-hawkes\", \"partitioned\"]\n\
         seed = {seed}\n\
         out = \"out\"\n"
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dataset_shape() {
        let spec = SynthSpec { events: 800, ..Default::default() };
        let data = generate(&spec).unwrap();
        assert_eq!(data.log.len(), 800);
        assert_eq!(data.log.n_nodes(), 100);
        assert_eq!(data.log.horizon(), data.log.events().last().unwrap().t);
        assert!(data.log.events().iter().all(|e| e.src != e.dst));
        let again = generate(&spec).unwrap();
        assert_eq!(again.log, data.log);
    }
}
