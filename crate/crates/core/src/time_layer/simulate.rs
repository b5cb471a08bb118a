//! Exact simulation on `[0, T]` and simulated inter-event moments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{Kernel, Result, TimeModel, TimeParams};
use crate::event_store::gap_stats;

fn exp_draw<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the log is finite.
    -(1.0 - rng.random::<f64>()).ln() / rate
}

impl TimeModel {
    /// Draws one realisation on `[0, T]`, started with an empty history.
    ///
    /// Poisson and NHPP use exponential gaps per constant-rate segment. The
    /// exponential-kernel Hawkes process uses thinning with a piecewise
    /// constant bound equal to the intensity right after the last event or
    /// rejection (the kernel is decreasing). The power-law Hawkes process is
    /// drawn from its cluster representation: Poisson(μ) immigrants, each
    /// event spawning Poisson(η) children at Pareto-distributed lags.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let window = self.window;
        match self.params() {
            TimeParams::Poisson { rate } => poisson_segment(rng, *rate, 0.0, window),
            TimeParams::Nhpp { edges, rates } => {
                let mut out = Vec::new();
                for (b, &r) in rates.iter().enumerate() {
                    let lo = edges[b];
                    if lo >= window {
                        break;
                    }
                    let hi = if b + 1 == rates.len() { window } else { edges[b + 1].min(window) };
                    out.extend(poisson_segment(rng, r, lo, hi));
                }
                out
            }
            &TimeParams::HawkesExp { mu, eta, beta } => thinning_exp(rng, mu, eta, beta, window),
            &TimeParams::HawkesPl { mu, eta, c, gamma } => {
                cluster_power_law(rng, mu, eta, Kernel::PowerLaw { c, gamma }, window)
            }
        }
    }

    pub fn simulate_seeded(&self, seed: u64) -> Vec<f64> {
        self.simulate(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

fn poisson_segment<R: Rng + ?Sized>(rng: &mut R, rate: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let mut t = lo;
    loop {
        t += exp_draw(rng, rate);
        if t > hi {
            return out;
        }
        out.push(t);
    }
}

fn thinning_exp<R: Rng + ?Sized>(rng: &mut R, mu: f64, eta: f64, beta: f64, window: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    // Excitation part of the intensity at the current time.
    let mut excitation = 0.0;
    loop {
        let bound = mu + excitation;
        if bound <= 0.0 {
            return out;
        }
        let wait = exp_draw(rng, bound);
        t += wait;
        if t > window {
            return out;
        }
        excitation *= (-beta * wait).exp();
        if rng.random::<f64>() * bound <= mu + excitation {
            out.push(t);
            excitation += eta * beta;
        }
    }
}

fn cluster_power_law<R: Rng + ?Sized>(rng: &mut R, mu: f64, eta: f64, kernel: Kernel, window: f64) -> Vec<f64> {
    let Kernel::PowerLaw { c, gamma } = kernel else { unreachable!() };
    let mut out = poisson_segment(rng, mu, 0.0, window);
    let offspring = (eta > 0.0).then(|| Poisson::new(eta).expect("eta > 0"));
    let mut frontier = 0;
    while frontier < out.len() {
        let parent = out[frontier];
        frontier += 1;
        let Some(dist) = &offspring else { continue };
        let children = dist.sample(rng) as usize;
        for _ in 0..children {
            // Inverse of the survival function (1 + u/c)^{1-γ}.
            let u = 1.0 - rng.random::<f64>();
            let lag = c * (u.powf(-1.0 / (gamma - 1.0)) - 1.0);
            let t = parent + lag;
            if t <= window {
                out.push(t);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMethod {
    Analytic,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapMoments {
    pub mean: f64,
    pub variance: f64,
    pub mean_method: MomentMethod,
    pub variance_method: MomentMethod,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MomentOptions {
    /// Approximate number of simulated events for the variance.
    pub events: usize,
    pub seed: u64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self { events: 1_000_000, seed: 0 }
    }
}

/// Inter-event gap mean and variance implied by a model. The mean is
/// `1 / λ̄` analytically. The variance is analytic (`1 / λ²`) for the
/// homogeneous Poisson process and otherwise estimated from one long seeded
/// simulation of about `opts.events` events.
pub fn implied_gap_moments(model: &TimeModel, opts: &MomentOptions) -> Result<GapMoments> {
    let rate = model.stationary_rate();
    let mean = 1.0 / rate;
    if let TimeParams::Poisson { .. } = model.params() {
        return Ok(GapMoments {
            mean,
            variance: mean * mean,
            mean_method: MomentMethod::Analytic,
            variance_method: MomentMethod::Analytic,
        });
    }
    let long = match model.params() {
        // Tile the piecewise profile so its shape is sampled repeatedly.
        TimeParams::Nhpp { .. } => {
            let per_window = model.expected_count().max(1.0);
            let reps = (opts.events as f64 / per_window).ceil().max(1.0) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut times = Vec::new();
            for r in 0..reps {
                let offset = r as f64 * model.window();
                times.extend(model.simulate(&mut rng).into_iter().map(|t| t + offset));
            }
            times
        }
        _ => model.with_window(opts.events as f64 / rate)?.simulate_seeded(opts.seed),
    };
    let variance = gap_stats(&long).map(|g| g.variance).unwrap_or(f64::NAN);
    Ok(GapMoments { mean, variance, mean_method: MomentMethod::Analytic, variance_method: MomentMethod::Simulated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time_layer::ks_exponential;

    #[test]
    fn poisson_count_concentrates() {
        let m = TimeModel::poisson(10.0, 1000.0).unwrap();
        let n = m.simulate_seeded(4).len() as f64;
        assert!((n - 10_000.0).abs() <= 3.0 * 10_000f64.sqrt(), "{n}");
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let m = TimeModel::hawkes_exp(0.5, 0.5, 1.0, 200.0).unwrap();
        assert_eq!(m.simulate_seeded(1), m.simulate_seeded(1));
        assert_ne!(m.simulate_seeded(1), m.simulate_seeded(2));
    }

    #[test]
    fn output_is_sorted_and_inside_window() {
        let models = [
            TimeModel::hawkes_exp(1.0, 0.7, 3.0, 50.0).unwrap(),
            TimeModel::hawkes_pl(1.0, 0.7, 0.2, 1.8, 50.0).unwrap(),
            TimeModel::nhpp(vec![0.0, 10.0, 30.0, 50.0], vec![1.0, 0.0, 4.0], 50.0).unwrap(),
        ];
        for m in models {
            let t = m.simulate_seeded(8);
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
            assert!(t.iter().all(|&x| (0.0..=50.0).contains(&x)));
        }
    }

    #[test]
    fn nhpp_zero_rate_bin_is_empty() {
        let m = TimeModel::nhpp(vec![0.0, 10.0, 30.0, 50.0], vec![1.0, 0.0, 4.0], 50.0).unwrap();
        let t = m.simulate_seeded(2);
        assert!(t.iter().all(|&x| !(10.0..30.0).contains(&x)));
    }

    #[test]
    fn hawkes_stationary_rate() {
        let m = TimeModel::hawkes_exp(0.5, 0.5, 1.0, 100_000.0).unwrap();
        let n = m.simulate_seeded(10).len() as f64;
        let rate = n / 100_000.0;
        assert!((rate - 1.0).abs() < 0.05, "{rate}");
        let p = TimeModel::hawkes_pl(0.5, 0.5, 1.0, 2.5, 100_000.0).unwrap();
        let rate = p.simulate_seeded(10).len() as f64 / 100_000.0;
        assert!((rate - 1.0).abs() < 0.05, "{rate}");
    }

    #[test]
    fn zero_branching_simulation_looks_poisson() {
        for m in [
            TimeModel::hawkes_exp(2.0, 0.0, 1.0, 500.0).unwrap(),
            TimeModel::hawkes_pl(2.0, 0.0, 1.0, 2.0, 500.0).unwrap(),
        ] {
            let t = m.simulate_seeded(5);
            let gaps: Vec<f64> = t.windows(2).map(|w| 2.0 * (w[1] - w[0])).collect();
            assert!(ks_exponential(&gaps).p_value > 0.01);
        }
    }

    #[test]
    fn implied_moments() {
        let p = TimeModel::poisson(4.0, 1.0).unwrap();
        let g = implied_gap_moments(&p, &MomentOptions::default()).unwrap();
        assert_eq!((g.mean, g.variance), (0.25, 0.0625));
        assert_eq!(g.variance_method, MomentMethod::Analytic);

        let h = TimeModel::hawkes_exp(0.5, 0.5, 1.0, 10.0).unwrap();
        let opts = MomentOptions { events: 200_000, seed: 3 };
        let g = implied_gap_moments(&h, &opts).unwrap();
        assert_eq!(g.mean, 1.0);
        assert_eq!(g.variance_method, MomentMethod::Simulated);
        assert!(g.variance > 1.0, "over-dispersion: {}", g.variance);
    }
}
