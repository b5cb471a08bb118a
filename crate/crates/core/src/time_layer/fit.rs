//! Maximum-likelihood fitting.
//!
//! Poisson and piecewise NHPP have closed-form MLEs. For Hawkes kernels the
//! background rate `μ` and branching ratio `η` enter the intensity linearly,
//! so for a fixed kernel shape the likelihood is concave in `(μ, η)` and is
//! maximised by a projected Newton iteration. The kernel shape (`β`, or
//! `(c, γ)`) is searched by Nelder–Mead in log coordinates around that inner
//! solve, from a data-driven start plus seeded random restarts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{Kernel, Result, TimeError, TimeModel, TimeParams};
use crate::optim::nelder_mead;

/// Upper bound on the fitted branching ratio.
const ETA_MAX: f64 = 1.0 - 1e-9;
const GAMMA_MAX: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeKind {
    Poisson,
    Nhpp,
    HawkesExp,
    HawkesPl,
}

impl TimeKind {
    pub fn name(self) -> &'static str {
        match self {
            TimeKind::Poisson => "poisson",
            TimeKind::Nhpp => "nhpp",
            TimeKind::HawkesExp => "hawkes-exp",
            TimeKind::HawkesPl => "hawkes-pl",
        }
    }
}

impl std::str::FromStr for TimeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "poisson" => Ok(TimeKind::Poisson),
            "nhpp" => Ok(TimeKind::Nhpp),
            "hawkes-exp" => Ok(TimeKind::HawkesExp),
            "hawkes-pl" => Ok(TimeKind::HawkesPl),
            other => Err(format!("unknown time model kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Equal-width bins for the piecewise NHPP.
    pub bins: usize,
    /// Iteration cap per Nelder–Mead run.
    pub max_iter: usize,
    /// Simplex size (log coordinates) below which a run has converged.
    pub xtol: f64,
    /// Random restarts besides the data-driven start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { bins: 50, max_iter: 500, xtol: 1e-8, restarts: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: TimeModel,
    /// Log-likelihood of `model` on the fitted data, evaluated exactly.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits a model of the given kind to sorted `times` on `[0, window]`.
pub fn fit(kind: TimeKind, times: &[f64], window: f64, opts: &FitOptions) -> Result<FitResult> {
    let probe = TimeModel::poisson(1.0, window)?;
    probe.check_times(times)?;
    let needed = match kind {
        TimeKind::Poisson | TimeKind::Nhpp => 1,
        TimeKind::HawkesExp | TimeKind::HawkesPl => 2,
    };
    if times.len() < needed {
        return Err(TimeError::TooFewEvents { needed, got: times.len() });
    }

    let (model, iterations, converged) = match kind {
        TimeKind::Poisson => (TimeModel::poisson(times.len() as f64 / window, window)?, 0, true),
        TimeKind::Nhpp => (fit_nhpp(times, window, opts.bins.max(1))?, 0, true),
        TimeKind::HawkesExp | TimeKind::HawkesPl => fit_hawkes(kind, times, window, opts)?,
    };
    let loglik = model.log_likelihood(times)?;
    Ok(FitResult { model, loglik, iterations, converged })
}

fn fit_nhpp(times: &[f64], window: f64, bins: usize) -> Result<TimeModel> {
    let width = window / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { window } else { b as f64 * width }).collect();
    let mut counts = vec![0usize; bins];
    for &t in times {
        counts[TimeModel::nhpp_bin(&edges, t)] += 1;
    }
    let rates = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| c as f64 / (edges[b + 1] - edges[b]))
        .collect();
    TimeModel::nhpp(edges, rates, window)
}

/// Per-event kernel sums and the total kernel mass inside the window for a
/// fixed shape: `a_k = Σ_{j<k} k(t_k - t_j)`, `b = Σ_k K(T - t_k)`.
struct ShapeSums {
    a: Vec<f64>,
    b: f64,
}

fn shape_sums(kernel: Kernel, times: &[f64], window: f64) -> ShapeSums {
    let a = match kernel {
        Kernel::Exp { beta } => {
            let mut decayed = 0.0;
            let mut a = Vec::with_capacity(times.len());
            for (k, &t) in times.iter().enumerate() {
                if k > 0 {
                    decayed = (-beta * (t - times[k - 1])).exp() * (decayed + 1.0);
                }
                a.push(beta * decayed);
            }
            a
        }
        Kernel::PowerLaw { c, gamma } => {
            let norm = (gamma - 1.0) * c.powf(gamma - 1.0);
            power_law_sums(times, c, gamma).into_iter().map(|s| norm * s).collect()
        }
    };
    let b = times.iter().map(|&s| kernel.cdf(window - s)).sum();
    ShapeSums { a, b }
}

/// `S_k = Σ_{j<k} (t_k - t_j + c)^{-γ}` in `O(M K)` using
/// `x^{-γ} = Γ(γ)^{-1} ∫ exp(γu - x e^u) du`, discretised by the trapezoid
/// rule in `u`. Each node contributes an exponential kernel, so its sum
/// over the history follows the usual recursion. Relative error is below
/// `1e-9` for `x` between `c` and `c + (t_K - t_1)`.
pub(crate) fn power_law_sums(times: &[f64], c: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; times.len()];
    if times.len() < 2 {
        return out;
    }
    let span = times[times.len() - 1] - times[0];
    let (x_min, x_max) = (c, c + span);
    let ln_g = ln_gamma(gamma);
    // Upper tail of the Gamma(γ) integrand is negligible beyond y_hi, lower
    // tail below y_lo (both relative to the integral).
    let y_hi = 50.0 + 2.0 * gamma;
    let ln_y_lo = ((1e-15f64).ln() + gamma.ln() + ln_g) / gamma;
    let u_lo = ln_y_lo - x_max.ln();
    let u_hi = y_hi.ln() - x_min.ln();
    // The integrand in u has width about 1/sqrt(γ).
    let h = 0.3f64.min(0.8 / gamma.sqrt());
    let nodes = ((u_hi - u_lo) / h).ceil() as usize + 1;
    for m in 0..nodes {
        let u = u_lo + m as f64 * h;
        let s = u.exp();
        let coef = (h.ln() + gamma * u - c * s - ln_g).exp();
        if coef == 0.0 {
            continue;
        }
        let mut decayed = 0.0;
        for k in 1..times.len() {
            decayed = (-s * (times[k] - times[k - 1])).exp() * (decayed + 1.0);
            out[k] += coef * decayed;
        }
    }
    out
}

/// Maximises `Σ log(μ + η a_k) - μ T - η b` over `μ > 0`, `0 <= η <= ETA_MAX`.
fn solve_linear_part(sums: &ShapeSums, window: f64) -> (f64, f64, f64) {
    let k = sums.a.len() as f64;
    let objective = |mu: f64, eta: f64| -> f64 {
        let mut acc = -mu * window - eta * sums.b;
        for &a in &sums.a {
            let l = mu + eta * a;
            if l <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += l.ln();
        }
        acc
    };
    let excitation: f64 = sums.a.iter().map(|a| a * a).sum();
    let (mut mu, mut eta) = (0.5 * k / window, if excitation > 0.0 { 0.5 } else { 0.0 });
    let mut value = objective(mu, eta);
    for _ in 0..200 {
        let (mut g_mu, mut g_eta, mut h11, mut h12, mut h22) = (-window, -sums.b, 0.0, 0.0, 0.0);
        for &a in &sums.a {
            let inv = 1.0 / (mu + eta * a);
            g_mu += inv;
            g_eta += a * inv;
            h11 -= inv * inv;
            h12 -= a * inv * inv;
            h22 -= a * a * inv * inv;
        }
        let pinned = excitation == 0.0 || (eta <= 0.0 && g_eta <= 0.0) || (eta >= ETA_MAX && g_eta >= 0.0);
        let det = h11 * h22 - h12 * h12;
        let (d_mu, d_eta) = if pinned || det.abs() < 1e-300 {
            (-g_mu / h11, 0.0)
        } else {
            ((-h22 * g_mu + h12 * g_eta) / det, (h12 * g_mu - h11 * g_eta) / det)
        };

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand_mu = mu + step * d_mu;
            let cand_eta = (eta + step * d_eta).clamp(0.0, ETA_MAX);
            if cand_mu > 0.0 {
                let v = objective(cand_mu, cand_eta);
                if v >= value {
                    let moved = (cand_mu - mu).abs() / mu + (cand_eta - eta).abs();
                    mu = cand_mu;
                    eta = cand_eta;
                    value = v;
                    accepted = moved > 1e-15;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (mu, eta, value)
}

fn fit_hawkes(kind: TimeKind, times: &[f64], window: f64, opts: &FitOptions) -> Result<(TimeModel, usize, bool)> {
    let k = times.len();
    let mean_gap = ((times[k - 1] - times[0]) / (k - 1) as f64).max(window / k as f64);
    let kernel_of = |z: &[f64]| -> Kernel {
        match kind {
            TimeKind::HawkesExp => Kernel::Exp { beta: z[0].exp() },
            _ => Kernel::PowerLaw { c: z[0].exp(), gamma: 1.0 + z[1].exp().min(GAMMA_MAX - 1.0) },
        }
    };
    let profile = |z: &[f64]| -> f64 {
        if z.iter().any(|v| !v.is_finite() || v.abs() > 50.0) {
            return f64::INFINITY;
        }
        let sums = shape_sums(kernel_of(z), times, window);
        -solve_linear_part(&sums, window).2
    };

    let start: Vec<f64> = match kind {
        TimeKind::HawkesExp => vec![(1.0 / mean_gap).ln()],
        _ => vec![mean_gap.ln(), 0.0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![start.clone()];
    for _ in 0..opts.restarts {
        starts.push(
            start
                .iter()
                .map(|s| {
                    let jitter: f64 = StandardNormal.sample(&mut rng);
                    s + jitter
                })
                .collect(),
        );
    }

    let mut iterations = 0;
    let mut best: Option<crate::optim::Minimum> = None;
    for s in &starts {
        let run = nelder_mead(profile, s, 0.5, opts.xtol, opts.max_iter);
        iterations += run.iterations;
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }
    let best = best.unwrap();
    if !best.value.is_finite() {
        return Err(TimeError::NonFinite);
    }
    // Restart from the best vertex to guard against a collapsed simplex.
    let polish = nelder_mead(profile, &best.x, 0.05, opts.xtol, opts.max_iter);
    iterations += polish.iterations;
    let (z, converged) = if polish.value <= best.value { (polish.x, polish.converged) } else { (best.x, polish.converged) };

    let kernel = kernel_of(&z);
    let sums = shape_sums(kernel, times, window);
    let (mu, eta, _) = solve_linear_part(&sums, window);
    let params = match kernel {
        Kernel::Exp { beta } => TimeParams::HawkesExp { mu, eta, beta },
        Kernel::PowerLaw { c, gamma } => TimeParams::HawkesPl { mu, eta, c, gamma },
    };
    Ok((TimeModel::new(params, window)?, iterations, converged))
}
