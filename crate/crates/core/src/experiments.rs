//! Monte Carlo exit probabilities of the reduced process compared with the
//! quasipotential.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ldp_rate::quasipotential;
use crate::markov_noise::path_rng;
use crate::stochastic_sim::{integrate_reduced, simulate_full_with_noise, simulate_reduced_with_noise, SdeRunConfig};

/// Normal quantile of the two-sided 95% interval.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitExperiment {
    /// Model and integration settings; `epsilon`, `horizon` and `seed` are
    /// overridden by the experiment.
    pub run: SdeRunConfig,
    pub a_lo: f64,
    pub a_hi: f64,
    /// Slow-time horizon `T`.
    pub horizon: f64,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Full-system trajectories per `ε` for the exit-agreement check.
    #[serde(default)]
    pub full_samples: usize,
    /// Exit times `τ_k = kT/m` searched for `V*`.
    #[serde(default = "default_tau_points")]
    pub tau_points: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
}

fn default_tau_points() -> usize {
    10
}

fn default_grid_size() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullCheck {
    pub samples: usize,
    /// Trajectories on which `z` and `𝔷` disagree about exiting.
    pub disagreements: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    pub samples: usize,
    pub exits: usize,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `−ε ln p̂`; `None` without exits.
    pub eps_ln_p: Option<f64>,
    pub full: Option<FullCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub estimates: Vec<EpsilonEstimate>,
    /// Minimal action to reach either boundary by time `T`; `None` when
    /// neither is reachable.
    pub v_star: Option<f64>,
    /// Intercept at `ε = 0` of a least-squares line through `(ε, −ε ln p̂)`.
    pub intercept: Option<f64>,
    pub slope: Option<f64>,
}

impl RateFit {
    /// `−ε ln p̂` is non-increasing as `ε` decreases.
    pub fn is_monotone(&self) -> bool {
        let mut pts: Vec<(f64, f64)> = self.estimates.iter().filter_map(|e| e.eps_ln_p.map(|v| (e.epsilon, v))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

impl ExitExperiment {
    pub fn validate(&self) -> Result<()> {
        self.config_for(self.epsilons.first().copied().unwrap_or(0.1))?.validate()?;
        let z0 = self.run.initial_coordinate()?;
        if !(self.a_lo < z0 && z0 < self.a_hi) {
            return Err(invalid(format!("z0 = {z0} must lie inside ({}, {})", self.a_lo, self.a_hi)));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return Err(invalid("epsilons must be a non-empty list in (0, 1]"));
        }
        if self.samples < 1000 {
            return Err(invalid(format!("need at least 1000 samples per epsilon, got {}", self.samples)));
        }
        if self.tau_points == 0 {
            return Err(invalid("tau_points must be positive"));
        }
        Ok(())
    }

    fn config_for(&self, eps: f64) -> Result<SdeRunConfig> {
        let mut cfg = self.run.clone();
        cfg.epsilon = eps;
        cfg.horizon = self.horizon;
        cfg.seed = self.seed;
        // start on the centre direction: y₀ = 0
        let z0 = self.run.initial_coordinate()?;
        cfg.init = cfg.spectral.phi_segment(cfg.measure.max_delay(), cfg.init.grid_step(), z0)?;
        Ok(cfg)
    }

    /// `V* = min_τ min(V(τ, z₀, a_lo), V(τ, z₀, a_hi))`.
    pub fn theory_value(&self) -> Result<Option<f64>> {
        let model = self.run.reduced_model();
        let z0 = self.run.initial_coordinate()?;
        let taus: Vec<f64> = (1..=self.tau_points).map(|k| self.horizon * k as f64 / self.tau_points as f64).collect();
        let values: Vec<f64> = taus
            .par_iter()
            .flat_map_iter(|&tau| [self.a_lo, self.a_hi].map(move |b| (tau, b)))
            .map(|(tau, b)| quasipotential(&model, tau, z0, b, self.grid_size).map(|r| r.value))
            .collect::<Result<_>>()?;
        let best = values.into_iter().fold(f64::INFINITY, f64::min);
        Ok(best.is_finite().then_some(best))
    }
}

fn path_index(eps_index: usize, i: usize) -> u64 {
    ((eps_index as u64) << 40) | i as u64
}

fn estimate(exp: &ExitExperiment, k: usize, eps: f64) -> Result<EpsilonEstimate> {
    let cfg = exp.config_for(eps)?;
    let model = cfg.reduced_model();
    let z0 = cfg.initial_coordinate()?;
    let fast = cfg.fast_horizon();
    let (lo, hi) = (exp.a_lo, exp.a_hi);
    let exits: usize = (0..exp.samples)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let mut rng = path_rng(exp.seed, path_index(k, i));
            let noise = cfg.noise.sample_path_with(fast, &mut rng)?;
            let mut exited = false;
            integrate_reduced(&model, eps, z0, &noise, cfg.dt, fast, |_, z| {
                exited = z <= lo || z >= hi;
                !exited
            })?;
            Ok(exited as usize)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let n = exp.samples;
    let p_hat = exits as f64 / n as f64;
    let (ci_lo, ci_hi) = wilson_interval(exits, n, Z95);
    let eps_ln_p = (exits > 0).then(|| -eps * p_hat.ln());
    let full = if exp.full_samples > 0 { Some(full_check(exp, &cfg, k)?) } else { None };
    Ok(EpsilonEstimate { epsilon: eps, samples: n, exits, p_hat, ci_lo, ci_hi, eps_ln_p, full })
}

/// Exit indicators of the projected full solution and of the reduced
/// process, both read at the output times under shared noise.
fn full_check(exp: &ExitExperiment, cfg: &SdeRunConfig, k: usize) -> Result<FullCheck> {
    let outside = |p: &crate::dde_core::PathGrid| p.column(0).iter().any(|&z| z <= exp.a_lo || z >= exp.a_hi);
    let disagreements: usize = (0..exp.full_samples)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let mut rng = path_rng(exp.seed, path_index(k, i));
            let noise = cfg.noise.sample_path_with(cfg.fast_horizon(), &mut rng)?;
            let full = simulate_full_with_noise(cfg, &noise)?;
            let reduced = simulate_reduced_with_noise(cfg, &noise)?;
            Ok((outside(&full.z) != outside(&reduced)) as usize)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(FullCheck {
        samples: exp.full_samples,
        disagreements,
        fraction: disagreements as f64 / exp.full_samples as f64,
    })
}

fn linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    Some((my - slope * mx, slope))
}

/// Estimates `P(𝔷 leaves (a_lo, a_hi) before T)` for every `ε`. Path `i` at
/// the `k`-th `ε` uses its own counter-based random stream, so the result
/// does not depend on the thread count.
pub fn run_exit_experiment(exp: &ExitExperiment) -> Result<RateFit> {
    exp.validate()?;
    let estimates: Vec<EpsilonEstimate> =
        exp.epsilons.iter().enumerate().map(|(k, &eps)| estimate(exp, k, eps)).collect::<Result<_>>()?;
    let v_star = exp.theory_value()?;
    let pts: Vec<(f64, f64)> = estimates.iter().filter_map(|e| e.eps_ln_p.map(|v| (e.epsilon, v))).collect();
    let fit = linear_fit(&pts);
    for e in &estimates {
        log::info!("eps = {}: {} exits of {}, -eps ln p = {:?}", e.epsilon, e.exits, e.samples, e.eps_ln_p);
    }
    Ok(RateFit { estimates, v_star, intercept: fit.map(|f| f.0), slope: fit.map(|f| f.1) })
}

/// One JSON object per `ε`, each carrying `v_star`.
pub fn write_jsonl<W: std::io::Write>(fit: &RateFit, mut w: W) -> Result<()> {
    for e in &fit.estimates {
        let mut v = serde_json::to_value(e)?;
        v["v_star"] = serde_json::to_value(fit.v_star)?;
        serde_json::to_writer(&mut w, &v)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Columns `epsilon,p_hat,ci_lo,ci_hi,eps_ln_p,v_star`; `inf` marks a
/// missing exit count or unreachable boundary.
pub fn write_summary_csv<W: std::io::Write>(fit: &RateFit, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epsilon", "p_hat", "ci_lo", "ci_hi", "eps_ln_p", "v_star"])?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "inf".to_string(), |x| x.to_string());
    for e in &fit.estimates {
        out.write_record([
            e.epsilon.to_string(),
            e.p_hat.to_string(),
            e.ci_lo.to_string(),
            e.ci_hi.to_string(),
            fmt(e.eps_ln_p),
            fmt(fit.v_star),
        ])?;
    }
    out.flush()?;
    Ok(())
}
