use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::RateModel;
use crate::dde_core::PathGrid;
use crate::error::{invalid, Result};
use crate::optim::{lbfgs, LbfgsOptions};

/// Control `u` on the cells of a uniform grid and the state it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    /// Grid nodes `s_0 = 0 < … < s_N = t`.
    pub times: Vec<f64>,
    /// Control on cell `k`, `|u_k| ≤ 1`.
    pub u: Vec<f64>,
    /// State at the nodes.
    pub phi: Vec<f64>,
}

impl ControlPath {
    pub fn state_path(&self) -> PathGrid {
        PathGrid::from_parts(1, self.times.clone(), self.phi.clone()).expect("increasing grid")
    }

    /// `(s_k, u_k)` with the control reported at the left node of each cell.
    pub fn control_path(&self) -> PathGrid {
        let t = self.times[..self.u.len()].to_vec();
        PathGrid::from_parts(1, t, self.u.clone()).expect("increasing grid")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuasipotentialOptions {
    /// Reported as satisfied when `|φ(t) − b|` is below this.
    pub endpoint_tol: f64,
    pub initial_penalty: f64,
    pub penalty_rounds: usize,
    pub penalty_factor: f64,
    pub lbfgs: LbfgsOptions,
}

impl Default for QuasipotentialOptions {
    fn default() -> Self {
        Self {
            endpoint_tol: 1e-4,
            initial_penalty: 1e4,
            penalty_rounds: 3,
            penalty_factor: 10.0,
            lbfgs: LbfgsOptions { max_iterations: 4000, grad_tol: 1e-10, ..LbfgsOptions::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasipotentialResult {
    /// `V(t, a, b)`; `f64::INFINITY` when infeasible.
    pub value: f64,
    pub feasible: bool,
    pub control: ControlPath,
    pub endpoint_residual: f64,
    /// Endpoints of the full-control flows `φ̇ = drift ∓ |σ₀·coef|`.
    pub reach: (f64, f64),
    /// Index of the winning start.
    pub start: usize,
}

/// Explicit-midpoint transcription of `φ̇ = drift(φ) + σ₀ coef(φ) u`.
struct Transcription<'a> {
    model: &'a RateModel,
    g: f64,
    sigma0: f64,
    h: f64,
    a: f64,
    n: usize,
}

impl Transcription<'_> {
    fn velocity(&self, phi: f64, u: f64) -> f64 {
        self.model.drift.eval(phi) + self.sigma0 * self.model.coefficient.eval(phi) * u
    }

    fn velocity_dphi(&self, phi: f64, u: f64) -> f64 {
        self.model.drift.derivative(phi) + self.sigma0 * self.model.coefficient.derivative(phi) * u
    }

    fn step(&self, phi: f64, u: f64) -> (f64, f64) {
        let mid = phi + 0.5 * self.h * self.velocity(phi, u);
        (mid, phi + self.h * self.velocity(mid, u))
    }

    fn integrate(&self, u: &[f64]) -> Vec<f64> {
        let mut phi = Vec::with_capacity(u.len() + 1);
        phi.push(self.a);
        for &uk in u {
            let (_, next) = self.step(*phi.last().expect("non-empty"), uk);
            phi.push(next);
        }
        phi
    }

    /// Control that maximises (`dir = 1`) or minimises (`dir = −1`) the
    /// velocity on every cell.
    fn bang(&self, dir: f64) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.n);
        let mut phi = self.a;
        for _ in 0..self.n {
            let s = self.sigma0 * self.model.coefficient.eval(phi);
            let uk = if s == 0.0 { 0.0 } else { dir * s.signum() };
            phi = self.step(phi, uk).1;
            u.push(uk);
        }
        u
    }

    fn running_cost(&self, u: &[f64]) -> f64 {
        u.iter().map(|&v| 0.5 * self.g * (1.0 - (1.0 - (v * v).min(1.0)).sqrt()) * self.h).sum()
    }

    /// Penalised objective in `w` (`u = sin w`) and its adjoint gradient.
    fn objective(&self, w: &[f64], grad: &mut [f64], target: f64, mu: f64) -> f64 {
        let n = self.n;
        let h = self.h;
        let mut phi = vec![self.a; n + 1];
        let mut mid = vec![0.0; n];
        let mut cost = 0.0;
        for k in 0..n {
            let u = w[k].sin();
            let (m, next) = self.step(phi[k], u);
            mid[k] = m;
            phi[k + 1] = next;
            cost += 0.5 * self.g * (1.0 - w[k].cos()) * h;
        }
        let miss = phi[n] - target;
        let mut lam = 2.0 * mu * miss;
        for k in (0..n).rev() {
            let u = w[k].sin();
            let s_k = self.sigma0 * self.model.coefficient.eval(phi[k]);
            let s_m = self.sigma0 * self.model.coefficient.eval(mid[k]);
            let vphi_k = self.velocity_dphi(phi[k], u);
            let vphi_m = self.velocity_dphi(mid[k], u);
            let dnext_du = h * (s_m + vphi_m * 0.5 * h * s_k);
            let dnext_dphi = 1.0 + h * vphi_m * (1.0 + 0.5 * h * vphi_k);
            grad[k] = 0.5 * self.g * w[k].sin() * h + lam * dnext_du * w[k].cos();
            lam *= dnext_dphi;
        }
        cost + mu * miss * miss
    }
}

/// `V(t, a, b) = inf { S_{0t}(φ) : φ(0) = a, φ(t) = b }` for symmetric
/// two-state noise, by direct transcription of the optimal control problem
/// with running cost `(g/2)(1 − √(1 − u²))`.
pub fn quasipotential(model: &RateModel, t: f64, a: f64, b: f64, grid_size: usize) -> Result<QuasipotentialResult> {
    quasipotential_with(model, t, a, b, grid_size, QuasipotentialOptions::default())
}

pub fn quasipotential_with(
    model: &RateModel,
    t: f64,
    a: f64,
    b: f64,
    grid_size: usize,
    opts: QuasipotentialOptions,
) -> Result<QuasipotentialResult> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {t}")));
    }
    if grid_size < 16 {
        return Err(invalid(format!("grid size must be at least 16, got {grid_size}")));
    }
    let (g, sigma0) = model.two_state()?;
    let n = grid_size;
    let tr = Transcription { model, g, sigma0, h: t / n as f64, a, n };
    let times: Vec<f64> = (0..=n).map(|k| t * k as f64 / n as f64).collect();
    let finish = |u: Vec<f64>, start: usize, reach: (f64, f64)| {
        let phi = tr.integrate(&u);
        let endpoint_residual = (phi[n] - b).abs();
        let feasible = endpoint_residual <= opts.endpoint_tol;
        let value = if feasible { tr.running_cost(&u) } else { f64::INFINITY };
        QuasipotentialResult {
            value,
            feasible,
            control: ControlPath { times: times.clone(), u, phi },
            endpoint_residual,
            reach,
            start,
        }
    };

    let up = tr.bang(1.0);
    let down = tr.bang(-1.0);
    let hi = *tr.integrate(&up).last().expect("non-empty");
    let lo = *tr.integrate(&down).last().expect("non-empty");
    let reach = (lo, hi);
    let edge_tol = 1e-12 * (1.0 + b.abs());
    if b > hi + edge_tol {
        log::info!("target {b} above reachable maximum {hi}");
        return Ok(finish(up, usize::MAX, reach));
    }
    if b < lo - edge_tol {
        log::info!("target {b} below reachable minimum {lo}");
        return Ok(finish(down, usize::MAX, reach));
    }
    if b >= hi - edge_tol {
        return Ok(finish(up, usize::MAX, reach));
    }
    if b <= lo + edge_tol {
        return Ok(finish(down, usize::MAX, reach));
    }

    let ramp = |sign: f64| -> Vec<f64> { (0..n).map(|k| sign * 0.9 * (k as f64 + 0.5) / n as f64).collect() };
    let starts: Vec<Vec<f64>> = vec![vec![0.0; n], vec![0.5; n], vec![-0.5; n], ramp(1.0), ramp(-1.0)];
    let runs: Vec<(f64, Vec<f64>)> = starts
        .into_par_iter()
        .map(|u0| {
            let mut w: Vec<f64> = u0.iter().map(|u| u.asin()).collect();
            let mut mu = opts.initial_penalty;
            let mut value = f64::INFINITY;
            for _ in 0..opts.penalty_rounds {
                let m = lbfgs(|x, gr| tr.objective(x, gr, b, mu), w, opts.lbfgs);
                w = m.x;
                value = m.value;
                mu *= opts.penalty_factor;
            }
            (value, w.iter().map(|x| x.sin()).collect())
        })
        .collect();
    let (best, _) = runs
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |(bi, bv), (i, (v, _))| if *v < bv { (i, *v) } else { (bi, bv) });
    let u = runs[best].1.clone();
    Ok(finish(u, best, reach))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp_rate::{action, ScalarField};
    use crate::markov_noise::MarkovNoiseModel;

    fn free() -> RateModel {
        RateModel::two_state_free(2.0, 1.0).unwrap()
    }

    fn closed(g: f64, t: f64, d: f64, s: f64) -> f64 {
        0.5 * g * t * (1.0 - (1.0 - (d / (s * t)).powi(2)).sqrt())
    }

    #[test]
    fn free_case_matches_closed_form() {
        let r = quasipotential(&free(), 1.0, 0.0, 0.6, 64).unwrap();
        assert!(r.feasible);
        assert!((r.value - 0.2).abs() < 1e-5, "{}", r.value);
        assert!(r.control.u.iter().all(|u| (u - 0.6).abs() < 1e-3));
        let replay = action(&free(), &r.control.state_path()).unwrap();
        assert!((replay - r.value).abs() < 1e-5);
    }

    #[test]
    fn deterministic_endpoint_costs_nothing() {
        let m = RateModel::from_fields(
            ScalarField::Linear { slope: -0.5, intercept: 0.1 },
            ScalarField::Constant { value: 1.0 },
            MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap(),
        );
        let flow_end = {
            let tr = Transcription { model: &m, g: 2.0, sigma0: 1.0, h: 1.0 / 32.0, a: 0.3, n: 32 };
            *tr.integrate(&[0.0; 32]).last().unwrap()
        };
        let r = quasipotential(&m, 1.0, 0.3, flow_end, 32).unwrap();
        assert!(r.value < 1e-10 && r.control.u.iter().all(|u| u.abs() < 1e-6));
    }

    #[test]
    fn unreachable_target_is_reported() {
        let r = quasipotential(&free(), 1.0, 0.0, 1.2, 32).unwrap();
        assert!(!r.feasible && r.value.is_infinite());
        assert!((r.reach.1 - 1.0).abs() < 1e-12 && (r.reach.0 + 1.0).abs() < 1e-12);
        assert!((r.endpoint_residual - 0.2).abs() < 1e-12);
        let edge = quasipotential(&free(), 1.0, 0.0, 1.0, 32).unwrap();
        assert!(edge.feasible && (edge.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn value_decreases_with_time() {
        let m = free();
        let vals: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&t| quasipotential(&m, t, 0.0, 0.4, 64).unwrap().value).collect();
        for (v, t) in vals.iter().zip([0.5, 1.0, 2.0]) {
            assert!((v - closed(2.0, t, 0.4, 1.0)).abs() < 1e-5, "{v} at {t}");
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }

    #[test]
    fn state_dependent_gradient_matches_finite_differences() {
        let m = RateModel::from_fields(
            ScalarField::Tanh { amplitude: -0.4, gain: 1.3, offset: 0.0 },
            ScalarField::Linear { slope: 0.3, intercept: 1.0 },
            MarkovNoiseModel::two_state_symmetric(2.0, 0.8).unwrap(),
        );
        let n = 20;
        let tr = Transcription { model: &m, g: 2.0, sigma0: 0.8, h: 1.5 / n as f64, a: 0.1, n };
        let w: Vec<f64> = (0..n).map(|k| 0.3 * (k as f64).sin()).collect();
        let mut grad = vec![0.0; n];
        tr.objective(&w, &mut grad, 0.5, 10.0);
        let mut scratch = vec![0.0; n];
        for k in [0, 7, 19] {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += 1e-6;
            wm[k] -= 1e-6;
            let fd = (tr.objective(&wp, &mut scratch, 0.5, 10.0) - tr.objective(&wm, &mut scratch, 0.5, 10.0)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn free_case_is_symmetric() {
        let m = free();
        let ab = quasipotential(&m, 1.0, 0.1, 0.5, 32).unwrap().value;
        let ba = quasipotential(&m, 1.0, 0.5, 0.1, 32).unwrap().value;
        assert!((ab - ba).abs() < 1e-6);
    }
}
