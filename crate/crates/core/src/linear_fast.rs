//! Linear delay equation driven by fast switching:
//! `ẋ = L0(Π_t x) + σ(ξ_{t/ε})` with vector-valued `σ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dde_core::{fundamental_solution, semigroup_apply_with_step, DelayMeasure, History, PathGrid, Segment};
use crate::error::{invalid, Error, Result};
use crate::ldp_rate::{RateModel, ScalarFn};
use crate::markov_noise::{perron_root, perron_root_with_derivative, stationary_distribution, MarkovNoiseModel};
use crate::optim::{lbfgs, LbfgsOptions};

/// Markov chain with an `ℝⁿ`-valued, mean-zero output.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorNoiseModel {
    generator: DMatrix<f64>,
    /// `sigma[i]` is the output in state `i`.
    sigma: Vec<Vec<f64>>,
    stationary: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VectorNoiseFile {
    generator: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
}

impl Serialize for VectorNoiseModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let generator = self.generator.row_iter().map(|r| r.iter().copied().collect()).collect();
        VectorNoiseFile { generator, sigma: self.sigma.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for VectorNoiseModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = VectorNoiseFile::deserialize(d)?;
        let n = f.generator.len();
        if f.generator.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("generator must be square"));
        }
        let flat: Vec<f64> = f.generator.into_iter().flatten().collect();
        VectorNoiseModel::new(DMatrix::from_row_slice(n, n, &flat), f.sigma).map_err(serde::de::Error::custom)
    }
}

impl VectorNoiseModel {
    pub fn new(generator: DMatrix<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        if sigma.len() != generator.nrows() {
            return Err(Error::DimensionMismatch { expected: generator.nrows(), found: sigma.len() });
        }
        let dim = sigma.first().map_or(0, |s| s.len());
        if dim == 0 || sigma.iter().any(|s| s.len() != dim) {
            return Err(invalid("every state needs an output vector of the same nonzero length"));
        }
        if sigma.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("sigma values must be finite"));
        }
        let stationary = stationary_distribution(&generator)?;
        let scale = sigma.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
        for j in 0..dim {
            let mean: f64 = stationary.iter().zip(&sigma).map(|(p, s)| p * s[j]).sum();
            if mean.abs() > 1e-10 * scale {
                return Err(invalid(format!("component {j} of the noise is not mean zero: {mean:e}")));
            }
        }
        Ok(Self { generator, sigma, stationary })
    }

    /// Scalar two-state chain, `σ = ±σ₀`, switching rate `g/2`.
    pub fn two_state(g: f64, sigma0: f64) -> Result<Self> {
        Ok(Self::from(MarkovNoiseModel::two_state_symmetric(g, sigma0)?))
    }

    pub fn dim(&self) -> usize {
        self.sigma[0].len()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.sigma
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    fn tilt(&self, alpha: &[f64]) -> Vec<f64> {
        self.sigma.iter().map(|s| s.iter().zip(alpha).map(|(a, b)| a * b).sum()).collect()
    }

    /// `H(α)`: Perron root of `Q + diag(αᵀσᵢ)`.
    pub fn hamiltonian(&self, alpha: &[f64]) -> Result<f64> {
        self.check_dim(alpha.len())?;
        perron_root(&self.generator, &self.tilt(alpha))
    }

    pub fn hamiltonian_gradient(&self, alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_dim(alpha.len())?;
        let diag = self.tilt(alpha);
        let mut grad = Vec::with_capacity(self.dim());
        let mut value = 0.0;
        for j in 0..self.dim() {
            let dd: Vec<f64> = self.sigma.iter().map(|s| s[j]).collect();
            let (v, d) = perron_root_with_derivative(&self.generator, &diag, &dd)?;
            value = v;
            grad.push(d);
        }
        Ok((value, grad))
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: n });
        }
        Ok(())
    }

    /// Scalar chain with output `dᵀσᵢ`.
    fn projected(&self, d: &[f64]) -> Result<MarkovNoiseModel> {
        MarkovNoiseModel::new(self.generator.clone(), self.tilt(d))
    }

    /// `L(β) = sup_α [αᵀβ − H(α)]` for `n ≤ 2`.
    pub fn lagrangian(&self, beta: &[f64]) -> Result<f64> {
        self.check_dim(beta.len())?;
        match self.dim() {
            1 => {
                let m = RateModel::new(ScalarFn::constant(0.0), ScalarFn::constant(1.0), self.projected(&[1.0])?);
                m.lagrangian(0.0, beta[0])
            }
            2 => self.lagrangian_planar(beta),
            n => Err(invalid(format!("vector Lagrangian is implemented for n ≤ 2, got n = {n}"))),
        }
    }

    fn lagrangian_planar(&self, beta: &[f64]) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self.sigma.iter().map(|s| (s[0], s[1])).collect();
        let scale = pts.iter().fold(1.0f64, |m, p| m.max(p.0.abs()).max(p.1.abs()));
        let tol = 1e-12 * scale;
        let hull = convex_hull(&pts);
        let b = (beta[0], beta[1]);
        if hull.len() < 3 {
            // outputs on a line through the origin (mean zero): 1D problem
            let (p, q) = (hull[0], *hull.last().expect("non-empty"));
            let d = (q.0 - p.0, q.1 - p.1);
            let len = (d.0 * d.0 + d.1 * d.1).sqrt();
            if len <= tol {
                return Ok(if b.0.abs() <= tol && b.1.abs() <= tol { 0.0 } else { f64::INFINITY });
            }
            let u = [d.0 / len, d.1 / len];
            if (b.0 * u[1] - b.1 * u[0]).abs() > tol {
                return Ok(f64::INFINITY);
            }
            let m = RateModel::new(ScalarFn::constant(0.0), ScalarFn::constant(1.0), self.projected(&u)?);
            return m.lagrangian(0.0, b.0 * u[0] + b.1 * u[1]);
        }
        let mut inside = true;
        for k in 0..hull.len() {
            let (p, q) = (hull[k], hull[(k + 1) % hull.len()]);
            let cross = (q.0 - p.0) * (b.1 - p.1) - (q.1 - p.1) * (b.0 - p.0);
            if cross < -tol {
                return Ok(f64::INFINITY);
            }
            inside &= cross > tol;
        }
        let objective = |a: &[f64], g: &mut [f64]| -> f64 {
            match self.hamiltonian_gradient(a) {
                Ok((h, dh)) => {
                    g[0] = dh[0] - beta[0];
                    g[1] = dh[1] - beta[1];
                    h - a[0] * beta[0] - a[1] * beta[1]
                }
                Err(_) => f64::NAN,
            }
        };
        let opts = LbfgsOptions { max_iterations: if inside { 2000 } else { 200 }, grad_tol: 1e-12, ..LbfgsOptions::default() };
        let m = lbfgs(objective, vec![0.0, 0.0], opts);
        Ok((-m.value).max(0.0))
    }
}

impl From<MarkovNoiseModel> for VectorNoiseModel {
    fn from(m: MarkovNoiseModel) -> Self {
        Self {
            generator: m.generator().clone(),
            sigma: m.sigma().iter().map(|&s| vec![s]).collect(),
            stationary: m.stationary().to_vec(),
        }
    }
}

/// Counter-clockwise hull by the monotone chain.
fn convex_hull(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p: Vec<(f64, f64)> = pts.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        // collinear: return the two extreme points
        return vec![p[0], *p.last().expect("non-empty")];
    }
    lower
}

/// History of a path `v` on a uniform forward grid, continued by `η` for
/// negative times; `v` is linear between nodes.
struct GridHistory<'a> {
    eta: &'a Segment,
    h: f64,
    dim: usize,
    /// Known node values, row-major.
    values: &'a [f64],
    /// Absolute time at which the view is evaluated.
    t: f64,
}

impl GridHistory<'_> {
    fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

impl History for GridHistory<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: f64) -> DVector<f64> {
        let s = self.t + theta;
        let tol = 1e-9 * self.h;
        if s < -tol {
            return self.eta.value(s);
        }
        let known = self.values.len() / self.dim;
        let x = (s / self.h).max(0.0);
        let k = (x.floor() as usize).min(known - 1);
        let frac = x - k as f64;
        if k + 1 >= known || frac <= 1e-12 {
            return DVector::from_column_slice(self.node(k));
        }
        let (a, b) = (self.node(k), self.node(k + 1));
        DVector::from_iterator(self.dim, a.iter().zip(b).map(|(p, q)| p + frac * (q - p)))
    }
}

fn forward_step(path: &PathGrid) -> Result<f64> {
    if path.len() < 2 || path.times()[0].abs() > 1e-12 {
        return Err(invalid("path must start at t = 0 and have at least two nodes"));
    }
    path.uniform_step().ok_or_else(|| invalid("path must be on a uniform grid"))
}

fn check_inputs(measure: &DelayMeasure, eta: &Segment, path: &PathGrid) -> Result<f64> {
    measure.eval_l0(eta)?;
    if path.width() != measure.dim() {
        return Err(Error::DimensionMismatch { expected: measure.dim(), found: path.width() });
    }
    forward_step(path)
}

/// `v = 𝔅_η ψ`: `v(t) = η(0) + ∫_0^t L0(Π_s v) ds + ψ(t)`, trapezoid in
/// time with a fixed-point solve for the implicit end value.
pub fn b_eta_apply(measure: &DelayMeasure, eta: &Segment, psi: &PathGrid) -> Result<PathGrid> {
    let h = check_inputs(measure, eta, psi)?;
    let n = measure.dim();
    let eta0 = eta.head();
    let times = psi.times().to_vec();
    let mut v: Vec<f64> = Vec::with_capacity(times.len() * n);
    v.extend((0..n).map(|i| eta0[i] + psi.row(0)[i]));
    let view = |values: &[f64], t: f64| measure.apply(&GridHistory { eta, h, dim: n, values, t });
    let mut ell_prev = view(&v, 0.0);
    let mut integral = DVector::zeros(n);
    for k in 1..times.len() {
        let base = &integral + &ell_prev * (0.5 * h);
        let start = v.len();
        v.extend_from_slice(&v[start - n..start].to_vec());
        let mut ell = ell_prev.clone();
        for _ in 0..200 {
            let next: Vec<f64> = (0..n).map(|i| eta0[i] + base[i] + 0.5 * h * ell[i] + psi.row(k)[i]).collect();
            let change = next.iter().zip(&v[start..]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            v[start..].copy_from_slice(&next);
            ell = view(&v, times[k]);
            let size = next.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            if change <= 1e-15 * size {
                break;
            }
        }
        integral = base + &ell * (0.5 * h);
        ell_prev = ell;
    }
    PathGrid::from_parts(n, times, v)
}

/// `(𝔅_η⁻¹ v)(t) = v(t) − η(0) − ∫_0^t L0(Π_s v) ds` with the same
/// quadrature as [`b_eta_apply`].
pub fn b_eta_inverse(measure: &DelayMeasure, eta: &Segment, v: &PathGrid) -> Result<PathGrid> {
    let h = check_inputs(measure, eta, v)?;
    let n = measure.dim();
    let eta0 = eta.head();
    let times = v.times().to_vec();
    let all: Vec<f64> = (0..v.len()).flat_map(|k| v.row(k).to_vec()).collect();
    let mut out = Vec::with_capacity(all.len());
    let mut integral = DVector::zeros(n);
    let mut ell_prev: Option<DVector<f64>> = None;
    for k in 0..times.len() {
        let ell = measure.apply(&GridHistory { eta, h, dim: n, values: &all[..(k + 1) * n], t: times[k] });
        if let Some(prev) = &ell_prev {
            integral = &integral + prev * (0.5 * h) + &ell * (0.5 * h);
        }
        out.extend((0..n).map(|i| v.row(k)[i] - eta0[i] - integral[i]));
        ell_prev = Some(ell);
    }
    PathGrid::from_parts(n, times, out)
}

/// `S(φ) = ∫ L(φ̇ − L0(Π_s φ)) ds`, midpoint in each cell, for a path with
/// initial segment `η`.
pub fn action_linear(measure: &DelayMeasure, noise: &VectorNoiseModel, eta: &Segment, phi: &PathGrid) -> Result<f64> {
    let h = check_inputs(measure, eta, phi)?;
    let n = measure.dim();
    noise.check_dim(n)?;
    let all: Vec<f64> = (0..phi.len()).flat_map(|k| phi.row(k).to_vec()).collect();
    let two_state = if n == 1 {
        MarkovNoiseModel::new(noise.generator.clone(), noise.tilt(&[1.0]))?.two_state_parameters()
    } else {
        None
    };
    let mut total = 0.0;
    for k in 0..phi.len() - 1 {
        let mid = (k as f64 + 0.5) * h;
        let drift = measure.apply(&GridHistory { eta, h, dim: n, values: &all, t: mid });
        let beta: Vec<f64> = (0..n).map(|i| (phi.row(k + 1)[i] - phi.row(k)[i]) / h - drift[i]).collect();
        let l = match two_state {
            Some((g, s0)) => crate::ldp_rate::two_state_cost(g, s0, beta[0]),
            None => noise.lagrangian(&beta)?,
        };
        if l.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += l * h;
    }
    Ok(total)
}

/// Exit problem `V(t, η, b) = inf { S_{0t}(φ) : Π_0 φ = η, φ(t) = b }` for a
/// scalar equation with symmetric two-state noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearExitProblem {
    pub measure: DelayMeasure,
    pub g: f64,
    pub sigma0: f64,
    pub t: f64,
    pub eta: Segment,
    pub b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitControl {
    /// `V`; `f64::INFINITY` when infeasible.
    pub value: f64,
    pub rho: f64,
    pub feasible: bool,
    /// `b − (T(t)η)(0)`.
    pub gap: f64,
    /// `σ₀ ∫_0^t |f|`, the largest attainable `|gap|`.
    pub reach: f64,
    /// `u_s` on the grid `s_k = k·dt`.
    #[serde(skip)]
    pub control: PathGrid,
    /// `f(t − s_k)` on the same grid.
    #[serde(skip)]
    pub kernel: Vec<f64>,
    /// `|(T(t)η)(0) + ∫ f(t−s)σ₀u_s ds − b|`.
    pub endpoint_error: f64,
    /// `max_k |u/√(1−u²) + ρ f(t−s_k)|`.
    pub stationarity_residual: f64,
}

impl LinearExitProblem {
    pub fn validate(&self) -> Result<()> {
        if self.measure.dim() != 1 {
            return Err(invalid("the analytic exit solver needs a scalar equation"));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid("horizon t must be positive"));
        }
        if !(self.g > 0.0) || self.sigma0 == 0.0 || !self.sigma0.is_finite() || !self.b.is_finite() {
            return Err(invalid("need g > 0, σ₀ ≠ 0 and a finite target"));
        }
        self.measure.eval_l0(&self.eta)?;
        Ok(())
    }
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n + 1];
    w[0] *= 0.5;
    w[n] *= 0.5;
    w
}

/// Lagrange-multiplier solution `u_s = −ρf(t−s)/√(1+ρ²f²(t−s))`, with `ρ`
/// fixed by `∫ f(t−s) σ₀ u_s ds = b − (T(t)η)(0)`.
pub fn optimal_exit_analytic(problem: &LinearExitProblem, dt: f64) -> Result<ExitControl> {
    problem.validate()?;
    let steps = problem.t / dt;
    if !(dt > 0.0) || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
        return Err(invalid(format!("dt = {dt} must divide t = {}", problem.t)));
    }
    let n = steps.round() as usize;
    let m = &problem.measure;
    let fpath = fundamental_solution(m, problem.t, dt)?;
    let forward: Vec<f64> = (0..fpath.len()).filter(|&k| fpath.times()[k] >= -1e-12).map(|k| fpath.row(k)[0]).collect();
    if forward.len() != n + 1 {
        return Err(Error::Numerical(format!("fundamental solution has {} nodes, expected {}", forward.len(), n + 1)));
    }
    let kernel: Vec<f64> = (0..=n).map(|k| forward[n - k]).collect();
    let free = semigroup_apply_with_step(m, &problem.eta, problem.t, dt)?.head()[0];
    let gap = problem.b - free;
    let s0 = problem.sigma0;
    let w = trapezoid_weights(n, dt);
    let reach = s0.abs() * kernel.iter().zip(&w).map(|(f, w)| f.abs() * w).sum::<f64>();

    let control_at = |rho: f64| -> Vec<f64> { kernel.iter().map(|&f| -rho * f / (1.0 + (rho * f).powi(2)).sqrt()).collect() };
    let endpoint = |u: &[f64]| -> f64 { kernel.iter().zip(u).zip(&w).map(|((f, u), w)| f * s0 * u * w).sum() };
    let residual = |rho: f64| endpoint(&control_at(rho)) - gap;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();

    if gap.abs() >= reach {
        let sign = gap.signum() * s0.signum();
        let u: Vec<f64> = kernel.iter().map(|f| if *f == 0.0 { 0.0 } else { sign * f.signum() }).collect();
        return Ok(ExitControl {
            value: f64::INFINITY,
            rho: -sign * f64::INFINITY,
            feasible: false,
            gap,
            reach,
            endpoint_error: (endpoint(&u) - gap).abs(),
            control: PathGrid::from_parts(1, times, u)?,
            kernel,
            stationarity_residual: f64::NAN,
        });
    }

    let rho = if gap == 0.0 {
        0.0
    } else {
        // the constraint map is decreasing in ρ for σ₀ > 0
        let dir = -gap.signum() * s0.signum();
        let (mut lo, mut hi) = (0.0, dir);
        let mut r_lo = residual(lo);
        let mut r_hi = residual(hi);
        while r_lo.signum() == r_hi.signum() {
            lo = hi;
            r_lo = r_hi;
            hi *= 2.0;
            if hi.abs() > 1e300 {
                return Err(Error::Numerical("could not bracket the Lagrange multiplier".into()));
            }
            r_hi = residual(hi);
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let r_mid = residual(mid);
            let between = (r_mid - r_lo) * (r_hi - r_mid) >= 0.0;
            if !between {
                return Err(Error::Numerical("constraint map is not monotone across the bracket".into()));
            }
            if r_mid.signum() == r_lo.signum() {
                lo = mid;
                r_lo = r_mid;
            } else {
                hi = mid;
                r_hi = r_mid;
            }
        }
        if r_lo.abs() < r_hi.abs() { lo } else { hi }
    };
    let u = control_at(rho);
    let value: f64 = kernel
        .iter()
        .zip(&w)
        .map(|(f, w)| 0.5 * problem.g * (1.0 - 1.0 / (1.0 + (rho * f).powi(2)).sqrt()) * w)
        .sum();
    let stationarity_residual = u
        .iter()
        .zip(&kernel)
        .map(|(u, f)| (u / (1.0 - u * u).sqrt() + rho * f).abs())
        .fold(0.0, f64::max);
    Ok(ExitControl {
        value,
        rho,
        feasible: true,
        gap,
        reach,
        endpoint_error: (endpoint(&u) - gap).abs(),
        control: PathGrid::from_parts(1, times, u)?,
        kernel,
        stationarity_residual,
    })
}
