//! Fixed-step method of steps for `x'(t) = L0(Π_t x) + w(t, Π_t x)`.
//!
//! Every step is a classical RK4 step. Delayed values are read from the
//! stored trajectory through a piecewise cubic Hermite interpolant built from
//! the nodal values and the one-sided derivatives at both ends of each step,
//! so derivative jumps located at nodes (the jump of the fundamental
//! solution at 0, noise switching times) do not degrade the local order.
//! Steps are split exactly at caller-provided breakpoints.

use nalgebra::{DMatrix, DVector};

use super::measure::{grid_intervals, DelayMeasure};
use super::path::PathGrid;
use super::segment::{History, Segment};
use crate::error::{invalid, Error, Result};

/// Which one-sided limit to use when a lookup lands exactly on a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Position of a right-hand-side evaluation inside the current step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub t: f64,
    pub step_start: f64,
    pub step_end: f64,
}

impl StepContext {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.step_start + self.step_end)
    }
}

/// Additive term `w` on the right-hand side.
pub trait Forcing: Sync {
    fn eval(&self, ctx: &StepContext, history: &dyn History) -> DVector<f64>;
}

impl<F> Forcing for F
where
    F: Fn(&StepContext, &dyn History) -> DVector<f64> + Sync,
{
    fn eval(&self, ctx: &StepContext, history: &dyn History) -> DVector<f64> {
        self(ctx, history)
    }
}

#[derive(Debug, Clone)]
pub enum InitialHistory {
    Segment(Segment),
    /// `v·1_{0}`: zero on `[-r, 0)` and `v` at `0`.
    Jump { value: DVector<f64>, max_delay: f64 },
}

impl InitialHistory {
    fn dim(&self) -> usize {
        match self {
            InitialHistory::Segment(s) => s.dim(),
            InitialHistory::Jump { value, .. } => value.len(),
        }
    }

    fn max_delay(&self) -> f64 {
        match self {
            InitialHistory::Segment(s) => s.max_delay(),
            InitialHistory::Jump { max_delay, .. } => *max_delay,
        }
    }

    fn head(&self) -> DVector<f64> {
        match self {
            InitialHistory::Segment(s) => s.head(),
            InitialHistory::Jump { value, .. } => value.clone(),
        }
    }

    fn value(&self, theta: f64) -> DVector<f64> {
        match self {
            InitialHistory::Segment(s) => s.value(theta),
            InitialHistory::Jump { value, .. } => DVector::zeros(value.len()),
        }
    }
}

/// Solution on `[-r, T]` with dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    initial: InitialHistory,
    times: Vec<f64>,
    states: Vec<f64>,
    /// derivative at the left end of piece `k` (right limit at node `k`)
    d_start: Vec<f64>,
    /// derivative at the right end of piece `k` (left limit at node `k+1`)
    d_end: Vec<f64>,
    node_tol: f64,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_delay(&self) -> f64 {
        self.initial.max_delay()
    }

    pub fn initial(&self) -> &InitialHistory {
        &self.initial
    }

    /// Integration nodes in `[0, T]`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one node")
    }

    pub fn final_state(&self) -> DVector<f64> {
        DVector::from_column_slice(self.state(self.times.len() - 1))
    }

    /// Dense output `x(τ)` for `τ ∈ [-r, T]`; at `τ = 0` the value of the
    /// solution (not of the initial history) is returned.
    pub fn value_at(&self, tau: f64) -> DVector<f64> {
        self.value_at_side(tau, Side::Right)
    }

    pub fn value_at_side(&self, tau: f64, side: Side) -> DVector<f64> {
        let tol = self.node_tol;
        if tau < -tol || (tau <= tol && side == Side::Left) {
            return self.initial.value(tau.min(0.0));
        }
        let n = self.times.len();
        if n == 1 {
            return DVector::from_column_slice(self.state(0));
        }
        let m = match side {
            Side::Right => self.times.partition_point(|&t| t <= tau + tol).saturating_sub(1),
            Side::Left => self.times.partition_point(|&t| t < tau - tol).saturating_sub(1),
        }
        .min(n - 2);
        let (ta, tb) = (self.times[m], self.times[m + 1]);
        let h = tb - ta;
        let s = ((tau - ta) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d = self.dim;
        DVector::from_fn(d, |i, _| {
            h00 * self.states[m * d + i]
                + h10 * h * self.d_start[m * d + i]
                + h01 * self.states[(m + 1) * d + i]
                + h11 * h * self.d_end[m * d + i]
        })
    }

    /// `Π_t x` sampled on a uniform grid of step `grid_step`.
    pub fn window(&self, t: f64, grid_step: f64) -> Result<Segment> {
        let r = self.max_delay();
        Segment::from_fn(self.dim, r, grid_step, |theta| self.value_at(t + theta))
    }

    /// Path on `[-r, T]`: the initial history at `history_step` spacing on
    /// `[-r, 0)`, followed by every integration node.
    pub fn to_path_grid(&self, history_step: f64) -> Result<PathGrid> {
        let r = self.max_delay();
        let n_hist = grid_intervals(r, history_step)?;
        let mut path = PathGrid::with_capacity(self.dim, n_hist + self.times.len());
        for k in 0..n_hist {
            let theta = -r + k as f64 * history_step;
            path.push(theta, self.initial.value(theta).as_slice());
        }
        for (k, &t) in self.times.iter().enumerate() {
            path.push(t, self.state(k));
        }
        Ok(path)
    }

    /// Integration nodes only, without the initial history.
    pub fn forward_path(&self) -> PathGrid {
        let mut path = PathGrid::with_capacity(self.dim, self.times.len());
        for (k, &t) in self.times.iter().enumerate() {
            path.push(t, self.state(k));
        }
        path
    }
}

/// History view seen by the right-hand side at one RK stage.
struct StageView<'a> {
    traj: &'a Trajectory,
    t: f64,
    side: Side,
    state: &'a DVector<f64>,
}

impl History for StageView<'_> {
    fn dim(&self) -> usize {
        self.traj.dim
    }

    fn value(&self, theta: f64) -> DVector<f64> {
        if theta >= -self.traj.node_tol {
            self.state.clone()
        } else {
            self.traj.value_at_side(self.t + theta, self.side)
        }
    }
}

/// Maximal number of breakpoints accepted inside one regular step.
const MAX_SPLITS_PER_STEP: usize = 10_000;

/// Method-of-steps integrator for one measure and step size.
pub struct MethodOfSteps<'a> {
    measure: &'a DelayMeasure,
    dt: f64,
    forcing: Option<&'a dyn Forcing>,
    breakpoints: &'a [f64],
}

impl<'a> MethodOfSteps<'a> {
    pub fn new(measure: &'a DelayMeasure, dt: f64) -> Self {
        Self { measure, dt, forcing: None, breakpoints: &[] }
    }

    pub fn with_forcing(mut self, forcing: &'a dyn Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    /// Sorted times at which steps must be split.
    pub fn with_breakpoints(mut self, breakpoints: &'a [f64]) -> Self {
        self.breakpoints = breakpoints;
        self
    }

    pub fn run(&self, initial: InitialHistory, horizon: f64) -> Result<Trajectory> {
        let dim = self.measure.dim();
        let dt = self.dt;
        if initial.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: initial.dim() });
        }
        if (initial.max_delay() - self.measure.max_delay()).abs() > 1e-12 * self.measure.max_delay() {
            return Err(invalid("initial history and measure have different max_delay"));
        }
        if !(dt > 0.0 && dt.is_finite()) || !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("need dt > 0 and horizon ≥ 0, got dt={dt}, T={horizon}")));
        }
        if let Some(d) = self.measure.min_positive_delay() {
            if dt > d * (1.0 + 1e-9) {
                return Err(invalid(format!("step {dt} exceeds the smallest positive delay {d}")));
            }
        }
        if let InitialHistory::Segment(seg) = &initial {
            let ratio = seg.grid_step() / dt;
            if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
                return Err(invalid(format!(
                    "step {dt} must divide the segment grid step {}",
                    seg.grid_step()
                )));
            }
        }

        let nodes = step_nodes(dt, self.breakpoints, horizon)?;
        let mut traj = Trajectory {
            dim,
            times: Vec::with_capacity(nodes.len()),
            states: Vec::with_capacity(nodes.len() * dim),
            d_start: Vec::with_capacity(nodes.len() * dim),
            d_end: Vec::with_capacity(nodes.len() * dim),
            node_tol: 1e-9 * dt,
            initial,
        };
        let mut x = traj.initial.head();
        traj.times.push(0.0);
        traj.states.extend(x.iter());

        for w in nodes.windows(2) {
            let (ta, tb) = (w[0], w[1]);
            let h = tb - ta;
            let ctx = |t| StepContext { t, step_start: ta, step_end: tb };
            let k1 = self.rhs(&traj, &ctx(ta), Side::Right, &x);
            let x2 = &x + &k1 * (0.5 * h);
            let k2 = self.rhs(&traj, &ctx(ta + 0.5 * h), Side::Right, &x2);
            let x3 = &x + &k2 * (0.5 * h);
            let k3 = self.rhs(&traj, &ctx(ta + 0.5 * h), Side::Right, &x3);
            let x4 = &x + &k3 * h;
            let k4 = self.rhs(&traj, &ctx(tb), Side::Left, &x4);
            let next = &x + (&k1 + (&k2 + &k3) * 2.0 + &k4) * (h / 6.0);
            let d_end = self.rhs(&traj, &ctx(tb), Side::Left, &next);
            traj.d_start.extend(k1.iter());
            traj.d_end.extend(d_end.iter());
            traj.times.push(tb);
            traj.states.extend(next.iter());
            x = next;
        }
        Ok(traj)
    }

    fn rhs(&self, traj: &Trajectory, ctx: &StepContext, side: Side, state: &DVector<f64>) -> DVector<f64> {
        let view = StageView { traj, t: ctx.t, side, state };
        let mut out = self.measure.apply(&view);
        if let Some(f) = self.forcing {
            out += f.eval(ctx, &view);
        }
        out
    }
}

/// Regular grid `k·dt` merged with sorted breakpoints, ending at `horizon`.
pub(crate) fn step_nodes(dt: f64, breakpoints: &[f64], horizon: f64) -> Result<Vec<f64>> {
    let tol = 1e-9 * dt;
    let n_regular = ((horizon / dt) + 1e-9).floor() as usize;
    let mut nodes = Vec::with_capacity(n_regular + 2 + breakpoints.len());
    let mut bp = breakpoints.iter().copied().filter(|&b| b > tol && b < horizon - tol).peekable();
    nodes.push(0.0);
    let push = |nodes: &mut Vec<f64>, t: f64| {
        if t - nodes.last().copied().unwrap_or(f64::NEG_INFINITY) > tol {
            nodes.push(t);
        }
    };
    for k in 1..=n_regular + 1 {
        let t = (k as f64 * dt).min(horizon);
        let mut splits = 0;
        while let Some(&b) = bp.peek() {
            if b < t - tol {
                push(&mut nodes, b);
                bp.next();
                splits += 1;
            } else if b <= t + tol {
                bp.next();
            } else {
                break;
            }
        }
        if splits > MAX_SPLITS_PER_STEP {
            return Err(Error::StepOverflow { jumps: splits, dt });
        }
        push(&mut nodes, t);
        if t >= horizon {
            break;
        }
    }
    Ok(nodes)
}

/// Unperturbed solution on `[-r, T]` started from `init`.
pub fn solve_deterministic(measure: &DelayMeasure, init: &Segment, horizon: f64, dt: f64) -> Result<PathGrid> {
    let traj = MethodOfSteps::new(measure, dt).run(InitialHistory::Segment(init.clone()), horizon)?;
    traj.to_path_grid(init.grid_step())
}

/// One trajectory per column of `1_{0}`.
pub fn fundamental_trajectories(measure: &DelayMeasure, horizon: f64, dt: f64) -> Result<Vec<Trajectory>> {
    let n = measure.dim();
    let solver = MethodOfSteps::new(measure, dt);
    (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            solver.run(InitialHistory::Jump { value: e, max_delay: measure.max_delay() }, horizon)
        })
        .collect()
}

/// Fundamental solution `T(t)1_{0}` on `[-r, T]`, one row-major `n×n`
/// matrix per time.
pub fn fundamental_solution(measure: &DelayMeasure, horizon: f64, dt: f64) -> Result<PathGrid> {
    let n = measure.dim();
    let cols = fundamental_trajectories(measure, horizon, dt)?;
    let r = measure.max_delay();
    let n_hist = (r / dt).round() as usize;
    let times = cols[0].times();
    let mut path = PathGrid::with_capacity(n * n, n_hist + times.len());
    let zeros = vec![0.0; n * n];
    for k in 0..n_hist {
        let t = -r + k as f64 * dt;
        if t < -1e-9 * dt {
            path.push(t, &zeros);
        }
    }
    let mut row = vec![0.0; n * n];
    for (k, &t) in times.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            for i in 0..n {
                row[i * n + j] = c.state(k)[i];
            }
        }
        path.push(t, &row);
    }
    Ok(path)
}

/// Integrator step used when the caller does not choose one: the segment
/// grid step, refined until it does not exceed the smallest delay.
pub fn default_step(measure: &DelayMeasure, seg: &Segment) -> f64 {
    let h = seg.grid_step();
    match measure.min_positive_delay() {
        Some(d) if d < h => h / (h / d).ceil(),
        _ => h,
    }
}

/// `T(t)η`.
pub fn semigroup_apply(measure: &DelayMeasure, seg: &Segment, t: f64) -> Result<Segment> {
    semigroup_apply_with_step(measure, seg, t, default_step(measure, seg))
}

pub fn semigroup_apply_with_step(measure: &DelayMeasure, seg: &Segment, t: f64, dt: f64) -> Result<Segment> {
    measure.check_segment(seg)?;
    if t < 0.0 {
        return Err(invalid("semigroup time must be non-negative"));
    }
    if t == 0.0 {
        return Ok(seg.clone());
    }
    let traj = MethodOfSteps::new(measure, dt).run(InitialHistory::Segment(seg.clone()), t)?;
    traj.window(t, seg.grid_step())
}

/// Matrix at row `k` of a matrix-valued path.
pub fn matrix_row(path: &PathGrid, k: usize) -> DMatrix<f64> {
    let n = (path.width() as f64).sqrt().round() as usize;
    DMatrix::from_row_slice(n, n, path.row(k))
}
