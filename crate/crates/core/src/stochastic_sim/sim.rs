use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::field::NonlinearField;
use crate::dde_core::{step_nodes, DelayMeasure, History, InitialHistory, MethodOfSteps, PathGrid, Segment, StepContext};
use crate::error::{invalid, Result};
use crate::ldp_rate::{RateModel, ScalarFn};
use crate::markov_noise::{MarkovNoiseModel, NoisePath};
use crate::spectral::{project, CentreView, SpectralData};

/// Everything needed to integrate
/// `ẋ = L0(Π_t x) + ε G(Π_t x) + ε F(Π_t x) σ(ξ_t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdeRunConfig {
    pub measure: DelayMeasure,
    pub spectral: SpectralData,
    pub drift: NonlinearField,
    pub diffusion: NonlinearField,
    pub noise: MarkovNoiseModel,
    pub epsilon: f64,
    pub init: Segment,
    /// Slow-time horizon `T`; the equation is integrated up to `T/ε`.
    pub horizon: f64,
    pub dt: f64,
    /// Spacing of the recorded `z` and `‖y‖` samples, in fast time.
    pub output_step: f64,
    pub seed: u64,
}

impl SdeRunConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.measure.dim();
        let r = self.measure.max_delay();
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= r / 10.0 * (1.0 + 1e-12)) {
            return Err(invalid(format!("dt must lie in (0, r/10], got {}", self.dt)));
        }
        let m = self.output_step / self.dt;
        if m < 1.0 - 1e-9 || (m - m.round()).abs() > 1e-9 * m {
            return Err(invalid("output_step must be a multiple of dt"));
        }
        if self.spectral.phi0.len() != n {
            return Err(invalid("spectral data does not match the measure dimension"));
        }
        self.drift.validate(n, r)?;
        self.diffusion.validate(n, r)?;
        if self.init.dim() != n {
            return Err(invalid("initial segment has the wrong dimension"));
        }
        Ok(())
    }

    /// `T/ε`, or `T` itself when `ε = 0`.
    pub fn fast_horizon(&self) -> f64 {
        if self.epsilon > 0.0 {
            self.horizon / self.epsilon
        } else {
            self.horizon
        }
    }

    /// Noise path on `[0, T/ε]` for this config's seed.
    pub fn sample_noise(&self) -> Result<NoisePath> {
        self.noise.sample_path(self.fast_horizon(), self.seed)
    }

    fn output_times(&self) -> Vec<f64> {
        let every = (self.output_step / self.dt).round() as usize;
        let horizon = self.fast_horizon();
        let steps = ((horizon / self.dt) + 1e-9).floor() as usize;
        let mut out: Vec<f64> = (0..=steps).step_by(every).map(|k| k as f64 * self.dt).collect();
        if horizon - out.last().copied().unwrap_or(0.0) > 1e-9 * self.dt {
            out.push(horizon);
        }
        out
    }

    /// Reduced scalar coefficients `Ψ̂G(Φz)` and `Ψ̂F(Φz)`.
    pub fn reduced_model(&self) -> RateModel {
        let coefficient = |field: &NonlinearField| {
            let field = field.clone();
            let sd = self.spectral.clone();
            ScalarFn::new(move |z| sd.psi_hat_dot(&field.eval(&CentreView { sd: &sd, z })))
        };
        RateModel::new(coefficient(&self.drift), coefficient(&self.diffusion), self.noise.clone())
    }

    /// `z₀ = ⟨Ψ, η⟩`.
    pub fn initial_coordinate(&self) -> Result<f64> {
        self.spectral.coordinate(&self.init, &self.measure)
    }
}

/// Output of [`simulate_full`].
#[derive(Debug, Clone)]
pub struct FullRun {
    /// `x` on `[-r, T/ε]`.
    pub x: PathGrid,
    /// `z_t = ⟨Ψ, Π_t x⟩` at the output times.
    pub z: PathGrid,
    /// `‖y_t‖∞` at the output times.
    pub y_norm: PathGrid,
    pub noise: NoisePath,
}

pub fn simulate_full(cfg: &SdeRunConfig) -> Result<FullRun> {
    let noise = cfg.sample_noise()?;
    simulate_full_with_noise(cfg, &noise)
}

/// Full system driven by a given noise realisation. Steps are split at
/// every jump so the chain state is constant on each step.
pub fn simulate_full_with_noise(cfg: &SdeRunConfig, noise: &NoisePath) -> Result<FullRun> {
    cfg.validate()?;
    let eps = cfg.epsilon;
    let sigma = cfg.noise.sigma();
    let forcing = |ctx: &StepContext, h: &dyn History| -> DVector<f64> {
        let s = sigma[noise.state_at(ctx.midpoint())];
        (cfg.drift.eval(h) + cfg.diffusion.eval(h) * s) * eps
    };
    let horizon = cfg.fast_horizon();
    let solver = MethodOfSteps::new(&cfg.measure, cfg.dt);
    let traj = if eps == 0.0 {
        solver.run(InitialHistory::Segment(cfg.init.clone()), horizon)?
    } else {
        solver
            .with_forcing(&forcing)
            .with_breakpoints(&noise.jump_times)
            .run(InitialHistory::Segment(cfg.init.clone()), horizon)?
    };
    let h = cfg.init.grid_step();
    let times = cfg.output_times();
    let mut z = PathGrid::with_capacity(1, times.len());
    let mut y_norm = PathGrid::with_capacity(1, times.len());
    for &t in &times {
        let d = project(&traj.window(t, h)?, &cfg.spectral, &cfg.measure)?;
        z.push(t, &[d.z]);
        y_norm.push(t, &[d.y.sup_norm()]);
    }
    Ok(FullRun { x: traj.to_path_grid(h)?, z, y_norm, noise: noise.clone() })
}

/// RK4 for `ż = scale·(drift(z) + coef(z)·σ(ξ_t))` on the regular grid
/// merged with the jump times. `visit(t, z)` sees every node;
/// returning `false` stops the integration.
pub(crate) fn integrate_reduced(
    model: &RateModel,
    scale: f64,
    z0: f64,
    noise: &NoisePath,
    dt: f64,
    horizon: f64,
    mut visit: impl FnMut(f64, f64) -> bool,
) -> Result<()> {
    let sigma = model.noise.sigma();
    let nodes = step_nodes(dt, &noise.jump_times, horizon)?;
    let mut z = z0;
    if !visit(0.0, z) {
        return Ok(());
    }
    for w in nodes.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let h = tb - ta;
        let s = sigma[noise.state_at(0.5 * (ta + tb))];
        let f = |z: f64| scale * (model.drift.eval(z) + model.coefficient.eval(z) * s);
        let k1 = f(z);
        let k2 = f(z + 0.5 * h * k1);
        let k3 = f(z + 0.5 * h * k2);
        let k4 = f(z + h * k3);
        z += h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
        if !visit(tb, z) {
            break;
        }
    }
    Ok(())
}

pub fn simulate_reduced(cfg: &SdeRunConfig) -> Result<PathGrid> {
    let noise = cfg.sample_noise()?;
    simulate_reduced_with_noise(cfg, &noise)
}

/// `d𝔷 = εΨ̂G(Φ𝔷)dt + εΨ̂F(Φ𝔷)σ(ξ_t)dt` from `𝔷₀ = z₀`, sampled at the
/// output times.
pub fn simulate_reduced_with_noise(cfg: &SdeRunConfig, noise: &NoisePath) -> Result<PathGrid> {
    cfg.validate()?;
    let model = cfg.reduced_model();
    let z0 = cfg.initial_coordinate()?;
    sample_reduced(&model, cfg.epsilon, z0, noise, cfg.dt, cfg.fast_horizon(), &cfg.output_times())
}

/// The same process in slow time, `d𝔷^ε = Ψ̂G dt + Ψ̂F σ(ξ_{t/ε}) dt` on
/// `[0, T]`, stepped with `ε·dt` and the compressed noise path.
pub fn simulate_reduced_slow(cfg: &SdeRunConfig, noise: &NoisePath) -> Result<PathGrid> {
    cfg.validate()?;
    let eps = cfg.epsilon;
    if eps <= 0.0 {
        return Err(invalid("slow-time simulation needs epsilon > 0"));
    }
    let model = cfg.reduced_model();
    let z0 = cfg.initial_coordinate()?;
    let slow_noise = noise.time_scaled(eps);
    let times: Vec<f64> = cfg.output_times().iter().map(|t| t * eps).collect();
    sample_reduced(&model, 1.0, z0, &slow_noise, cfg.dt * eps, cfg.horizon, &times)
}

fn sample_reduced(
    model: &RateModel,
    scale: f64,
    z0: f64,
    noise: &NoisePath,
    dt: f64,
    horizon: f64,
    times: &[f64],
) -> Result<PathGrid> {
    let tol = 1e-9 * dt;
    let mut out = PathGrid::with_capacity(1, times.len());
    let mut next = 0;
    integrate_reduced(model, scale, z0, noise, dt, horizon, |t, z| {
        while next < times.len() && times[next] <= t + tol {
            if (times[next] - t).abs() <= tol {
                out.push(times[next], &[z]);
            }
            next += 1;
        }
        true
    })?;
    Ok(out)
}

/// `sup_t |z_t − 𝔷_t|` over the common output times.
pub fn sup_gap(z: &PathGrid, zr: &PathGrid) -> f64 {
    z.sup_distance(zr)
}
