use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::markov_noise::MarkovNoiseModel;

type Func = dyn Fn(f64) -> f64 + Send + Sync;

/// Scalar function of the centre coordinate with an optional exact
/// derivative (central differences otherwise).
#[derive(Clone)]
pub struct ScalarFn {
    f: Arc<Func>,
    df: Option<Arc<Func>>,
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarFn").field("exact_derivative", &self.df.is_some()).finish()
    }
}

impl ScalarFn {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), df: None }
    }

    pub fn with_derivative(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { f: Arc::new(f), df: Some(Arc::new(df)) }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_derivative(move |_| c, |_| 0.0)
    }

    pub fn eval(&self, z: f64) -> f64 {
        (self.f)(z)
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match &self.df {
            Some(df) => df(z),
            None => {
                let h = 1e-6 * (1.0 + z.abs());
                ((self.f)(z + h) - (self.f)(z - h)) / (2.0 * h)
            }
        }
    }
}

impl From<ScalarField> for ScalarFn {
    fn from(field: ScalarField) -> Self {
        match field {
            ScalarField::Constant { value } => ScalarFn::constant(value),
            ScalarField::Linear { slope, intercept } => {
                ScalarFn::with_derivative(move |z| intercept + slope * z, move |_| slope)
            }
            ScalarField::Tanh { amplitude, gain, offset } => ScalarFn::with_derivative(
                move |z| offset + amplitude * (gain * z).tanh(),
                move |z| amplitude * gain / (gain * z).cosh().powi(2),
            ),
        }
    }
}

/// Serialisable scalar coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarField {
    Constant { value: f64 },
    Linear { slope: f64, intercept: f64 },
    Tanh { amplitude: f64, gain: f64, #[serde(default)] offset: f64 },
}

/// Reduced scalar dynamics `ż = drift(z) + coefficient(z)·σ(ξ)` together
/// with its large-deviation Hamiltonian `H(z, α) = α·drift(z) + H_F(z, α)`.
#[derive(Debug, Clone)]
pub struct RateModel {
    pub drift: ScalarFn,
    pub coefficient: ScalarFn,
    pub noise: MarkovNoiseModel,
}

/// Tolerance used to decide that a velocity lies on the boundary of the
/// attainable interval.
const BOUNDARY_TOL: f64 = 1e-12;

impl RateModel {
    pub fn new(drift: ScalarFn, coefficient: ScalarFn, noise: MarkovNoiseModel) -> Self {
        Self { drift, coefficient, noise }
    }

    pub fn from_fields(drift: ScalarField, coefficient: ScalarField, noise: MarkovNoiseModel) -> Self {
        Self::new(drift.into(), coefficient.into(), noise)
    }

    /// Drift 0, coefficient 1, symmetric two-state noise.
    pub fn two_state_free(g: f64, sigma0: f64) -> Result<Self> {
        Ok(Self::new(ScalarFn::constant(0.0), ScalarFn::constant(1.0), MarkovNoiseModel::two_state_symmetric(g, sigma0)?))
    }

    pub fn hamiltonian(&self, z: f64, alpha: f64) -> Result<f64> {
        Ok(alpha * self.drift.eval(z) + self.noise.hf_matrix_eigenvalue(alpha, self.coefficient.eval(z))?)
    }

    /// `∂H/∂α`.
    pub fn hamiltonian_slope(&self, z: f64, alpha: f64) -> Result<f64> {
        let (_, d) = self.noise.hf_with_derivative(alpha, self.coefficient.eval(z))?;
        Ok(self.drift.eval(z) + d)
    }

    /// Closed interval of velocities `drift + coef·σᵢ` with finite cost.
    pub fn velocity_range(&self, z: f64) -> (f64, f64) {
        let a = self.drift.eval(z);
        let b = self.coefficient.eval(z);
        let (lo, hi) = (self.noise.sigma_min() * b, self.noise.sigma_max() * b);
        (a + lo.min(hi), a + lo.max(hi))
    }

    /// `L(z, β) = sup_α [αβ − H(z, α)]`, `f64::INFINITY` outside the
    /// attainable velocities.
    pub fn lagrangian(&self, z: f64, beta: f64) -> Result<f64> {
        let Some(alpha) = self.optimal_alpha(z, beta)? else {
            return self.boundary_lagrangian(z, beta);
        };
        Ok((alpha * beta - self.hamiltonian(z, alpha)?).max(0.0))
    }

    /// Maximiser `α*` of `αβ − H`, or `None` when β is on or outside the
    /// boundary of the velocity interval.
    pub fn optimal_alpha(&self, z: f64, beta: f64) -> Result<Option<f64>> {
        let (lo, hi) = self.velocity_range(z);
        let scale = 1.0 + lo.abs().max(hi.abs());
        if beta <= lo + BOUNDARY_TOL * scale || beta >= hi - BOUNDARY_TOL * scale {
            return Ok(None);
        }
        // slope of the concave objective: β − ∂H/∂α, decreasing in α
        let slope = |a: f64| -> Result<f64> { Ok(beta - self.hamiltonian_slope(z, a)?) };
        let s0 = slope(0.0)?;
        if s0 == 0.0 {
            return Ok(Some(0.0));
        }
        let dir = s0.signum();
        let (mut a_in, mut a_out) = (0.0, dir);
        while slope(a_out)? * dir > 0.0 {
            a_in = a_out;
            a_out *= 2.0;
            if a_out.abs() > 1e12 {
                return Ok(None);
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (a_in + a_out);
            if mid == a_in || mid == a_out {
                break;
            }
            if slope(mid)? * dir > 0.0 {
                a_in = mid;
            } else {
                a_out = mid;
            }
        }
        Ok(Some(0.5 * (a_in + a_out)))
    }

    /// On the boundary the supremum is approached as `α → ±∞` and equals
    /// `−λ_max` of the generator restricted to the extremal states.
    fn boundary_lagrangian(&self, z: f64, beta: f64) -> Result<f64> {
        let (lo, hi) = self.velocity_range(z);
        let scale = 1.0 + lo.abs().max(hi.abs());
        let on_hi = (beta - hi).abs() <= BOUNDARY_TOL * scale;
        let on_lo = (beta - lo).abs() <= BOUNDARY_TOL * scale;
        if !on_hi && !on_lo {
            return Ok(f64::INFINITY);
        }
        let coef = self.coefficient.eval(z);
        if on_hi && on_lo {
            // degenerate coefficient: the only attainable velocity
            return Ok(0.0);
        }
        let sigma = self.noise.sigma();
        let scaled: Vec<f64> = sigma.iter().map(|s| s * coef).collect();
        let target = if on_hi { hi } else { lo } - self.drift.eval(z);
        let states: Vec<usize> = (0..scaled.len())
            .filter(|&i| (scaled[i] - target).abs() <= BOUNDARY_TOL * scale)
            .collect();
        let q = self.noise.generator().select_rows(&states).select_columns(&states);
        let lam = crate::markov_noise::perron_root(&q, &vec![0.0; states.len()])?;
        Ok(-lam)
    }

    /// `(g, σ₀)` of symmetric two-state noise.
    pub fn two_state(&self) -> Result<(f64, f64)> {
        self.noise
            .two_state_parameters()
            .ok_or_else(|| invalid("operation requires symmetric two-state noise"))
    }

    /// Closed-form two-state Lagrangian `(g/2)(1 − √(1 − ((β−a)/(σ₀b))²))`.
    pub fn two_state_lagrangian(&self, z: f64, beta: f64) -> Result<f64> {
        let (g, sigma0) = self.two_state()?;
        Ok(two_state_cost(g, sigma0 * self.coefficient.eval(z), beta - self.drift.eval(z)))
    }
}

/// `(g/2)(1 − √(1 − (v/s)²))` for velocity excess `v` and noise scale `s`.
pub(crate) fn two_state_cost(g: f64, s: f64, v: f64) -> f64 {
    if s == 0.0 {
        return if v == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let q = v / s;
    if q.abs() > 1.0 + BOUNDARY_TOL {
        f64::INFINITY
    } else {
        0.5 * g * (1.0 - (1.0 - (q * q).min(1.0)).sqrt())
    }
}
