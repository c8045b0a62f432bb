//! Centre-direction data for the simple zero root and the projection
//! `π η = Φ ⟨Ψ, η⟩` splitting the segment space into `P ⊕ Q`.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::dde_core::{
    default_step, DecayConstants, DelayMeasure, History, InitialHistory, MethodOfSteps, Segment,
    StabilityReport,
};
use crate::error::{invalid, Error, Result};

/// Row-vector valued function on `[0, r]`, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSegment {
    dim: usize,
    max_delay: f64,
    grid_step: f64,
    values: Vec<f64>,
}

impl AdjointSegment {
    pub fn from_fn(dim: usize, max_delay: f64, grid_step: f64, f: impl Fn(f64) -> RowDVector<f64>) -> Result<Self> {
        let n = (max_delay / grid_step).round() as usize;
        if n == 0 || ((max_delay / grid_step) - n as f64).abs() > 1e-9 * n as f64 {
            return Err(invalid("adjoint grid step must divide max_delay"));
        }
        let mut values = Vec::with_capacity((n + 1) * dim);
        for k in 0..=n {
            let s = if k == n { max_delay } else { k as f64 * grid_step };
            let v = f(s);
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            values.extend(v.iter());
        }
        Ok(Self { dim, max_delay, grid_step, values })
    }

    pub fn constant(max_delay: f64, row: &RowDVector<f64>) -> Self {
        let values = row.iter().chain(row.iter()).copied().collect();
        Self { dim: row.len(), max_delay, grid_step: max_delay, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, s: f64) -> RowDVector<f64> {
        let n = self.values.len() / self.dim - 1;
        let x = (s / self.grid_step).clamp(0.0, n as f64);
        let k = (x.floor() as usize).min(n - 1);
        let f = x - k as f64;
        let d = self.dim;
        RowDVector::from_fn(d, |_, i| {
            let a = self.values[k * d + i];
            let b = self.values[(k + 1) * d + i];
            a + f * (b - a)
        })
    }

    pub fn combine(&self, a: f64, other: &AdjointSegment, b: f64) -> Result<Self> {
        if self.values.len() != other.values.len() || self.dim != other.dim {
            return Err(invalid("adjoint segments live on different grids"));
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Self { values, ..self.clone() })
    }
}

/// Trapezoid rule for `∫_{θ}^{0} ψ(s − θ) A η(s) ds` with `θ ≤ 0`.
fn delayed_pairing(psi: &AdjointSegment, a: &DMatrix<f64>, eta: &Segment, theta: f64) -> f64 {
    let len = -theta;
    if len <= 0.0 {
        return 0.0;
    }
    let h = eta.grid_step().min(psi.grid_step);
    let n = ((len / h) - 1e-9).ceil().max(1.0) as usize;
    let step = len / n as f64;
    let mut sum = 0.0;
    for k in 0..=n {
        let s = if k == n { 0.0 } else { theta + k as f64 * step };
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        let v = (psi.value(s - theta) * a * eta.value(s))[(0, 0)];
        sum += w * v;
    }
    sum * step
}

/// `⟨ψ, η⟩ = ψ(0)η(0) − ∫_{−r}^0 ∫_0^θ ψ(s−θ) dμ(θ) η(s) ds`.
pub fn bilinear_form(psi: &AdjointSegment, eta: &Segment, measure: &DelayMeasure) -> Result<f64> {
    measure.check_segment(eta)?;
    if psi.dim != measure.dim() {
        return Err(Error::DimensionMismatch { expected: measure.dim(), found: psi.dim });
    }
    if (psi.max_delay - measure.max_delay()).abs() > 1e-12 * measure.max_delay() {
        return Err(invalid("adjoint segment and measure have different max_delay"));
    }
    let mut total = (psi.value(0.0) * eta.head())[(0, 0)];
    for pm in measure.point_masses() {
        total += delayed_pairing(psi, &pm.matrix, eta, pm.theta);
    }
    if let Some(d) = measure.density() {
        for (k, m) in d.samples.iter().enumerate() {
            let theta = d.theta(k, measure.max_delay());
            total += d.weight(k) * delayed_pairing(psi, m, eta, theta);
        }
    }
    Ok(total)
}

/// Null vectors and normalization for the zero root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    /// `d̄` with `Δ(0) d̄ = 0`; also `Φ(0)` since `Φ` is constant.
    pub d_right: DVector<f64>,
    /// `d̄₂` with `d̄₂ Δ(0) = 0`.
    pub d_left: RowDVector<f64>,
    pub c: f64,
    pub phi0: DVector<f64>,
    /// `Ψ̂ = Ψ(0) = c d̄₂`.
    pub psi_hat: RowDVector<f64>,
}

/// Second-smallest singular value of `Δ(0)` below this means the kernel is
/// numerically more than one-dimensional.
const SIMPLE_KERNEL_THRESHOLD: f64 = 1e-8;

pub fn build_spectral_data(measure: &DelayMeasure, stability: &StabilityReport) -> Result<SpectralData> {
    stability.ensure_verified()?;
    let n = measure.dim();
    let d0 = measure.delta_at_zero();
    let (d_right, mut d_left) = if n == 1 {
        (DVector::from_element(1, 1.0), RowDVector::from_element(1, 1.0))
    } else {
        let svd = d0.clone().svd(true, true);
        let sv = &svd.singular_values;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
        let scale = sv.max().max(1.0);
        if sv[order[0]] > 1e-8 * scale {
            return Err(Error::AssumptionViolated(format!(
                "Δ(0) is not singular (smallest singular value {:e})",
                sv[order[0]]
            )));
        }
        if sv[order[1]] < SIMPLE_KERNEL_THRESHOLD * scale {
            return Err(Error::AssumptionViolated(format!(
                "kernel of Δ(0) is not one-dimensional (second singular value {:e})",
                sv[order[1]]
            )));
        }
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested V^T");
        let right = vt.row(order[0]).transpose();
        let left = u.column(order[0]).transpose();
        (right, left)
    };
    let mut d_right = d_right.normalize();
    if let Some(first) = d_right.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            d_right = -d_right;
        }
    }
    d_left = d_left.normalize();
    let dd = measure.delta_derivative_at_zero();
    if (&d_left * &dd * &d_right)[(0, 0)] < 0.0 {
        d_left = -d_left;
    }

    let r = measure.max_delay();
    let phi = Segment::constant(r, r, &d_right)?;
    let form = bilinear_form(&AdjointSegment::constant(r, &d_left), &phi, measure)?;
    if form.abs() < 1e-12 {
        return Err(Error::Numerical(format!(
            "bilinear form ⟨d̄₂, d̄⟩ = {form:e} vanishes; contradicts a simple zero root"
        )));
    }
    let c = 1.0 / form;
    let psi_hat = &d_left * c;
    let sd = SpectralData { phi0: d_right.clone(), d_right, d_left, c, psi_hat };
    let check = bilinear_form(&sd.psi(r), &phi, measure)?;
    if (check - 1.0).abs() > 1e-10 {
        return Err(Error::Numerical(format!("normalization ⟨Ψ, Φ⟩ = {check} ≠ 1")));
    }
    Ok(sd)
}

impl SpectralData {
    /// `Ψ` as a (constant) adjoint segment.
    pub fn psi(&self, max_delay: f64) -> AdjointSegment {
        AdjointSegment::constant(max_delay, &self.psi_hat)
    }

    /// `Φ z` on the given grid.
    pub fn phi_segment(&self, max_delay: f64, grid_step: f64, z: f64) -> Result<Segment> {
        Segment::constant(max_delay, grid_step, &(&self.phi0 * z))
    }

    /// `z = ⟨Ψ, η⟩`.
    pub fn coordinate(&self, seg: &Segment, measure: &DelayMeasure) -> Result<f64> {
        bilinear_form(&self.psi(measure.max_delay()), seg, measure)
    }

    /// `Ψ̂ v` for a vector in `ℝⁿ`.
    pub fn psi_hat_dot(&self, v: &DVector<f64>) -> f64 {
        self.psi_hat.dot(&v.transpose())
    }
}

/// The classical identity `c = 1 / (d̄₂ Δ'(0) d̄)`.
pub fn normalization_from_derivative(measure: &DelayMeasure, sd: &SpectralData) -> f64 {
    let dd = measure.delta_derivative_at_zero();
    1.0 / (&sd.d_left * dd * &sd.d_right)[(0, 0)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub z: f64,
    pub y: Segment,
    pub reconstruction_error: f64,
}

pub fn project(seg: &Segment, sd: &SpectralData, measure: &DelayMeasure) -> Result<Decomposition> {
    let z = sd.coordinate(seg, measure)?;
    let shift = &sd.phi0 * z;
    let y = seg.minus_constant(&shift);
    let rebuilt = y.combine(1.0, &sd.phi_segment(seg.max_delay(), seg.grid_step(), z)?, 1.0)?;
    let reconstruction_error = rebuilt.sup_distance(seg)?;
    Ok(Decomposition { z, y, reconstruction_error })
}

/// `Φ(0) Ψ̂`: the centre component of `1_{0}`, column by column.
pub fn project_fundamental(sd: &SpectralData) -> DMatrix<f64> {
    &sd.phi0 * &sd.psi_hat
}

/// Fits `K, κ` from the decay of a few fixed probe segments projected onto
/// `Q`, over `t ∈ [r, 6r]`.
/// Probes that vanish identically after a finite time contribute no fit;
/// when every probe does, `fallback_rate` is reported.
pub fn fit_decay_constants(measure: &DelayMeasure, sd: &SpectralData, fallback_rate: f64) -> Result<DecayConstants> {
    let r = measure.max_delay();
    let n = measure.dim();
    let h = r / 100.0;
    let shapes: [fn(f64) -> f64; 3] = [|s| s, |s| (std::f64::consts::PI * s).cos(), |s| (2.0 * std::f64::consts::PI * s).sin()];
    let mut kappa = f64::INFINITY;
    let mut samples = Vec::new();
    for i in 0..n {
        for shape in shapes {
            let seg = Segment::from_fn(n, r, h, |theta| {
                let mut v = DVector::zeros(n);
                v[i] = shape(theta / r);
                v
            })?;
            let y = project(&seg, sd, measure)?.y;
            let y0 = y.sup_norm();
            if y0 < 1e-12 {
                continue;
            }
            let dt = default_step(measure, &y);
            let traj = MethodOfSteps::new(measure, dt).run(InitialHistory::Segment(y), 6.0 * r)?;
            let pts: Vec<(f64, f64)> = (0..=48)
                .map(|j| {
                    let t = j as f64 * r / 8.0;
                    let norm = traj.window(t, h).map(|w| w.sup_norm()).unwrap_or(f64::NAN);
                    (t, norm / y0)
                })
                .collect();
            let fit: Vec<(f64, f64)> = pts.iter().filter(|(t, v)| *t >= r && *v > 0.0).map(|&(t, v)| (t, v.ln())).collect();
            if fit.len() >= 3 {
                kappa = kappa.min(-least_squares_slope(&fit));
            }
            samples.push(pts);
        }
    }
    if kappa.is_infinite() {
        kappa = fallback_rate;
    }
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::Numerical("decay fit did not produce a positive rate".into()));
    }
    let k = samples
        .iter()
        .flatten()
        .map(|&(t, v)| v * (kappa * t).exp())
        .fold(1.0, f64::max);
    Ok(DecayConstants { k, kappa })
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// History view of `Φ z`; used to evaluate nonlinearities on the centre
/// direction without building a grid.
pub struct CentreView<'a> {
    pub sd: &'a SpectralData,
    pub z: f64,
}

impl History for CentreView<'_> {
    fn dim(&self) -> usize {
        self.sd.phi0.len()
    }

    fn value(&self, _theta: f64) -> DVector<f64> {
        &self.sd.phi0 * self.z
    }
}
