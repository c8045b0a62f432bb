use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::segment::{History, Segment};
use crate::error::{invalid, Error, Result};

/// Atom `A δ_θ` of the delay measure.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub theta: f64,
    pub matrix: DMatrix<f64>,
}

/// Absolutely continuous part of the measure, sampled on a uniform grid
/// `θ = -r, -r + h, …, 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub grid_step: f64,
    pub samples: Vec<DMatrix<f64>>,
}

impl Density {
    pub fn theta(&self, k: usize, max_delay: f64) -> f64 {
        if k + 1 == self.samples.len() {
            0.0
        } else {
            -max_delay + k as f64 * self.grid_step
        }
    }

    /// Trapezoid weight of node `k`.
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.samples.len() {
            0.5 * self.grid_step
        } else {
            self.grid_step
        }
    }
}

/// Matrix-valued Stieltjes measure on `[-r, 0]` representing the linear
/// functional `L0 η = ∫ dμ(θ) η(θ)`.
///
/// A point mass at `θ = 0` is the instantaneous (ODE) part of the equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureFile", into = "MeasureFile")]
pub struct DelayMeasure {
    dim: usize,
    max_delay: f64,
    point_masses: Vec<PointMass>,
    density: Option<Density>,
}

const THETA_SLACK: f64 = 1e-12;

impl DelayMeasure {
    pub fn new(
        dim: usize,
        max_delay: f64,
        point_masses: Vec<PointMass>,
        density: Option<Density>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("measure dimension must be at least 1"));
        }
        if !(max_delay > 0.0 && max_delay.is_finite()) {
            return Err(invalid(format!("max_delay must be positive, got {max_delay}")));
        }
        let mut masses = Vec::with_capacity(point_masses.len());
        for pm in point_masses {
            if !pm.theta.is_finite()
                || pm.theta > THETA_SLACK * max_delay
                || pm.theta < -max_delay * (1.0 + THETA_SLACK)
            {
                return Err(invalid(format!(
                    "point mass location {} outside [-{max_delay}, 0]",
                    pm.theta
                )));
            }
            check_square(&pm.matrix, dim)?;
            let theta = pm.theta.clamp(-max_delay, 0.0);
            masses.push(PointMass { theta, matrix: pm.matrix });
        }
        if let Some(d) = &density {
            if !(d.grid_step > 0.0) {
                return Err(invalid("density grid_step must be positive"));
            }
            let n = grid_intervals(max_delay, d.grid_step)?;
            if d.samples.len() != n + 1 {
                return Err(invalid(format!(
                    "density needs {} samples for grid_step {}, got {}",
                    n + 1,
                    d.grid_step,
                    d.samples.len()
                )));
            }
            for m in &d.samples {
                check_square(m, dim)?;
            }
        }
        Ok(Self { dim, max_delay, point_masses: masses, density })
    }

    /// Scalar measure made of point masses `(θ, a)`.
    pub fn scalar(max_delay: f64, masses: &[(f64, f64)]) -> Result<Self> {
        let pms = masses
            .iter()
            .map(|&(theta, a)| PointMass { theta, matrix: DMatrix::from_element(1, 1, a) })
            .collect();
        Self::new(1, max_delay, pms, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    pub fn point_masses(&self) -> &[PointMass] {
        &self.point_masses
    }

    pub fn density(&self) -> Option<&Density> {
        self.density.as_ref()
    }

    /// Total variation bound `Σ‖A_j‖_F + ∫‖D(θ)‖_F dθ`.
    pub fn total_variation(&self) -> f64 {
        let masses: f64 = self.point_masses.iter().map(|pm| pm.matrix.norm()).sum();
        let dens = self.density.as_ref().map_or(0.0, |d| {
            d.samples.iter().enumerate().map(|(k, m)| d.weight(k) * m.norm()).sum()
        });
        masses + dens
    }

    /// Smallest strictly positive delay the functional looks at. Explicit
    /// stepping requires the step to not exceed this.
    pub fn min_positive_delay(&self) -> Option<f64> {
        let masses = self
            .point_masses
            .iter()
            .map(|pm| -pm.theta)
            .filter(|&d| d > THETA_SLACK * self.max_delay);
        let dens = self.density.as_ref().map(|d| d.grid_step);
        masses.chain(dens).min_by(f64::total_cmp)
    }

    /// `L0` applied to any history view.
    pub fn apply<H: History + ?Sized>(&self, history: &H) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for pm in &self.point_masses {
            out.gemv(1.0, &pm.matrix, &history.value(pm.theta), 1.0);
        }
        if let Some(d) = &self.density {
            for (k, m) in d.samples.iter().enumerate() {
                let theta = d.theta(k, self.max_delay);
                out.gemv(d.weight(k), m, &history.value(theta), 1.0);
            }
        }
        out
    }

    /// `L0 η` for a discretized segment.
    pub fn eval_l0(&self, seg: &Segment) -> Result<DVector<f64>> {
        self.check_segment(seg)?;
        Ok(self.apply(seg))
    }

    pub(crate) fn check_segment(&self, seg: &Segment) -> Result<()> {
        if seg.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: seg.dim() });
        }
        if (seg.max_delay() - self.max_delay).abs() > 1e-12 * self.max_delay {
            return Err(invalid(format!(
                "segment max_delay {} differs from measure max_delay {}",
                seg.max_delay(),
                self.max_delay
            )));
        }
        Ok(())
    }

    /// `Δ(λ) = λI − ∫ dμ(θ) e^{λθ}`.
    pub fn char_delta(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let mut out = DMatrix::<Complex64>::identity(self.dim, self.dim) * lambda;
        self.accumulate_transform(lambda, false, &mut out);
        out
    }

    /// `dΔ/dλ = I − ∫ θ e^{λθ} dμ(θ)`.
    pub fn char_delta_derivative(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let mut out = DMatrix::<Complex64>::identity(self.dim, self.dim);
        self.accumulate_transform(lambda, true, &mut out);
        out
    }

    fn accumulate_transform(&self, lambda: Complex64, weighted: bool, out: &mut DMatrix<Complex64>) {
        let mut add = |theta: f64, w: f64, m: &DMatrix<f64>| {
            let mut e = (lambda * theta).exp() * w;
            if weighted {
                e *= theta;
            }
            for (o, a) in out.iter_mut().zip(m.iter()) {
                *o -= e * *a;
            }
        };
        for pm in &self.point_masses {
            add(pm.theta, 1.0, &pm.matrix);
        }
        if let Some(d) = &self.density {
            for (k, m) in d.samples.iter().enumerate() {
                add(d.theta(k, self.max_delay), d.weight(k), m);
            }
        }
    }

    /// `Δ(0)` as a real matrix.
    pub fn delta_at_zero(&self) -> DMatrix<f64> {
        self.char_delta(Complex64::new(0.0, 0.0)).map(|c| c.re)
    }

    /// `Δ'(0)` as a real matrix.
    pub fn delta_derivative_at_zero(&self) -> DMatrix<f64> {
        self.char_delta_derivative(Complex64::new(0.0, 0.0)).map(|c| c.re)
    }

    /// Same measure with the time axis stretched by `factor` (θ → factor·θ).
    /// Point-mass weights are kept, densities are rescaled so that the
    /// measure of each interval is preserved.
    pub fn time_rescaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(invalid("rescale factor must be positive"));
        }
        let masses = self
            .point_masses
            .iter()
            .map(|pm| PointMass { theta: pm.theta * factor, matrix: pm.matrix.clone() })
            .collect();
        let density = self.density.as_ref().map(|d| Density {
            grid_step: d.grid_step * factor,
            samples: d.samples.iter().map(|m| m / factor).collect(),
        });
        Self::new(self.dim, self.max_delay * factor, masses, density)
    }
}

fn check_square(m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: m.nrows().max(m.ncols()) });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("measure matrices must be finite"));
    }
    Ok(())
}

/// Number of grid intervals of width `step` in `[−r, 0]`; errors unless the
/// step divides `r`.
pub(crate) fn grid_intervals(max_delay: f64, step: f64) -> Result<usize> {
    let ratio = max_delay / step;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(invalid(format!("grid step {step} does not divide max_delay {max_delay}")));
    }
    Ok(n as usize)
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    dim: usize,
    max_delay: f64,
    #[serde(default)]
    point_masses: Vec<PointMassFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    density: Option<DensityFile>,
}

#[derive(Serialize, Deserialize)]
struct PointMassFile {
    theta: f64,
    matrix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DensityFile {
    grid_step: f64,
    samples: Vec<Vec<f64>>,
}

fn row_major(dim: usize, values: &[f64]) -> Result<DMatrix<f64>> {
    if values.len() != dim * dim {
        return Err(invalid(format!(
            "matrix needs {} row-major entries, got {}",
            dim * dim,
            values.len()
        )));
    }
    Ok(DMatrix::from_row_slice(dim, dim, values))
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl TryFrom<MeasureFile> for DelayMeasure {
    type Error = Error;

    fn try_from(f: MeasureFile) -> Result<Self> {
        let masses = f
            .point_masses
            .iter()
            .map(|p| Ok(PointMass { theta: p.theta, matrix: row_major(f.dim, &p.matrix)? }))
            .collect::<Result<Vec<_>>>()?;
        let density = f
            .density
            .map(|d| {
                let samples = d
                    .samples
                    .iter()
                    .map(|s| row_major(f.dim, s))
                    .collect::<Result<Vec<_>>>()?;
                Ok::<_, Error>(Density { grid_step: d.grid_step, samples })
            })
            .transpose()?;
        DelayMeasure::new(f.dim, f.max_delay, masses, density)
    }
}

impl From<DelayMeasure> for MeasureFile {
    fn from(m: DelayMeasure) -> Self {
        MeasureFile {
            dim: m.dim,
            max_delay: m.max_delay,
            point_masses: m
                .point_masses
                .iter()
                .map(|p| PointMassFile { theta: p.theta, matrix: to_row_major(&p.matrix) })
                .collect(),
            density: m.density.as_ref().map(|d| DensityFile {
                grid_step: d.grid_step,
                samples: d.samples.iter().map(to_row_major).collect(),
            }),
        }
    }
}
