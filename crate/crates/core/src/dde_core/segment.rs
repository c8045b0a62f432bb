use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::measure::grid_intervals;
use crate::error::{invalid, Error, Result};

/// Read access to a history function `θ ↦ η(θ)` on `[-r, 0]`.
pub trait History {
    fn dim(&self) -> usize;
    fn value(&self, theta: f64) -> DVector<f64>;
}

/// Discretized history `η ∈ C([-r, 0]; ℝⁿ)` on a uniform grid, linearly
/// interpolated between samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SegmentFile", into = "SegmentFile")]
pub struct Segment {
    dim: usize,
    max_delay: f64,
    grid_step: f64,
    /// `samples × dim`, sample-major.
    values: Vec<f64>,
}

impl Segment {
    pub fn new(dim: usize, max_delay: f64, grid_step: f64, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("segment dimension must be at least 1"));
        }
        if !(grid_step > 0.0) || !(max_delay > 0.0) {
            return Err(invalid("segment grid_step and max_delay must be positive"));
        }
        let n = grid_intervals(max_delay, grid_step)?;
        if values.len() != (n + 1) * dim {
            return Err(invalid(format!(
                "segment needs {} values ({} samples of dim {dim}), got {}",
                (n + 1) * dim,
                n + 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("segment values must be finite"));
        }
        Ok(Self { dim, max_delay, grid_step, values })
    }

    pub fn from_fn(
        dim: usize,
        max_delay: f64,
        grid_step: f64,
        f: impl Fn(f64) -> DVector<f64>,
    ) -> Result<Self> {
        let n = grid_intervals(max_delay, grid_step)?;
        let mut values = Vec::with_capacity((n + 1) * dim);
        for k in 0..=n {
            let v = f(node(max_delay, grid_step, n, k));
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            values.extend(v.iter());
        }
        Self::new(dim, max_delay, grid_step, values)
    }

    pub fn constant(max_delay: f64, grid_step: f64, value: &DVector<f64>) -> Result<Self> {
        Self::from_fn(value.len(), max_delay, grid_step, |_| value.clone())
    }

    pub fn zeros(dim: usize, max_delay: f64, grid_step: f64) -> Result<Self> {
        Self::constant(max_delay, grid_step, &DVector::zeros(dim))
    }

    pub fn max_delay(&self) -> f64 {
        self.max_delay
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn num_samples(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn theta(&self, k: usize) -> f64 {
        node(self.max_delay, self.grid_step, self.num_samples() - 1, k)
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `η(0)`.
    pub fn head(&self) -> DVector<f64> {
        DVector::from_column_slice(self.sample(self.num_samples() - 1))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Segment, b: f64) -> Result<Segment> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Segment { values, ..self.clone() })
    }

    pub fn scaled(&self, a: f64) -> Segment {
        Segment { values: self.values.iter().map(|x| a * x).collect(), ..self.clone() }
    }

    /// Subtracts the constant vector `v` from every sample.
    pub fn minus_constant(&self, v: &DVector<f64>) -> Segment {
        let values = self
            .values
            .chunks(self.dim)
            .flat_map(|s| s.iter().zip(v.iter()).map(|(x, c)| x - c))
            .collect();
        Segment { values, ..self.clone() }
    }

    pub fn sup_distance(&self, other: &Segment) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (x, y)| m.max((x - y).abs())))
    }

    fn check_compatible(&self, other: &Segment) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        if self.values.len() != other.values.len() || (self.max_delay - other.max_delay).abs() > 1e-12 {
            return Err(invalid("segments live on different grids"));
        }
        Ok(())
    }

    /// Interpolation cell containing `θ` and the fractional position in it.
    fn locate(&self, theta: f64) -> (usize, f64) {
        let n = self.num_samples() - 1;
        let x = ((theta + self.max_delay) / self.grid_step).clamp(0.0, n as f64);
        let k = (x.floor() as usize).min(n.saturating_sub(1));
        (k, x - k as f64)
    }
}

fn node(max_delay: f64, step: f64, n: usize, k: usize) -> f64 {
    if k == n {
        0.0
    } else {
        -max_delay + k as f64 * step
    }
}

impl History for Segment {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: f64) -> DVector<f64> {
        if self.num_samples() == 1 {
            return DVector::from_column_slice(self.sample(0));
        }
        let (k, s) = self.locate(theta);
        let a = self.sample(k);
        let b = self.sample(k + 1);
        DVector::from_iterator(self.dim, a.iter().zip(b).map(|(x, y)| x + s * (y - x)))
    }
}

#[derive(Serialize, Deserialize)]
struct SegmentFile {
    dim: usize,
    max_delay: f64,
    grid_step: f64,
    values: Vec<f64>,
}

impl TryFrom<SegmentFile> for Segment {
    type Error = Error;
    fn try_from(f: SegmentFile) -> Result<Self> {
        Segment::new(f.dim, f.max_delay, f.grid_step, f.values)
    }
}

impl From<Segment> for SegmentFile {
    fn from(s: Segment) -> Self {
        SegmentFile { dim: s.dim, max_delay: s.max_delay, grid_step: s.grid_step, values: s.values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_count_and_nodes() {
        let s = Segment::zeros(2, 1.0, 0.25).unwrap();
        assert_eq!(s.num_samples(), 5);
        assert_eq!(s.theta(0), -1.0);
        assert_eq!(s.theta(4), 0.0);
        assert!(Segment::zeros(1, 1.0, 0.3).is_err());
        assert!(Segment::new(1, 1.0, 0.5, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn linear_interpolation() {
        let s = Segment::from_fn(1, 2.0, 0.5, |t| DVector::from_element(1, t * t)).unwrap();
        // between θ=-1 (1.0) and θ=-0.5 (0.25)
        assert!((s.value(-0.75)[0] - 0.625).abs() < 1e-15);
        assert_eq!(s.value(0.0)[0], 0.0);
        assert_eq!(s.value(-2.0)[0], 4.0);
    }
}
