use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dde_core::{History, Segment};
use crate::error::{invalid, Error, Result};
use crate::spectral::{CentreView, SpectralData};

/// One evaluation offset of a projected nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub theta: f64,
    pub weights: Vec<f64>,
}

/// Bounded, Lipschitz nonlinearity `ℝ^{n}`-valued on segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearField {
    Constant { value: Vec<f64> },
    /// `G_i(η) = amplitude_i · tanh(gain_i · η_i(0))`.
    TanhComponents { amplitude: Vec<f64>, gain: Vec<f64> },
    /// `G(η) = amplitude · tanh(gain · Σ_taps ⟨w, η(θ)⟩)`.
    TanhProjection { amplitude: Vec<f64>, gain: f64, taps: Vec<Tap> },
}

impl NonlinearField {
    pub fn zero(dim: usize) -> Self {
        NonlinearField::Constant { value: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            NonlinearField::Constant { value } => value.len(),
            NonlinearField::TanhComponents { amplitude, .. } => amplitude.len(),
            NonlinearField::TanhProjection { amplitude, .. } => amplitude.len(),
        }
    }

    /// Checks shapes against the state dimension and delay.
    pub fn validate(&self, dim: usize, max_delay: f64) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: self.dim() });
        }
        match self {
            NonlinearField::Constant { value } => finite(value),
            NonlinearField::TanhComponents { amplitude, gain } => {
                if gain.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: gain.len() });
                }
                finite(amplitude)?;
                finite(gain)
            }
            NonlinearField::TanhProjection { amplitude, gain, taps } => {
                finite(amplitude)?;
                finite(&[*gain])?;
                for tap in taps {
                    if !(tap.theta <= 0.0 && tap.theta >= -max_delay) {
                        return Err(invalid(format!("tap offset {} outside [-r, 0]", tap.theta)));
                    }
                    if tap.weights.len() != dim {
                        return Err(Error::DimensionMismatch { expected: dim, found: tap.weights.len() });
                    }
                    finite(&tap.weights)?;
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, history: &dyn History) -> DVector<f64> {
        match self {
            NonlinearField::Constant { value } => DVector::from_column_slice(value),
            NonlinearField::TanhComponents { amplitude, gain } => {
                let head = history.value(0.0);
                DVector::from_fn(amplitude.len(), |i, _| amplitude[i] * (gain[i] * head[i]).tanh())
            }
            NonlinearField::TanhProjection { amplitude, gain, taps } => {
                let s: f64 = taps
                    .iter()
                    .map(|tap| {
                        let v = history.value(tap.theta);
                        tap.weights.iter().zip(v.iter()).map(|(w, x)| w * x).sum::<f64>()
                    })
                    .sum();
                let t = (gain * s).tanh();
                DVector::from_fn(amplitude.len(), |i, _| amplitude[i] * t)
            }
        }
    }

    /// `G(Φ z)`.
    pub fn eval_centre(&self, sd: &SpectralData, z: f64) -> DVector<f64> {
        self.eval(&CentreView { sd, z })
    }

    /// `sup_η ‖G(η)‖∞`.
    pub fn bound(&self) -> f64 {
        let amax = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        match self {
            NonlinearField::Constant { value } => amax(value),
            NonlinearField::TanhComponents { amplitude, .. } => amax(amplitude),
            NonlinearField::TanhProjection { amplitude, .. } => amax(amplitude),
        }
    }

    /// Lipschitz constant with respect to the sup norm on segments.
    pub fn lipschitz(&self) -> f64 {
        match self {
            NonlinearField::Constant { .. } => 0.0,
            NonlinearField::TanhComponents { amplitude, gain } => {
                amplitude.iter().zip(gain).fold(0.0f64, |m, (a, g)| m.max((a * g).abs()))
            }
            NonlinearField::TanhProjection { gain, taps, .. } => {
                let w: f64 = taps.iter().flat_map(|t| t.weights.iter()).map(|w| w.abs()).sum();
                self.bound() * gain.abs() * w
            }
        }
    }

    /// Evaluates on random segments and checks the declared bound and
    /// Lipschitz constant.
    pub fn check_bounds(&self, dim: usize, max_delay: f64, probes: usize, seed: u64) -> Result<()> {
        self.validate(dim, max_delay)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = max_delay / 20.0;
        let bound = self.bound();
        let lip = self.lipschitz();
        let random_segment = |rng: &mut ChaCha8Rng| -> Result<Segment> {
            let scale = 10f64.powf(rng.random_range(-2.0..2.0));
            let n = Segment::zeros(dim, max_delay, h)?.num_samples();
            let values: Vec<f64> = (0..n * dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            Segment::new(dim, max_delay, h, values)
        };
        for _ in 0..probes {
            let a = random_segment(&mut rng)?;
            let b = random_segment(&mut rng)?;
            let ga = self.eval(&a);
            let gb = self.eval(&b);
            if ga.amax() > bound * (1.0 + 1e-12) {
                return Err(invalid(format!("field value {} exceeds declared bound {bound}", ga.amax())));
            }
            let d = a.sup_distance(&b)?;
            if (ga - gb).amax() > lip * d * (1.0 + 1e-12) + 1e-15 {
                return Err(invalid("field violates its declared Lipschitz constant"));
            }
        }
        Ok(())
    }
}

fn finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid("field parameters must be finite"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_and_bounds() {
        let seg = Segment::from_fn(1, 1.0, 0.1, |t| DVector::from_element(1, 1.0 + t)).unwrap();
        let c = NonlinearField::Constant { value: vec![0.3] };
        assert_eq!(c.eval(&seg)[0], 0.3);
        let t = NonlinearField::TanhComponents { amplitude: vec![-2.0], gain: vec![0.5] };
        assert!((t.eval(&seg)[0] + 2.0 * 0.5f64.tanh()).abs() < 1e-15);
        let p = NonlinearField::TanhProjection {
            amplitude: vec![1.5],
            gain: 2.0,
            taps: vec![Tap { theta: 0.0, weights: vec![1.0] }, Tap { theta: -1.0, weights: vec![-0.5] }],
        };
        assert!((p.eval(&seg)[0] - 1.5 * (2.0f64 * 1.0).tanh()).abs() < 1e-15);
        for f in [c, t, p] {
            f.check_bounds(1, 1.0, 200, 3).unwrap();
        }
    }

    #[test]
    fn shape_errors() {
        let p = NonlinearField::TanhProjection { amplitude: vec![1.0], gain: 1.0, taps: vec![Tap { theta: -2.0, weights: vec![1.0] }] };
        assert!(p.validate(1, 1.0).is_err());
        assert!(NonlinearField::zero(2).validate(1, 1.0).is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"kind\":\"tanh_projection\""));
        assert_eq!(serde_json::from_str::<NonlinearField>(&json).unwrap(), p);
    }
}
