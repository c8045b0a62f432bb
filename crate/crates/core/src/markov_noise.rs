//! Finite-state Markov-chain noise `ξ` with scalar output `σ(ξ)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Per-path generator derived from a base seed and a path index. Each index
/// selects an independent ChaCha stream.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovNoiseModel {
    generator: DMatrix<f64>,
    sigma: Vec<f64>,
    stationary: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    generator: Vec<Vec<f64>>,
    sigma: Vec<f64>,
}

impl Serialize for MarkovNoiseModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let generator = self.generator.row_iter().map(|r| r.iter().copied().collect()).collect();
        ModelFile { generator, sigma: self.sigma.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MarkovNoiseModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ModelFile::deserialize(d)?;
        let n = f.generator.len();
        if f.generator.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("generator must be square"));
        }
        let flat: Vec<f64> = f.generator.into_iter().flatten().collect();
        MarkovNoiseModel::new(DMatrix::from_row_slice(n, n, &flat), f.sigma).map_err(serde::de::Error::custom)
    }
}

/// Validates a generator: zero row sums, non-negative off-diagonals, no
/// absorbing state, unique positive stationary distribution.
pub(crate) fn stationary_distribution(generator: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = generator.nrows();
    if n == 0 || generator.ncols() != n {
        return Err(invalid("generator must be a non-empty square matrix"));
    }
    let scale = generator.amax().max(1.0);
    for i in 0..n {
        let row_sum: f64 = generator.row(i).sum();
        if row_sum.abs() > 1e-12 * scale {
            return Err(invalid(format!("generator row {i} sums to {row_sum:e}, not 0")));
        }
        for j in 0..n {
            if i != j && generator[(i, j)] < 0.0 {
                return Err(invalid(format!("negative rate Q[{i},{j}] = {}", generator[(i, j)])));
            }
        }
        if n > 1 && -generator[(i, i)] <= 0.0 {
            return Err(invalid(format!("state {i} is absorbing")));
        }
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let svd = generator.transpose().svd(false, true);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
    if sv[order[1]] < 1e-10 * scale {
        return Err(invalid("generator is reducible: stationary distribution is not unique"));
    }
    let v = svd.v_t.expect("requested V^T").row(order[0]).transpose();
    let total: f64 = v.sum();
    let pi: Vec<f64> = v.iter().map(|x| x / total).collect();
    if pi.iter().any(|&p| p <= 0.0) {
        return Err(invalid("stationary distribution has non-positive entries"));
    }
    Ok(pi)
}

/// Largest real eigenvalue of `Q + diag(d)`; for a generator this matrix is
/// Metzler, so that eigenvalue is real and has maximal real part.
pub(crate) fn perron_root(generator: &DMatrix<f64>, diag: &[f64]) -> Result<f64> {
    let m = tilted(generator, diag);
    if m.nrows() == 2 {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let half = 0.5 * (a - d);
        return Ok(0.5 * (a + d) + (half * half + b * c).sqrt());
    }
    let schur = m
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("eigensolver did not converge".into()))?;
    let ev = schur.complex_eigenvalues();
    Ok(ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Perron root and its derivative along `diag + t·ddiag`, from the left and
/// right Perron vectors: `λ' = w D v / (w v)`.
pub(crate) fn perron_root_with_derivative(generator: &DMatrix<f64>, diag: &[f64], ddiag: &[f64]) -> Result<(f64, f64)> {
    let lambda = perron_root(generator, diag)?;
    let n = generator.nrows();
    if n == 1 {
        return Ok((lambda, ddiag[0]));
    }
    let shifted = tilted(generator, diag) - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(true, true);
    let sv = &svd.singular_values;
    let k = (0..n).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).expect("n ≥ 2");
    let w = svd.u.expect("requested U").column(k).into_owned();
    let v = svd.v_t.expect("requested V^T").row(k).transpose();
    let num: f64 = (0..n).map(|i| w[i] * ddiag[i] * v[i]).sum();
    let den = w.dot(&v);
    if den.abs() < 1e-300 {
        return Err(Error::Numerical("degenerate Perron vectors".into()));
    }
    Ok((lambda, num / den))
}

fn tilted(generator: &DMatrix<f64>, diag: &[f64]) -> DMatrix<f64> {
    let mut m = generator.clone();
    for (i, d) in diag.iter().enumerate() {
        m[(i, i)] += d;
    }
    m
}

impl MarkovNoiseModel {
    pub fn new(generator: DMatrix<f64>, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != generator.nrows() {
            return Err(Error::DimensionMismatch { expected: generator.nrows(), found: sigma.len() });
        }
        if sigma.iter().any(|s| !s.is_finite()) {
            return Err(invalid("sigma values must be finite"));
        }
        let stationary = stationary_distribution(&generator)?;
        let mean: f64 = stationary.iter().zip(&sigma).map(|(p, s)| p * s).sum();
        let scale = sigma.iter().fold(1.0f64, |m, s| m.max(s.abs()));
        if mean.abs() > 1e-10 * scale {
            return Err(invalid(format!("noise is not mean zero: E_π σ = {mean:e}")));
        }
        Ok(Self { generator, sigma, stationary })
    }

    /// Two states switching at rate `g/2` each way, `σ = (σ₀, −σ₀)`.
    pub fn two_state_symmetric(g: f64, sigma0: f64) -> Result<Self> {
        if !(g > 0.0 && g.is_finite()) {
            return Err(invalid(format!("switching parameter g must be positive, got {g}")));
        }
        if sigma0 == 0.0 || !sigma0.is_finite() {
            return Err(invalid("sigma0 must be nonzero"));
        }
        let h = 0.5 * g;
        Self::new(DMatrix::from_row_slice(2, 2, &[-h, h, h, -h]), vec![sigma0, -sigma0])
    }

    pub fn num_states(&self) -> usize {
        self.sigma.len()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.generator[(i, i)]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(g, σ₀)` if this is the symmetric two-state chain.
    pub fn two_state_parameters(&self) -> Option<(f64, f64)> {
        if self.num_states() != 2 {
            return None;
        }
        let q = &self.generator;
        let h = q[(0, 1)];
        let tol = 1e-12 * h.abs().max(1.0);
        let symmetric = (q[(1, 0)] - h).abs() <= tol;
        let antisym = (self.sigma[0] + self.sigma[1]).abs() <= 1e-12 * self.sigma[0].abs().max(1.0);
        (symmetric && antisym).then_some((2.0 * h, self.sigma[0]))
    }

    /// `H_F(α)`: Perron root of `Q + diag(σᵢ α c)` for the scalar
    /// coefficient `c = Ψ̂F(Φ𝔷)`.
    pub fn hf_matrix_eigenvalue(&self, alpha: f64, coefficient: f64) -> Result<f64> {
        let diag: Vec<f64> = self.sigma.iter().map(|s| s * alpha * coefficient).collect();
        perron_root(&self.generator, &diag)
    }

    /// `H_F(α)` and `∂H_F/∂α`.
    pub fn hf_with_derivative(&self, alpha: f64, coefficient: f64) -> Result<(f64, f64)> {
        let diag: Vec<f64> = self.sigma.iter().map(|s| s * alpha * coefficient).collect();
        let ddiag: Vec<f64> = self.sigma.iter().map(|s| s * coefficient).collect();
        perron_root_with_derivative(&self.generator, &diag, &ddiag)
    }

    fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.stationary.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.num_states() - 1
    }

    /// Exact path on `[0, horizon]` started from the stationary law.
    pub fn sample_path(&self, horizon: f64, seed: u64) -> Result<NoisePath> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = self.sample_stationary(&mut rng);
        self.sample_path_from(horizon, start, &mut rng)
    }

    /// Path started from the stationary law, drawing from `rng`.
    pub fn sample_path_with<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Result<NoisePath> {
        let start = self.sample_stationary(rng);
        self.sample_path_from(horizon, start, rng)
    }

    /// Gillespie simulation: exponential holding times with rate `−Q_ii`,
    /// next state drawn proportionally to `Q_ij`.
    pub fn sample_path_from<R: Rng + ?Sized>(&self, horizon: f64, start: usize, rng: &mut R) -> Result<NoisePath> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("noise horizon must be positive"));
        }
        if start >= self.num_states() {
            return Err(invalid(format!("initial state {start} out of range")));
        }
        let mut jump_times = Vec::new();
        let mut states = vec![start];
        let mut t = 0.0;
        let mut state = start;
        if self.num_states() == 1 {
            return Ok(NoisePath { jump_times, states, horizon });
        }
        loop {
            let rate = self.exit_rate(state);
            let hold = Exp::new(rate).map_err(|e| Error::Numerical(format!("holding time: {e}")))?.sample(rng);
            t += hold;
            if t >= horizon {
                break;
            }
            let u: f64 = rng.random::<f64>() * rate;
            let mut acc = 0.0;
            let mut next = state;
            for j in 0..self.num_states() {
                if j == state {
                    continue;
                }
                acc += self.generator[(state, j)];
                next = j;
                if u < acc {
                    break;
                }
            }
            state = next;
            jump_times.push(t);
            states.push(state);
        }
        Ok(NoisePath { jump_times, states, horizon })
    }
}

/// Piecewise-constant chain path: `states[k]` holds on
/// `[jump_times[k-1], jump_times[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl NoisePath {
    /// Right-continuous state at time `t`.
    pub fn state_at(&self, t: f64) -> usize {
        self.states[self.jump_times.partition_point(|&s| s <= t)]
    }

    /// `ξ_{t/ε}` viewed on the compressed time axis.
    pub fn time_scaled(&self, eps: f64) -> NoisePath {
        NoisePath {
            jump_times: self.jump_times.iter().map(|t| t * eps).collect(),
            states: self.states.clone(),
            horizon: self.horizon * eps,
        }
    }

    pub fn num_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// `∫_0^T σ(ξ_s) ds / T`.
    pub fn time_average(&self, sigma: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut prev = 0.0;
        for (k, &t) in self.jump_times.iter().enumerate() {
            total += sigma[self.states[k]] * (t - prev);
            prev = t;
        }
        total += sigma[*self.states.last().expect("non-empty")] * (self.horizon - prev);
        total / self.horizon
    }

    /// CSV `t_jump,state`; the first row is the initial state at time 0.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t_jump", "state"])?;
        wr.write_record([crate::dde_core::format_float(0.0), self.states[0].to_string()])?;
        for (t, s) in self.jump_times.iter().zip(&self.states[1..]) {
            wr.write_record([crate::dde_core::format_float(*t), s.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `Q + diag(v)` helper for callers that build their own tilts.
pub fn tilted_generator(generator: &DMatrix<f64>, diag: &DVector<f64>) -> DMatrix<f64> {
    tilted(generator, diag.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_construction() {
        let m = MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap();
        assert_eq!(m.generator(), &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        assert_eq!(m.sigma(), &[1.0, -1.0]);
        assert!((m.stationary()[0] - 0.5).abs() < 1e-15 && (m.stationary()[1] - 0.5).abs() < 1e-15);
        assert_eq!(m.two_state_parameters(), Some((2.0, 1.0)));
        assert!(MarkovNoiseModel::two_state_symmetric(0.0, 1.0).is_err());
        assert!(MarkovNoiseModel::two_state_symmetric(-1.0, 1.0).is_err());
    }

    #[test]
    fn validation_rejects_bad_models() {
        let bad_rows = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 1.0, -1.0]);
        assert!(MarkovNoiseModel::new(bad_rows, vec![1.0, -1.0]).is_err());
        let absorbing = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -1.0]);
        assert!(MarkovNoiseModel::new(absorbing, vec![1.0, -1.0]).is_err());
        let not_centred = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(MarkovNoiseModel::new(not_centred, vec![1.0, 0.0]).is_err());
        // reducible: two disconnected pairs
        let mut q = DMatrix::zeros(4, 4);
        for (a, b) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            q[(a, b)] = 1.0;
            q[(a, a)] = -1.0;
        }
        assert!(MarkovNoiseModel::new(q, vec![1.0, -1.0, 1.0, -1.0]).is_err());
    }

    #[test]
    fn three_state_stationary() {
        let q = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 1.0, 2.0, -3.0, 1.0, 0.5, 0.5, -1.0]);
        // π Q = 0 solved by hand: π ∝ (5, 3, 10)/...
        let pi = stationary_distribution(&q).unwrap();
        let res = DVector::from_row_slice(&pi).transpose() * &q;
        assert!(res.amax() < 1e-12);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hf_two_state_closed_form() {
        let m = MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap();
        for k in -20..=20 {
            let a = 0.15 * k as f64;
            let expected = -1.0 + (1.0 + a * a).sqrt();
            assert!((m.hf_matrix_eigenvalue(a, 1.0).unwrap() - expected).abs() < 1e-12);
            let (_, d) = m.hf_with_derivative(a, 1.0).unwrap();
            assert!((d - a / (1.0 + a * a).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn path_is_deterministic_per_seed() {
        let m = MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap();
        let a = m.sample_path(50.0, 7).unwrap();
        let b = m.sample_path(50.0, 7).unwrap();
        let c = m.sample_path(50.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.jump_times.windows(2).all(|w| w[1] > w[0]));
        assert!(a.jump_times.iter().all(|&t| t > 0.0 && t < 50.0));
        assert_eq!(a.states.len(), a.jump_times.len() + 1);
    }

    #[test]
    fn csv_lists_initial_state_and_jumps() {
        let p = NoisePath { jump_times: vec![0.5, 1.25], states: vec![0, 1, 0], horizon: 2.0 };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t_jump,state\n0.0,0\n0.5,1\n1.25,0\n");
        assert_eq!(p.state_at(0.5), 1);
        assert_eq!(p.state_at(0.49), 0);
        assert!((p.time_average(&[1.0, -1.0]) - (0.5 - 0.75 + 0.75) / 2.0).abs() < 1e-15);
    }
}
