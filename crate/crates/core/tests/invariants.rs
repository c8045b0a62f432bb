use ddeldp::dde_core::{DelayMeasure, PathGrid, Segment};
use ddeldp::experiments::wilson_interval;
use ddeldp::ldp_rate::RateModel;
use ddeldp::linear_fast::{b_eta_apply, b_eta_inverse, optimal_exit_analytic, LinearExitProblem};
use ddeldp::markov_noise::MarkovNoiseModel;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Symmetric rates give a uniform stationary law, so centring `σ` makes it
/// mean zero.
fn symmetric_noise(rates: &[f64], raw: &[f64]) -> MarkovNoiseModel {
    let n = raw.len();
    let mut q = DMatrix::zeros(n, n);
    let mut r = rates.iter().cycle();
    for i in 0..n {
        for j in (i + 1)..n {
            let x = *r.next().unwrap();
            q[(i, j)] = x;
            q[(j, i)] = x;
        }
    }
    for i in 0..n {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -s;
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    MarkovNoiseModel::new(q, raw.iter().map(|x| x - mean).collect()).unwrap()
}

fn noise_strategy() -> impl Strategy<Value = MarkovNoiseModel> {
    (2usize..=4).prop_flat_map(|n| {
        (prop::collection::vec(0.2f64..5.0, n * (n - 1) / 2), prop::collection::vec(-2.0f64..2.0, n))
            .prop_filter("non-degenerate output", |(_, raw)| {
                let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                hi - lo > 0.1
            })
            .prop_map(|(rates, raw)| symmetric_noise(&rates, &raw))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hf_vanishes_at_zero_and_is_convex(noise in noise_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0, c in 0.2f64..2.0) {
        prop_assert!(noise.hf_matrix_eigenvalue(0.0, c).unwrap().abs() < 1e-12);
        let ha = noise.hf_matrix_eigenvalue(a, c).unwrap();
        let hb = noise.hf_matrix_eigenvalue(b, c).unwrap();
        let hm = noise.hf_matrix_eigenvalue(0.5 * (a + b), c).unwrap();
        prop_assert!(hm <= 0.5 * (ha + hb) + 1e-10);
        // mean-zero output makes H_F non-negative
        prop_assert!(ha >= -1e-10);
        let s = c * noise.sigma_max();
        prop_assert!(ha <= a.abs() * s.max(-c * noise.sigma_min()) + 1e-10);
    }

    #[test]
    fn lagrangian_is_nonnegative_and_fenchel(noise in noise_strategy(), beta_frac in -0.95f64..0.95, alpha in -3.0f64..3.0) {
        let model = RateModel::from_fields(
            ddeldp::ldp_rate::ScalarField::Constant { value: 0.0 },
            ddeldp::ldp_rate::ScalarField::Constant { value: 1.0 },
            noise.clone(),
        );
        let (lo, hi) = model.velocity_range(0.0);
        let beta = 0.5 * (lo + hi) + beta_frac * 0.5 * (hi - lo);
        let l = model.lagrangian(0.0, beta).unwrap();
        prop_assert!(l >= -1e-12);
        prop_assert!(model.lagrangian(0.0, 0.0).unwrap().abs() < 1e-9);
        let h = model.hamiltonian(0.0, alpha).unwrap();
        prop_assert!(l + h >= alpha * beta - 1e-7, "L = {l}, H = {h}, αβ = {}", alpha * beta);
        prop_assert!(model.lagrangian(0.0, hi + 0.1).unwrap().is_infinite());
    }

    #[test]
    fn wilson_interval_contains_estimate(n in 1usize..100_000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).floor() as usize;
        let (lo, hi) = wilson_interval(k, n, 1.959963984540054);
        let p = k as f64 / n as f64;
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-15 && p <= hi + 1e-15);
    }

    #[test]
    fn b_eta_round_trip(a in -2.0f64..2.0, w in 0.5f64..8.0, e0 in -1.0f64..1.0, e1 in -1.0f64..1.0, decay in 0.0f64..2.0) {
        let m = DelayMeasure::scalar(1.0, &[(0.0, -decay), (-1.0, 1.0)]).unwrap();
        let eta = Segment::from_fn(1, 1.0, 0.05, |t| DVector::from_element(1, e0 + e1 * t)).unwrap();
        let psi = PathGrid::scalar_from_fn(0.0, 2.0, 80, |t| a * (w * t).sin());
        let v = b_eta_apply(&m, &eta, &psi).unwrap();
        let back = b_eta_inverse(&m, &eta, &v).unwrap();
        prop_assert!(back.sup_distance(&psi) < 1e-12);
    }

    #[test]
    fn exit_control_is_bounded_and_opposes_multiplier(b in -0.8f64..0.8, t in 0.5f64..3.0, g in 0.5f64..4.0) {
        let t = (t * 10.0).round() / 10.0;
        let m = DelayMeasure::scalar(1.0, &[(0.0, -1.0), (-1.0, 1.0)]).unwrap();
        let eta = Segment::zeros(1, 1.0, 0.01).unwrap();
        let p = LinearExitProblem { measure: m, g, sigma0: 1.0, t, eta, b };
        let sol = optimal_exit_analytic(&p, 0.01).unwrap();
        if sol.feasible {
            prop_assert!(sol.value >= 0.0);
            for (u, f) in sol.control.column(0).iter().zip(&sol.kernel) {
                prop_assert!(u.abs() < 1.0);
                prop_assert!(u * sol.rho * f <= 0.0);
            }
        } else {
            prop_assert!(sol.value.is_infinite());
            prop_assert!(sol.gap.abs() >= sol.reach);
        }
    }
}
