use ddeldp::dde_core::{find_roots, verify_instability, DelayMeasure, Rect, RootOptions, Segment};
use ddeldp::linear_fast::{optimal_exit_analytic, LinearExitProblem};
use ddeldp::markov_noise::{path_rng, MarkovNoiseModel};
use num_complex::Complex64;
use rand::Rng;

fn example() -> DelayMeasure {
    DelayMeasure::scalar(1.0, &[(0.0, -1.0), (-1.0, 1.0)]).unwrap()
}

fn delta(z: Complex64) -> Complex64 {
    z + 1.0 - (-z).exp()
}

/// Winding number of `λ + 1 − e^{−λ}` along the boundary, by brute-force
/// phase tracking.
fn winding(rect: (f64, f64, f64, f64), per_side: usize) -> i64 {
    let (x0, x1, y0, y1) = rect;
    let corners = [
        Complex64::new(x0, y0),
        Complex64::new(x1, y0),
        Complex64::new(x1, y1),
        Complex64::new(x0, y1),
    ];
    let mut total = 0.0;
    let mut prev = delta(corners[0]).arg();
    for s in 0..4 {
        let (a, b) = (corners[s], corners[(s + 1) % 4]);
        for k in 1..=per_side {
            let z = a + (b - a) * (k as f64 / per_side as f64);
            let cur = delta(z).arg();
            let mut d = cur - prev;
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            total += d;
            prev = cur;
        }
    }
    (total / (2.0 * std::f64::consts::PI)).round() as i64
}

#[test]
fn root_count_matches_brute_force_winding() {
    let m = example();
    for rect in [(-5.0, 0.5, -40.0, 40.0), (-3.0, 0.5, -20.0, 20.0), (-1.7, -1.2, 0.5, 6.0)] {
        let (roots, _) = find_roots(&m, Rect::new(rect.0, rect.1, rect.2, rect.3), RootOptions::default()).unwrap();
        let found: usize = roots.iter().map(|r| r.multiplicity).sum();
        assert_eq!(found as i64, winding(rect, 200_000), "{rect:?}");
    }
}

#[test]
fn dense_grid_minima_are_found_roots() {
    let m = example();
    let rep = verify_instability(&m, 5.0, 0.5).unwrap();
    let h = 0.02;
    let (nx, ny) = ((5.5 / h) as usize, (80.0 / h) as usize);
    let at = |i: usize, j: usize| delta(Complex64::new(-5.0 + i as f64 * h, -40.0 + j as f64 * h)).norm();
    let mut minima = 0;
    for i in 1..nx {
        for j in 1..ny {
            let z = Complex64::new(-5.0 + i as f64 * h, -40.0 + j as f64 * h);
            let v = at(i, j);
            // within one Newton step of a zero
            let is_min = v < h * (1.0 + (-z).exp()).norm()
                && [(0, 1), (2, 1), (1, 0), (1, 2)].iter().all(|&(di, dj)| v <= at(i + di - 1, j + dj - 1));
            if !is_min {
                continue;
            }
            minima += 1;
            let nearest = rep.roots.iter().map(|r| (r.value() - z).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest < 2.0 * h, "grid minimum at {z} has no root nearby ({nearest})");
        }
    }
    let interior = rep.roots.iter().filter(|r| r.re > -5.0 + 2.0 * h && r.im.abs() < 40.0 - 2.0 * h).count();
    assert!(minima >= interior, "{minima} minima for {interior} roots");
    assert!(rep.roots.iter().all(|r| delta(r.value()).norm() < 1e-8));
}

#[test]
fn monte_carlo_cumulant_matches_hf() {
    let noise = MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap();
    let (alpha, horizon, samples) = (0.3, 20.0, 20_000u64);
    let mut acc = 0.0;
    for i in 0..samples {
        let mut rng = path_rng(17, i);
        let path = noise.sample_path_with(horizon, &mut rng).unwrap();
        acc += (alpha * horizon * path.time_average(noise.sigma())).exp();
    }
    let estimate = (acc / samples as f64).ln() / horizon;
    let exact = noise.hf_matrix_eigenvalue(alpha, 1.0).unwrap();
    let closed = -1.0 + (1.0f64 + alpha * alpha).sqrt();
    assert!((exact - closed).abs() < 1e-12);
    assert!((estimate - exact).abs() < 0.01, "{estimate} vs {exact}");
}

#[test]
fn analytic_exit_dominates_feasible_perturbations() {
    let (g, s0, dt) = (2.0, 1.0, 0.01);
    let eta = Segment::zeros(1, 1.0, dt).unwrap();
    let p = LinearExitProblem { measure: example(), g, sigma0: s0, t: 2.0, eta, b: 0.3 };
    let sol = optimal_exit_analytic(&p, dt).unwrap();
    assert!(sol.feasible);
    let n = sol.kernel.len() - 1;
    let mut w = vec![dt; n + 1];
    w[0] *= 0.5;
    w[n] *= 0.5;
    let cost = |u: &[f64]| -> f64 {
        u.iter().zip(&w).map(|(u, w)| if u.abs() >= 1.0 { f64::INFINITY } else { 0.5 * g * (1.0 - (1.0 - u * u).sqrt()) * w }).sum()
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).zip(&w).map(|((a, b), w)| a * b * w).sum() };
    let u_star = sol.control.column(0);
    assert!((cost(&u_star) - sol.value).abs() < 1e-12);
    let kk = dot(&sol.kernel, &sol.kernel);
    let mut rng = path_rng(50, 0);
    for trial in 0..50 {
        let modes: Vec<(f64, f64)> = (0..4).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.5..12.0))).collect();
        let mut d: Vec<f64> = (0..=n).map(|k| modes.iter().map(|(a, f)| a * (f * k as f64 * dt).sin()).sum()).collect();
        let c = dot(&sol.kernel, &d) / kk;
        d.iter_mut().zip(&sol.kernel).for_each(|(d, f)| *d -= c * f);
        let scale = rng.random_range(0.01..0.3);
        let u: Vec<f64> = u_star.iter().zip(&d).map(|(u, d)| u + scale * d).collect();
        let endpoint = s0 * dot(&sol.kernel, &u);
        assert!((endpoint - sol.gap).abs() < 1e-9, "perturbation {trial} moved the endpoint");
        assert!(cost(&u) >= sol.value - 1e-12, "perturbation {trial}: {} < {}", cost(&u), sol.value);
    }
}
