//! End-to-end acceptance checks, one line of output per criterion.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ddeldp::dde_core::{
    fundamental_solution, verify_instability, DelayMeasure, History, InitialHistory, MethodOfSteps, PathGrid, Segment, StepContext,
};
use ddeldp::experiments::{run_exit_experiment, ExitExperiment};
use ddeldp::ldp_rate::{action, action_two_state_closed_form, quasipotential, RateModel, ScalarField};
use ddeldp::linear_fast::{b_eta_apply, b_eta_inverse, optimal_exit_analytic, LinearExitProblem};
use ddeldp::markov_noise::MarkovNoiseModel;
use ddeldp::optim::{lbfgs, LbfgsOptions};
use ddeldp::spectral::{build_spectral_data, project, SpectralData};
use ddeldp::stochastic_sim::{simulate_full_with_noise, simulate_reduced_with_noise, sup_gap, NonlinearField, SdeRunConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn example() -> DelayMeasure {
    DelayMeasure::scalar(1.0, &[(0.0, -1.0), (-1.0, 1.0)]).unwrap()
}

fn example_spectral() -> SpectralData {
    let m = example();
    build_spectral_data(&m, &verify_instability(&m, 5.0, 0.5).unwrap()).unwrap()
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Smooth random segment: a few random Fourier modes.
fn random_segment(rng: &mut ChaCha8Rng, h: f64) -> Segment {
    let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    Segment::from_fn(1, 1.0, h, |t| {
        let v = a[0] + (1..5).map(|k| a[k] * (k as f64 * std::f64::consts::PI * t).cos()).sum::<f64>();
        DVector::from_element(1, v)
    })
    .unwrap()
}

fn criterion_1() -> Outcome {
    let m = example();
    let rep = verify_instability(&m, 5.0, 0.5).unwrap();
    let sd = build_spectral_data(&m, &rep).unwrap();
    // ⟨1, 1⟩ = 1 + Σ_masses ∫_θ^0 dμ ds, by the trapezoid rule on [θ, 0]
    let n = 10_000;
    let pairing: f64 = 1.0
        + m.point_masses()
            .iter()
            .map(|pm| {
                let h = -pm.theta / n as f64;
                let integral: f64 = (0..n).map(|_| h).sum();
                pm.matrix[(0, 0)] * integral
            })
            .sum::<f64>();
    let c_oracle = 1.0 / pairing;
    let inside: Vec<_> = rep.nonzero_roots().filter(|r| r.re >= -5.0 && r.re <= 0.5 && r.im.abs() <= 40.0).collect();
    let max_re = inside.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max);
    let pass = rep.verified && rep.zero_root_simple && max_re < -0.1 && (sd.c - c_oracle).abs() < 1e-6 && (sd.c - 0.5).abs() < 1e-6;
    Outcome {
        pass,
        detail: format!(
            "simple zero root = {}, {} other roots in [-5,0.5]x[-40i,40i], max Re = {max_re:.4}, c = {:.9} (oracle {c_oracle:.9})",
            rep.zero_root_simple,
            inside.len(),
            sd.c
        ),
    }
}

fn criterion_2() -> Outcome {
    let m = example();
    let rep = verify_instability(&m, 5.0, 0.5).unwrap();
    let sd = build_spectral_data(&m, &rep).unwrap();
    let gap = rep.spectral_gap;
    let h = 0.005;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rate = f64::INFINITY;
    let mut worst_drift = 0.0f64;
    for _ in 0..20 {
        let seg = random_segment(&mut rng, h);
        let y = project(&seg, &sd, &m).unwrap().y;
        let traj = MethodOfSteps::new(&m, h).run(InitialHistory::Segment(y), 10.0).unwrap();
        let pts: Vec<(f64, f64)> = (0..=80)
            .map(|k| 2.0 + 0.1 * k as f64)
            .map(|t| (t, project(&traj.window(t, h).unwrap(), &sd, &m).unwrap().y.sup_norm().ln()))
            .collect();
        worst_rate = worst_rate.min(-least_squares_slope(&pts));

        // finer grid for the invariance check: the pairing is exact only
        // for piecewise-linear segments
        let hf = 0.001;
        let seg = Segment::from_fn(1, 1.0, hf, |t| seg.value(t)).unwrap();
        let traj = MethodOfSteps::new(&m, hf).run(InitialHistory::Segment(seg.clone()), 30.0).unwrap();
        let z0 = sd.coordinate(&seg, &m).unwrap();
        for k in 1..=300 {
            let z = sd.coordinate(&traj.window(0.1 * k as f64, hf).unwrap(), &m).unwrap();
            worst_drift = worst_drift.max((z - z0).abs());
        }
    }
    Outcome {
        pass: worst_rate >= 0.9 * gap && worst_drift < 1e-6,
        detail: format!("min fitted rate {worst_rate:.4} vs 0.9*gap = {:.4}; max z drift {worst_drift:.2e}", 0.9 * gap),
    }
}

fn eq10_config(eps: f64, seed: u64) -> SdeRunConfig {
    let measure = example();
    let spectral = example_spectral();
    SdeRunConfig {
        init: Segment::zeros(1, 1.0, 0.01).unwrap(),
        measure,
        spectral,
        drift: NonlinearField::TanhComponents { amplitude: vec![-1.0], gain: vec![1.0] },
        diffusion: NonlinearField::Constant { value: vec![1.0] },
        noise: MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap(),
        epsilon: eps,
        horizon: 1.0,
        dt: 0.01,
        output_step: 0.1,
        seed,
    }
}

fn criterion_3() -> Outcome {
    let mean_gap = |eps: f64| -> f64 {
        (0..20u64)
            .map(|seed| {
                let cfg = eq10_config(eps, seed);
                let noise = cfg.sample_noise().unwrap();
                let full = simulate_full_with_noise(&cfg, &noise).unwrap();
                let reduced = simulate_reduced_with_noise(&cfg, &noise).unwrap();
                sup_gap(&full.z, &reduced)
            })
            .sum::<f64>()
            / 20.0
    };
    let (g1, g2) = (mean_gap(0.1), mean_gap(0.05));
    let ratio = g2 / g1;
    Outcome {
        pass: (0.3..=0.8).contains(&ratio),
        detail: format!("mean sup gap {g1:.3e} at eps=0.1, {g2:.3e} at eps=0.05, ratio {ratio:.3}"),
    }
}

fn criterion_4() -> Outcome {
    let m = RateModel::two_state_free(2.0, 1.0).unwrap();
    let noise = MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap();
    let mut h_err = 0.0f64;
    for k in -20..=20 {
        let a = k as f64 / 10.0;
        h_err = h_err.max((noise.hf_matrix_eigenvalue(a, 1.0).unwrap() - (-1.0 + (1.0 + a * a).sqrt())).abs());
    }
    let mut l_err = 0.0f64;
    let mut dual_err = 0.0f64;
    for k in -95..=95 {
        let b = k as f64 / 100.0;
        let l = m.lagrangian(0.0, b).unwrap();
        l_err = l_err.max((l - (1.0 - (1.0 - b * b).sqrt())).abs());
        // H(α) recovered as sup_β [αβ − L(β)] by golden-section search
        let a = m.optimal_alpha(0.0, b).unwrap().unwrap_or(0.0);
        let f = |x: f64| a * x - m.lagrangian(0.0, x).unwrap();
        let (mut lo, mut hi) = (-0.999_999, 0.999_999);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let (x1, x2) = (hi - r * (hi - lo), lo + r * (hi - lo));
            if f(x1) < f(x2) {
                lo = x1;
            } else {
                hi = x2;
            }
        }
        let h_back = f(0.5 * (lo + hi));
        dual_err = dual_err.max((h_back - m.hamiltonian(0.0, a).unwrap()).abs());
    }
    Outcome {
        pass: h_err < 1e-8 && l_err < 1e-6 && dual_err < 1e-5,
        detail: format!("H_F err {h_err:.2e}, Legendre err {l_err:.2e}, duality round trip {dual_err:.2e}"),
    }
}

fn criterion_5() -> Outcome {
    let m = RateModel::from_fields(
        ScalarField::Linear { slope: -0.5, intercept: 0.1 },
        ScalarField::Tanh { amplitude: 0.3, gain: 1.0, offset: 1.0 },
        MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-0.08..0.08)).collect();
        let phi = PathGrid::scalar_from_fn(0.0, 1.0, 200, |s| {
            a[0] + a[1] * s + a[2] * (3.0 * s).sin() + a[3] * (5.0 * s).cos()
        });
        let s1 = action(&m, &phi).unwrap();
        let s2 = action_two_state_closed_form(&m, &phi).unwrap();
        if !(s1.is_finite() && s2.is_finite()) {
            return Outcome { pass: false, detail: "generated path is not admissible".into() };
        }
        worst = worst.max((s1 - s2).abs() / s2.abs().max(1e-300));
    }
    Outcome { pass: worst < 1e-5, detail: format!("max relative difference {worst:.2e} over 10 paths") }
}

fn criterion_6() -> Outcome {
    let m = RateModel::two_state_free(2.0, 1.0).unwrap();
    let zero = DelayMeasure::scalar(1.0, &[(0.0, 0.0)]).unwrap();
    let analytic = |t: f64, b: f64| {
        let p = LinearExitProblem { measure: zero.clone(), g: 2.0, sigma0: 1.0, t, eta: Segment::zeros(1, 1.0, 0.01).unwrap(), b };
        optimal_exit_analytic(&p, 0.01).unwrap().value
    };
    let closed = |t: f64, b: f64| t * (1.0 - (1.0 - (b / t).powi(2)).sqrt());
    let q = quasipotential(&m, 1.0, 0.0, 0.6, 64).unwrap().value;
    let a = analytic(1.0, 0.6);
    let mut ok = (q - 0.2).abs() <= 0.002 && (a - 0.2).abs() <= 0.002 && (closed(1.0, 0.6) - 0.2).abs() < 1e-12;
    let mut worst_beat = f64::NEG_INFINITY;
    for &(t, b) in &[(1.0, 0.6), (0.5, 0.3), (2.0, -0.9), (1.5, 1.2), (0.8, 0.1)] {
        let res = quasipotential(&m, t, 0.0, b, 64).unwrap();
        let a = analytic(t, b);
        ok &= (res.value - a).abs() <= 0.01 * a;
        // the transcription may stop within its endpoint tolerance; compare
        // against the analytic value for the point it actually reached
        let reached = *res.control.phi.last().unwrap();
        let a_reached = analytic(t, reached);
        worst_beat = worst_beat.max(a_reached - res.value);
        ok &= res.value >= a_reached - 1e-9;
    }
    Outcome { pass: ok, detail: format!("V(1,0,0.6): transcription {q:.6}, analytic {a:.6}; max (analytic - transcription) {worst_beat:.2e}") }
}

/// Direct transcription over piecewise-constant `u` with `|u| < 1`: the
/// endpoint is linear in `u` through step responses of the delay equation,
/// and the constraint is enforced by an augmented Lagrangian.
fn transcription_oracle(measure: &DelayMeasure, g: f64, s0: f64, t: f64, gap: f64, cells: usize) -> f64 {
    let dt = 1e-3;
    let unit = |_: &StepContext, _: &dyn History| DVector::from_element(1, 1.0);
    let step = MethodOfSteps::new(measure, dt)
        .with_forcing(&unit)
        .run(InitialHistory::Segment(Segment::zeros(1, measure.max_delay(), dt).unwrap()), t)
        .unwrap();
    let h = t / cells as f64;
    let response = |tau: f64| step.value_at(tau.max(0.0))[0];
    let r: Vec<f64> = (0..cells).map(|k| s0 * (response(t - k as f64 * h) - response(t - (k + 1) as f64 * h))).collect();
    let mut w = vec![0.0; cells];
    let mut lambda = 0.0;
    let mut mu = 10.0;
    for _ in 0..30 {
        let f = |x: &[f64], grad: &mut [f64]| -> f64 {
            let c: f64 = x.iter().zip(&r).map(|(w, r)| w.sin() * r).sum::<f64>() - gap;
            let mut total = lambda * c + 0.5 * mu * c * c;
            for k in 0..cells {
                let (s, co) = x[k].sin_cos();
                total += h * 0.5 * g * (1.0 - co.abs());
                grad[k] = h * 0.5 * g * s * co.signum() + (lambda + mu * c) * r[k] * co;
            }
            total
        };
        let res = lbfgs(f, w.clone(), LbfgsOptions { max_iterations: 5000, grad_tol: 1e-12, ..LbfgsOptions::default() });
        w = res.x;
        let c: f64 = w.iter().zip(&r).map(|(w, r)| w.sin() * r).sum::<f64>() - gap;
        lambda += mu * c;
        mu = (mu * 2.0).min(1e6);
        if c.abs() < 1e-11 {
            break;
        }
    }
    w.iter().map(|w| h * 0.5 * g * (1.0 - w.cos().abs())).sum()
}

fn criterion_7() -> Outcome {
    let m = example();
    let mut ok = true;
    let mut worst_rel = 0.0f64;
    let mut worst_stat = 0.0f64;
    let mut worst_end = 0.0f64;
    let mut worst_dde = 0.0f64;
    for &(t, b) in &[(1.0, 0.3), (2.0, 0.5), (3.0, 0.2), (3.0, -0.8), (4.0, 1.0)] {
        let p = LinearExitProblem { measure: m.clone(), g: 2.0, sigma0: 1.0, t, eta: Segment::zeros(1, 1.0, 0.001).unwrap(), b };
        let sol = optimal_exit_analytic(&p, 0.001).unwrap();
        ok &= sol.feasible;
        let oracle = transcription_oracle(&m, 2.0, 1.0, t, sol.gap, 200);
        worst_rel = worst_rel.max((sol.value - oracle).abs() / oracle);
        // the analytic value must not exceed a feasible competitor
        ok &= sol.value <= oracle * (1.0 + 1e-6);
        // stationarity recomputed from the returned control
        let f = fundamental_solution(&m, t, 0.001).unwrap();
        let n = sol.control.len() - 1;
        for k in 0..=n {
            let u = sol.control.row(k)[0];
            let fk = f.interpolate(0, t - k as f64 * 0.001);
            worst_stat = worst_stat.max((u / (1.0 - u * u).sqrt() + sol.rho * fk).abs());
        }
        worst_end = worst_end.max(sol.endpoint_error);
        // drive the delay equation with the control
        let ctrl = &sol.control;
        let forcing = |ctx: &StepContext, _: &dyn History| DVector::from_element(1, ctrl.interpolate(0, ctx.t));
        let traj = MethodOfSteps::new(&m, 0.001)
            .with_forcing(&forcing)
            .run(InitialHistory::Segment(p.eta.clone()), t)
            .unwrap();
        worst_dde = worst_dde.max((traj.final_state()[0] - b).abs());
    }
    ok &= worst_rel <= 0.01 && worst_stat <= 1e-8 && worst_end <= 1e-6 && worst_dde <= 1e-4;
    Outcome {
        pass: ok,
        detail: format!(
            "max rel diff vs transcription {worst_rel:.2e}, stationarity {worst_stat:.2e}, endpoint {worst_end:.2e} (driven DDE {worst_dde:.2e})"
        ),
    }
}

fn criterion_8() -> Outcome {
    let measure = example();
    let spectral = example_spectral();
    let run = SdeRunConfig {
        init: Segment::zeros(1, 1.0, 0.1).unwrap(),
        measure,
        spectral,
        drift: NonlinearField::zero(1),
        // Ψ̂ = 0.5, so F ≡ 2 makes σ₀Ψ̂F ≡ 1
        diffusion: NonlinearField::Constant { value: vec![2.0] },
        noise: MarkovNoiseModel::two_state_symmetric(2.0, 1.0).unwrap(),
        epsilon: 0.1,
        horizon: 1.0,
        dt: 0.1,
        output_step: 0.1,
        seed: 0,
    };
    let exp = ExitExperiment {
        run,
        a_lo: -0.6,
        a_hi: 0.6,
        horizon: 1.0,
        epsilons: vec![0.2, 0.1, 0.05],
        samples: 100_000,
        seed: 8,
        full_samples: 0,
        tau_points: 10,
        grid_size: 64,
    };
    let fit = run_exit_experiment(&exp).unwrap();
    let v_star = fit.v_star.unwrap_or(f64::INFINITY);
    let vals: Vec<f64> = fit.estimates.iter().map(|e| e.eps_ln_p.unwrap_or(f64::INFINITY)).collect();
    let last = vals[2];
    let monotone = fit.is_monotone() && fit.estimates.iter().all(|e| e.eps_ln_p.is_some());
    Outcome {
        pass: (v_star - 0.2).abs() < 2e-3 && (last - v_star).abs() <= 0.25 * v_star && monotone,
        detail: format!("V* = {v_star:.4}; -eps ln p: {:.4} (0.2), {:.4} (0.1), {:.4} (0.05)", vals[0], vals[1], vals[2]),
    }
}

fn criterion_9() -> Outcome {
    let m = example();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = 2.0;
    let n = 200;
    let lip = (m.total_variation() * t).exp();
    let mut round = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let random_psi = |rng: &mut ChaCha8Rng| {
        // piecewise linear with 10 random knots, resampled on the fine grid
        let knots: Vec<f64> = (0..=10).map(|_| rng.random_range(-1.0..1.0)).collect();
        PathGrid::scalar_from_fn(0.0, t, n, |s| {
            let x = s / t * 10.0;
            let k = (x.floor() as usize).min(9);
            knots[k] + (x - k as f64) * (knots[k + 1] - knots[k])
        })
    };
    for _ in 0..50 {
        let eta = random_segment(&mut rng, 0.01);
        let p1 = random_psi(&mut rng);
        let p2 = random_psi(&mut rng);
        let v1 = b_eta_apply(&m, &eta, &p1).unwrap();
        let v2 = b_eta_apply(&m, &eta, &p2).unwrap();
        round = round.max(b_eta_inverse(&m, &eta, &v1).unwrap().sup_distance(&p1));
        worst_ratio = worst_ratio.max(v1.sup_distance(&v2) / (lip * p1.sup_distance(&p2)));
    }
    Outcome {
        pass: round < 1e-8 && worst_ratio <= 1.0,
        detail: format!("round trip err {round:.2e}; max ||Bψ1-Bψ2|| / (e^(||L0|| t) ||ψ1-ψ2||) = {worst_ratio:.3}"),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("spectral construction", criterion_1, Duration::from_secs(5)),
        ("decay and invariance", criterion_2, Duration::from_secs(30)),
        ("exponential equivalence", criterion_3, Duration::from_secs(120)),
        ("hamiltonian and lagrangian", criterion_4, Duration::from_secs(10)),
        ("action dual consistency", criterion_5, Duration::from_secs(10)),
        ("quasipotential oracle", criterion_6, Duration::from_secs(60)),
        ("analytic optimal control", criterion_7, Duration::from_secs(120)),
        ("monte carlo exit rate", criterion_8, Duration::from_secs(600)),
        ("B_eta round trip", criterion_9, Duration::from_secs(10)),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= *budget;
        failed += usize::from(!pass);
        println!(
            "criterion {}: {} {name}: {} [{:.2}s of {}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
