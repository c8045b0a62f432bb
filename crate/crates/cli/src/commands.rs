use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use ddeldp::dde_core::{verify_instability_with, CharacteristicRoot, DecayConstants, PathGrid, RootOptions};
use ddeldp::experiments::{run_exit_experiment, write_jsonl, write_summary_csv};
use ddeldp::ldp_rate::{action as path_action, quasipotential_with, QuasipotentialOptions};
use ddeldp::linear_fast::optimal_exit_analytic;
use ddeldp::spectral::{build_spectral_data, normalization_from_derivative};
use ddeldp::stochastic_sim::{simulate_full_with_noise, simulate_reduced_with_noise, sup_gap};

use crate::config::{
    load, ActionConfig, Envelope, LinearExitConfig, McExitConfig, QuasipotentialConfig, SimulateConfig, SystemConfig,
};
use crate::error::CliError;
use crate::GlobalArgs;

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn write_json<T: Serialize>(out: &Path, name: &str, command: &str, body: T) -> Result<(), CliError> {
    let doc = Envelope::new(command, body);
    let mut f = BufWriter::new(File::create(out.join(name))?);
    serde_json::to_writer_pretty(&mut f, &doc)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn write_path(out: &Path, name: &str, path: &PathGrid) -> Result<(), CliError> {
    path.write_csv(BufWriter::new(File::create(out.join(name))?))?;
    Ok(())
}

fn write_rows(out: &Path, name: &str, header: &str, rows: impl Iterator<Item = String>) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(out.join(name))?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

fn root_options(g: &GlobalArgs) -> RootOptions {
    let mut opts = RootOptions::default();
    if let Some(t) = g.tol {
        opts.tol = t;
    }
    opts
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RootsReport {
    pub verified: bool,
    pub zero_root_simple: bool,
    pub spectral_gap: f64,
    pub violation: Option<String>,
    pub roots: Vec<CharacteristicRoot>,
}

pub fn roots(config: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load::<SystemConfig>(config)?;
    let measure = cfg.doc.measure.resolve(&cfg.base)?;
    let rep = verify_instability_with(&measure, cfg.doc.search_depth, cfg.doc.margin, root_options(g))?;
    let r = rep.search_region;
    println!("search region: Re in [{}, {}], Im in [{}, {}]", r.re_min, r.re_max, r.im_min, r.im_max);
    for root in &rep.roots {
        println!("  {:+.10} {:+.10}i  multiplicity {}", root.re, root.im, root.multiplicity);
    }
    write_rows(
        &g.out,
        "roots.csv",
        "re,im,multiplicity,residual",
        rep.roots.iter().map(|r| format!("{:?},{:?},{},{:?}", r.re, r.im, r.multiplicity, r.residual)),
    )?;
    let report = RootsReport {
        verified: rep.verified,
        zero_root_simple: rep.zero_root_simple,
        spectral_gap: rep.spectral_gap,
        violation: rep.violation.clone(),
        roots: rep.roots.clone(),
    };
    write_json(&g.out, "roots.json", "roots", &report)?;
    match rep.violation {
        None => {
            println!("instability assumption holds; spectral gap {:.6}", rep.spectral_gap);
            Ok(())
        }
        Some(v) => {
            println!("FAIL: {v}");
            Err(CliError::Validation(v))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub c: f64,
    pub c_identity: f64,
    pub phi0: Vec<f64>,
    pub psi_hat: Vec<f64>,
    pub spectral_gap: f64,
    pub decay_constants: Option<DecayConstants>,
}

pub fn spectral(config: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load::<SystemConfig>(config)?;
    let measure = cfg.doc.measure.resolve(&cfg.base)?;
    let rep = verify_instability_with(&measure, cfg.doc.search_depth, cfg.doc.margin, root_options(g))?;
    let sd = build_spectral_data(&measure, &rep)?;
    let report = SpectralReport {
        c: sd.c,
        c_identity: normalization_from_derivative(&measure, &sd),
        phi0: sd.phi0.iter().copied().collect(),
        psi_hat: sd.psi_hat.iter().copied().collect(),
        spectral_gap: rep.spectral_gap,
        decay_constants: rep.decay_constants,
    };
    println!("c = {:.10}", report.c);
    println!("phi0 = {:?}", report.phi0);
    println!("psi_hat = {:?}", report.psi_hat);
    write_json(&g.out, "spectral.json", "spectral", &report)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidateReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub spectral_gap: f64,
    pub c: Option<f64>,
}

pub fn validate(config: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load::<SystemConfig>(config)?;
    let measure = cfg.doc.measure.resolve(&cfg.base)?;
    let rep = verify_instability_with(&measure, cfg.doc.search_depth, cfg.doc.margin, root_options(g))?;
    let mut checks = Vec::new();
    checks.push(Check {
        name: "zero root".into(),
        passed: rep.zero_root_simple,
        detail: if rep.zero_root_simple {
            "simple zero root".into()
        } else if rep.zero_root_found {
            "zero root not simple".into()
        } else {
            "no zero root".into()
        },
    });
    checks.push(Check {
        name: "spectral gap".into(),
        passed: rep.spectral_gap > 0.0,
        detail: format!("all nonzero roots in the search region have Re λ ≤ {:.6}", -rep.spectral_gap),
    });
    let mut c = None;
    if rep.verified {
        let sd = build_spectral_data(&measure, &rep)?;
        let identity = normalization_from_derivative(&measure, &sd);
        let tol = g.tol.unwrap_or(1e-6);
        let err = (sd.c - identity).abs();
        checks.push(Check {
            name: "normalization".into(),
            passed: err <= tol * identity.abs().max(1.0),
            detail: format!("c = {:.10} (identity {:.10}, difference {err:.2e})", sd.c, identity),
        });
        c = Some(sd.c);
    }
    if let Some(noise) = &cfg.doc.noise {
        // mean-zero and generator checks run during loading
        let detail = match noise.resolve(&cfg.base) {
            Ok(n) => Ok(format!("{} states, stationary law {:?}", n.num_states(), n.stationary())),
            Err(e) => Err(e.to_string()),
        };
        checks.push(Check {
            name: "noise".into(),
            passed: detail.is_ok(),
            detail: detail.unwrap_or_else(|e| e),
        });
    }
    let passed = checks.iter().all(|c| c.passed);
    for ch in &checks {
        println!("{} {}: {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
    }
    println!("spectral gap: {:.6}", rep.spectral_gap);
    let failures: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.detail.clone()).collect();
    write_json(&g.out, "validate.json", "validate", ValidateReport { passed, checks, spectral_gap: rep.spectral_gap, c })?;
    if passed {
        println!("validation passed");
        Ok(())
    } else {
        Err(CliError::Validation(failures.join("; ")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateReport {
    pub epsilon: f64,
    pub seed: u64,
    pub z0: f64,
    pub num_jumps: usize,
    pub final_reduced: f64,
    pub final_z: Option<f64>,
    pub sup_gap: Option<f64>,
}

pub fn simulate(config: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load::<SimulateConfig>(config)?;
    let mut run = cfg.doc.build(&cfg.base)?;
    if let Some(s) = g.seed {
        run.seed = s;
    }
    let noise = run.sample_noise()?;
    let reduced = simulate_reduced_with_noise(&run, &noise)?;
    noise.write_csv(BufWriter::new(File::create(g.out.join("noise.csv"))?))?;
    write_path(&g.out, "reduced.csv", &reduced)?;
    let mut report = SimulateReport {
        epsilon: run.epsilon,
        seed: run.seed,
        z0: run.initial_coordinate()?,
        num_jumps: noise.num_jumps(),
        final_reduced: reduced.last_row()[0],
        final_z: None,
        sup_gap: None,
    };
    if cfg.doc.full {
        let full = simulate_full_with_noise(&run, &noise)?;
        write_path(&g.out, "z.csv", &full.z)?;
        write_path(&g.out, "y_norm.csv", &full.y_norm)?;
        write_path(&g.out, "x.csv", &full.x)?;
        report.final_z = Some(full.z.last_row()[0]);
        report.sup_gap = Some(sup_gap(&full.z, &reduced));
    }
    println!("{} noise jumps, reduced z(T) = {:.6}", report.num_jumps, report.final_reduced);
    if let (Some(z), Some(gap)) = (report.final_z, report.sup_gap) {
        println!("full z(T) = {z:.6}, sup |z - reduced| = {gap:.3e}");
    }
    write_json(&g.out, "simulate.json", "simulate", &report)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActionReport {
    /// `None` means `+∞`.
    pub action: Option<f64>,
    pub infinite: bool,
}

pub fn action(config: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load::<ActionConfig>(config)?;
    let model = cfg.doc.model.build(&cfg.base)?;
    let phi = cfg.doc.read_path(&cfg.base)?;
    let s = path_action(&model, &phi)?;
    if s.is_finite() {
        println!("action = {s:.10}");
    } else {
        println!("action = infinite");
    }
    write_json(&g.out, "action.json", "action", ActionReport { action: finite(s), infinite: !s.is_finite() })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuasipotentialReport {
    pub value: Option<f64>,
    pub feasible: bool,
    pub endpoint_residual: f64,
    pub reach: (f64, f64),
}

pub fn quasipotential(config: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load::<QuasipotentialConfig>(config)?;
    let d = &cfg.doc;
    let model = d.model.build(&cfg.base)?;
    let mut opts = QuasipotentialOptions::default();
    if let Some(t) = g.tol {
        opts.endpoint_tol = t;
    }
    let res = quasipotential_with(&model, d.t, d.a, d.b, d.grid_size, opts)?;
    let c = &res.control;
    write_rows(
        &g.out,
        "control.csv",
        "t,u,phi",
        (0..c.times.len()).map(|k| {
            let u = c.u.get(k).map_or(String::new(), |u| format!("{u:?}"));
            format!("{:?},{u},{:?}", c.times[k], c.phi[k])
        }),
    )?;
    let report = QuasipotentialReport {
        value: finite(res.value),
        feasible: res.feasible,
        endpoint_residual: res.endpoint_residual,
        reach: res.reach,
    };
    write_json(&g.out, "quasipotential.json", "quasipotential", &report)?;
    if res.feasible {
        println!("V({}, {}, {}) = {:.10}", d.t, d.a, d.b, res.value);
        Ok(())
    } else {
        println!("V({}, {}, {}) = infinite: target outside [{}, {}]", d.t, d.a, d.b, res.reach.0, res.reach.1);
        Err(CliError::Infeasible(format!("b = {} is not reachable from a = {} in time {}", d.b, d.a, d.t)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LinearExitReport {
    #[serde(rename = "V")]
    pub v: Option<f64>,
    pub rho: Option<f64>,
    pub feasible: bool,
    pub gap: f64,
    pub reach: f64,
    pub endpoint_error: f64,
    pub stationarity_residual: Option<f64>,
}

pub fn linear_exit(config: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load::<LinearExitConfig>(config)?;
    let problem = cfg.doc.build(&cfg.base)?;
    let sol = optimal_exit_analytic(&problem, cfg.doc.dt)?;
    write_path(&g.out, "u.csv", &sol.control)?;
    let report = LinearExitReport {
        v: finite(sol.value),
        rho: finite(sol.rho),
        feasible: sol.feasible,
        gap: sol.gap,
        reach: sol.reach,
        endpoint_error: sol.endpoint_error,
        stationarity_residual: finite(sol.stationarity_residual),
    };
    write_json(&g.out, "linear_exit.json", "linear-exit", &report)?;
    if sol.feasible {
        println!("V = {:.10}, rho = {:.10}", sol.value, sol.rho);
        Ok(())
    } else {
        println!("infeasible: |b - (T(t)eta)(0)| = {:.6} exceeds reach {:.6}", sol.gap.abs(), sol.reach);
        Err(CliError::Infeasible("target outside the reachable set".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct McExitReport {
    pub v_star: Option<f64>,
    pub intercept: Option<f64>,
    pub slope: Option<f64>,
    pub monotone: bool,
}

pub fn mc_exit(config: &Path, g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load::<McExitConfig>(config)?;
    let mut exp = cfg.doc.build(&cfg.base)?;
    if let Some(s) = g.seed {
        exp.seed = s;
    }
    let fit = run_exit_experiment(&exp)?;
    write_jsonl(&fit, BufWriter::new(File::create(g.out.join("mc_exit.jsonl"))?))?;
    write_summary_csv(&fit, BufWriter::new(File::create(g.out.join("mc_exit.csv"))?))?;
    for e in &fit.estimates {
        let rate = e.eps_ln_p.map_or("inf".to_string(), |v| format!("{v:.5}"));
        println!(
            "eps = {:<6} exits {:>8}/{:<8} p = {:.3e} [{:.3e}, {:.3e}]  -eps ln p = {rate}",
            e.epsilon, e.exits, e.samples, e.p_hat, e.ci_lo, e.ci_hi
        );
    }
    match fit.v_star {
        Some(v) => println!("V* = {v:.6}"),
        None => println!("V* = infinite"),
    }
    let report = McExitReport { v_star: fit.v_star, intercept: fit.intercept, slope: fit.slope, monotone: fit.is_monotone() };
    write_json(&g.out, "mc_exit.json", "mc-exit", &report)
}
