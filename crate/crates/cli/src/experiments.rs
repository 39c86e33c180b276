//! The experiment drivers behind each subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use wfr_core::cost::CostSpec;
use wfr_core::flow::{prox_step_with, run_flow_with, splitting_flow, wfr_distance, FlowTrajectory};
use wfr_core::geodesic::{geodesic_density, potential_from_duals};
use wfr_core::measure::{discretize_indicator, read_density_csv, write_density_csv, DiscreteMeasure};
use wfr_core::solver::{scaling_solve_with, MarginalFunctional, SolverConfig};
use wfr_core::sphere::SphereSolution;
use wfr_core::{Grid, WfrError};

use crate::config::{Experiment, RunConfig, ShapeSpec};
use crate::manifest::Manifest;
use crate::pgm::{read_pgm_mask, write_pgm};
use crate::CliError;

/// A solve counts as failed "beyond tolerance" (exit code 4) when its final
/// fixed-point residual exceeds this multiple of the stopping tolerance;
/// below it, unconverged steps are recorded in summary.csv but the run is
/// still usable.
const RESIDUAL_FAIL_FACTOR: f64 = 1e4;

pub fn run_experiment(exp: Experiment, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(WfrError::Io)?;
    match exp {
        Experiment::Flow1d | Experiment::Flow2d | Experiment::SplitFlow => cmd_flow(exp, cfg),
        Experiment::SphereTest => cmd_sphere_test(exp, cfg),
        Experiment::EpsStudy => cmd_eps_study(exp, cfg),
        Experiment::Distance => cmd_distance(exp, cfg),
        Experiment::Geodesic => cmd_geodesic(exp, cfg),
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    Path::new(&cfg.out_dir).join(name)
}

fn build_grid(cfg: &RunConfig) -> Result<Arc<Grid>, CliError> {
    match cfg.obstacles.kind.as_str() {
        "none" => Ok(Grid::uniform(cfg.dim, cfg.n, None)?),
        "slit" => {
            if cfg.dim != 2 {
                return Err(CliError::Config("slit obstacles need dim = 2".into()));
            }
            // vertical wall with a central gap
            Ok(Grid::uniform(
                cfg.dim,
                cfg.n,
                Some(&|c: &[f64; 2]| {
                    (0.45..=0.55).contains(&c[0]) && !(0.40..=0.60).contains(&c[1])
                }),
            )?)
        }
        "pgm" => {
            let (n, active) = read_pgm_mask(Path::new(&cfg.obstacles.path))?;
            if n != cfg.n {
                return Err(CliError::Config(format!(
                    "obstacle mask is {n}x{n} but n = {}",
                    cfg.n
                )));
            }
            Ok(Grid::uniform_masked(cfg.dim, cfg.n, &active)?)
        }
        other => Err(CliError::Config(format!("unknown obstacle kind {other:?}"))),
    }
}

fn shape_region(shape: &ShapeSpec, dim: usize) -> Result<Box<dyn Fn(&[f64; 2]) -> bool>, CliError> {
    match shape.kind.as_str() {
        "ball" => {
            let mut c = [0.5, 0.5];
            for (k, &v) in shape.center.iter().take(2).enumerate() {
                c[k] = v;
            }
            let r = shape.radius;
            Ok(Box::new(move |p: &[f64; 2]| wfr_core::grid::point_distance(dim, p, &c) <= r))
        }
        "interval" => {
            let (a, b) = (shape.a, shape.b);
            Ok(Box::new(move |p: &[f64; 2]| (a..=b).contains(&p[0])))
        }
        "box" => {
            let lo = [
                shape.min.first().copied().unwrap_or(0.0),
                shape.min.get(1).copied().unwrap_or(0.0),
            ];
            let hi = [
                shape.max.first().copied().unwrap_or(1.0),
                shape.max.get(1).copied().unwrap_or(1.0),
            ];
            Ok(Box::new(move |p: &[f64; 2]| {
                (lo[0]..=hi[0]).contains(&p[0]) && (dim == 1 || (lo[1]..=hi[1]).contains(&p[1]))
            }))
        }
        "full" => Ok(Box::new(|_: &[f64; 2]| true)),
        other => Err(CliError::Config(format!("unknown shape kind {other:?}"))),
    }
}

/// Sum of the configured shapes (each scaled by its density), capped at 1.
fn build_density(grid: &Arc<Grid>, shapes: &[ShapeSpec]) -> Result<DiscreteMeasure, CliError> {
    let mut density = vec![0.0; grid.len()];
    for shape in shapes {
        if shape.kind == "csv" {
            let vals = read_density_csv(Path::new(&shape.path), grid)?;
            for (d, v) in density.iter_mut().zip(vals) {
                *d += v * shape.density;
            }
        } else {
            let region = shape_region(shape, grid.dim())?;
            let part = discretize_indicator(grid, |p| region(p));
            for (d, v) in density.iter_mut().zip(part.density()) {
                *d += v * shape.density;
            }
        }
    }
    for d in &mut density {
        *d = d.min(1.0);
    }
    Ok(DiscreteMeasure::new(grid.clone(), density)?)
}

fn solver_config(cfg: &RunConfig, trace_name: Option<&str>) -> SolverConfig {
    SolverConfig {
        trace_path: match (cfg.trace, trace_name) {
            (true, Some(name)) => Some(out_path(cfg, name)),
            _ => None,
        },
        ..Default::default()
    }
}

fn write_frames(cfg: &RunConfig, grid: &Grid, traj: &FlowTrajectory) -> Result<(), CliError> {
    for k in 0..traj.densities.len() {
        let last = k + 1 == traj.densities.len();
        if k % cfg.record_every != 0 && !last {
            continue;
        }
        let density = traj.densities[k].density();
        write_density_csv(&out_path(cfg, &format!("density_t{k}.csv")), grid, density)?;
        if cfg.dim == 2 {
            write_pgm(&out_path(cfg, &format!("density_t{k}.pgm")), grid, density, 0.0, 1.0)?;
        }
        if k > 0 {
            let pressure = &traj.pressures[k - 1];
            write_density_csv(&out_path(cfg, &format!("pressure_t{k}.csv")), grid, pressure)?;
            if cfg.dim == 2 {
                write_pgm(
                    &out_path(cfg, &format!("pressure_t{k}.pgm")),
                    grid,
                    pressure,
                    0.0,
                    cfg.lambda,
                )?;
            }
        }
    }
    traj.write_summary_csv(&out_path(cfg, "summary.csv"))?;
    Ok(())
}

fn check_convergence(cfg: &RunConfig, traj: &FlowTrajectory) -> Result<(), CliError> {
    let worst = traj.residuals.iter().cloned().fold(0.0f64, f64::max);
    if worst > RESIDUAL_FAIL_FACTOR * cfg.stop_tol {
        return Err(CliError::NonConvergence(format!(
            "worst step residual {worst:.3e} exceeds {RESIDUAL_FAIL_FACTOR} * stop_tol"
        )));
    }
    Ok(())
}

fn cmd_flow(exp: Experiment, cfg: &RunConfig) -> Result<(), CliError> {
    let grid = build_grid(cfg)?;
    let rho0 = build_density(&grid, &cfg.initial)?;
    let params = cfg.flow_params();
    let mut manifest = Manifest::new(exp, cfg);
    let t0 = Instant::now();
    let traj = if exp == Experiment::SplitFlow {
        splitting_flow(&rho0, cfg.kappa, &params, cfg.t_final)?
    } else {
        let mut last = t0;
        run_flow_with(
            &rho0,
            &params,
            cfg.t_final,
            &solver_config(cfg, Some("trace.csv")),
            &mut |_, _| {
                let now = Instant::now();
                manifest.push_step_ms(now.duration_since(last).as_secs_f64() * 1e3);
                last = now;
            },
        )?
    };
    write_frames(cfg, &grid, &traj)?;
    manifest.finish(t0.elapsed(), &out_path(cfg, "manifest.json"))?;
    check_convergence(cfg, &traj)
}

fn cmd_sphere_test(exp: Experiment, cfg: &RunConfig) -> Result<(), CliError> {
    let sol = SphereSolution::new(cfg.dim, cfg.lambda, cfg.r0)?;
    sol.write_reference_csv(&out_path(cfg, "sphere_ref.csv"), cfg.t_final, 100)?;
    let r_exact = sol.radius_at(cfg.t_final)?;
    let center = if cfg.dim == 1 { [0.5, 0.0] } else { [0.5, 0.5] };

    let mut manifest = Manifest::new(exp, cfg);
    let t0 = Instant::now();
    let runs: Vec<Result<(f64, f64, f64, f64), CliError>> = cfg
        .sweep
        .taus
        .par_iter()
        .map(|&tau| {
            let grid = build_grid(cfg)?;
            let rho0 = wfr_core::measure::ball_indicator(&grid, center, cfg.r0);
            let mut params = cfg.flow_params();
            params.tau = tau;
            params.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let traj =
                run_flow_with(&rho0, &params, cfg.t_final, &SolverConfig::default(), &mut |_, _| {})?;
            let mass = traj.final_density().mass();
            let r_num = if cfg.dim == 1 { mass / 2.0 } else { (mass / std::f64::consts::PI).sqrt() };
            let pressure = traj.final_pressure().expect("at least one step");
            let mut sup_err = 0.0f64;
            let mut sup_ref = 0.0f64;
            for (i, c) in grid.centers().iter().enumerate() {
                let s = wfr_core::grid::point_distance(cfg.dim, c, &center);
                let p_th = sol.pressure_profile(cfg.t_final, s)?;
                sup_err = sup_err.max((pressure[i] - p_th).abs());
                sup_ref = sup_ref.max(p_th);
            }
            let worst = traj.residuals.iter().cloned().fold(0.0f64, f64::max);
            Ok((r_num, (r_num - r_exact).abs() / r_exact, sup_err / sup_ref, worst))
        })
        .collect();

    let mut rows = Vec::new();
    let mut worst_residual = 0.0f64;
    for (tau, run) in cfg.sweep.taus.iter().zip(runs) {
        let (_, err_r, err_p, worst) = run?;
        worst_residual = worst_residual.max(worst);
        rows.push((*tau, err_r, err_p));
    }
    // tau -> 0 extrapolation from the two smallest time steps
    if rows.len() >= 2 {
        let (t1, e1, p1) = rows[rows.len() - 2];
        let (t2, e2, p2) = rows[rows.len() - 1];
        if t1 > t2 {
            let f = t1 / (t1 - t2);
            rows.push((0.0, (e2 + (e2 - e1) * (t2 / (t1 - t2))).abs(), (p2 + (p2 - p1) * (t2 / (t1 - t2))).abs()));
            let _ = f;
        }
    }
    let mut out = String::from("tau,rel_err_radius,rel_err_pressure\n");
    for (tau, er, ep) in &rows {
        out.push_str(&format!("{tau:.16e},{er:.16e},{ep:.16e}\n"));
    }
    std::fs::write(out_path(cfg, "convergence.csv"), out).map_err(WfrError::Io)?;
    manifest.finish(t0.elapsed(), &out_path(cfg, "manifest.json"))?;
    if worst_residual > RESIDUAL_FAIL_FACTOR * cfg.stop_tol {
        return Err(CliError::NonConvergence(format!(
            "worst step residual {worst_residual:.3e}"
        )));
    }
    Ok(())
}

fn cmd_eps_study(exp: Experiment, cfg: &RunConfig) -> Result<(), CliError> {
    let mut manifest = Manifest::new(exp, cfg);
    let t0 = Instant::now();

    let one_step = |n: usize, eps: f64| -> Result<(Arc<Grid>, DiscreteMeasure, Vec<f64>), CliError> {
        let grid = Grid::uniform(1, n, None)?;
        let rho0 = build_density(&grid, &cfg.initial)?;
        let mut params = cfg.flow_params();
        params.eps = eps;
        params.eps_schedule = wfr_core::params::default_eps_schedule(eps);
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let step = prox_step_with(&rho0, &params, &SolverConfig::default())?;
        Ok((grid, step.rho_next, step.pressure))
    };

    let (ref_grid, ref_rho, ref_p) = one_step(cfg.sweep.ref_n, cfg.sweep.ref_eps)?;
    let ref_radius = ref_rho.mass() / 2.0;
    let sample_ref_pressure = |x: f64| -> f64 {
        let idx = ((x * cfg.sweep.ref_n as f64) as usize).min(cfg.sweep.ref_n - 1);
        ref_grid.active_index(idx).map_or(0.0, |a| ref_p[a])
    };

    let cases: Vec<(usize, f64)> = cfg
        .sweep
        .ns
        .iter()
        .flat_map(|&n| cfg.sweep.epss.iter().map(move |&e| (n, e)))
        .collect();
    let rows: Vec<Result<String, CliError>> = cases
        .par_iter()
        .map(|&(n, eps)| {
            let (grid, rho, p) = one_step(n, eps)?;
            let radius_err = (rho.mass() / 2.0 - ref_radius).abs();
            let mut p_err = 0.0f64;
            for (i, c) in grid.centers().iter().enumerate() {
                p_err = p_err.max((p[i] - sample_ref_pressure(c[0])).abs());
            }
            let h = 1.0 / n as f64;
            let frontier: f64 = rho
                .density()
                .iter()
                .filter(|&&b| b > 0.05 && b < 0.95)
                .count() as f64
                * h;
            Ok(format!("{n},{eps:.16e},{radius_err:.16e},{p_err:.16e},{frontier:.16e}\n"))
        })
        .collect();
    let mut out = String::from("n,eps,radius_err,pressure_err,frontier_width\n");
    for r in rows {
        out.push_str(&r?);
    }
    std::fs::write(out_path(cfg, "epsstudy.csv"), out).map_err(WfrError::Io)?;
    manifest.finish(t0.elapsed(), &out_path(cfg, "manifest.json"))?;
    Ok(())
}

fn cmd_distance(exp: Experiment, cfg: &RunConfig) -> Result<(), CliError> {
    let grid = build_grid(cfg)?;
    let mu = build_density(&grid, &cfg.initial)?;
    let nu = build_density(&grid, &cfg.second)?;
    let mut manifest = Manifest::new(exp, cfg);
    let t0 = Instant::now();
    let d = wfr_distance(&mu, &nu, cfg.eps)?;
    println!("transport-growth distance: {d:.12}");
    let mut out = String::from("eps,d2,d,mass_mu,mass_nu\n");
    out.push_str(&format!(
        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
        cfg.eps,
        d * d,
        d,
        mu.mass(),
        nu.mass()
    ));
    std::fs::write(out_path(cfg, "distance.csv"), out).map_err(WfrError::Io)?;
    manifest.finish(t0.elapsed(), &out_path(cfg, "manifest.json"))?;
    Ok(())
}

fn cmd_geodesic(exp: Experiment, cfg: &RunConfig) -> Result<(), CliError> {
    let grid = build_grid(cfg)?;
    let mu = build_density(&grid, &cfg.initial)?;
    let nu = build_density(&grid, &cfg.second)?;
    let mut manifest = Manifest::new(exp, cfg);
    let t0 = Instant::now();
    let params = cfg.flow_params();
    let f1 = MarginalFunctional::KlFixed(mu.density().to_vec());
    let f2 = MarginalFunctional::KlFixed(nu.density().to_vec());
    let r = scaling_solve_with(
        &f1,
        &grid,
        &f2,
        &grid,
        CostSpec::LogCos,
        &params,
        &solver_config(cfg, Some("trace.csv")),
    )?;
    let field = potential_from_duals(&r.u, &grid);
    for k in 0..=cfg.frames {
        let t = k as f64 / cfg.frames.max(1) as f64;
        let interp = geodesic_density(&mu, &field, t)?;
        write_density_csv(&out_path(cfg, &format!("geodesic_t{k}.csv")), &grid, interp.density())?;
        if cfg.dim == 2 {
            write_pgm(&out_path(cfg, &format!("geodesic_t{k}.pgm")), &grid, interp.density(), 0.0, 1.0)?;
        }
    }
    manifest.finish(t0.elapsed(), &out_path(cfg, "manifest.json"))?;
    if !r.converged && r.final_residual > RESIDUAL_FAIL_FACTOR * cfg.stop_tol {
        return Err(CliError::NonConvergence(format!("solve residual {:.3e}", r.final_residual)));
    }
    Ok(())
}
