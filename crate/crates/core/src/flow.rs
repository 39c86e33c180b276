//! Outer minimizing-movement loop: one prox step of the constrained-growth
//! energy, the full flow driver, the transport-growth distance, the
//! congestion projection and the projection/growth splitting scheme.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::cost::CostSpec;
use crate::error::{Result, WfrError};
use crate::measure::{relative_entropy, DiscreteMeasure};
use crate::params::FlowParams;
use crate::solver::{scaling_solve_with, MarginalFunctional, SolveResult, SolverConfig};

/// One prox step: new density, pressure and the squared step length.
#[derive(Debug, Clone)]
pub struct FlowStepOutput {
    /// New density (capped at 1).
    pub rho_next: DiscreteMeasure,
    /// Pressure per active cell, clamped at 0.
    pub pressure: Vec<f64>,
    /// Most negative pre-clamp pressure value (entropic blur dips slightly
    /// below zero near the free boundary).
    pub pressure_preclamp_min: f64,
    /// Entropy-transport objective of the step plan against (mu, rho_next):
    /// the squared step length charged by the movement limiter.
    pub distance_sq: f64,
    pub solver: SolveResult,
}

/// Piecewise record of a flow run.
#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    /// `t_k = k tau`, including `t_0 = 0`.
    pub times: Vec<f64>,
    pub densities: Vec<DiscreteMeasure>,
    /// `pressures[k]` drives the step from `densities[k]` to `densities[k+1]`
    /// (one entry fewer than `densities`).
    pub pressures: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    /// Squared step lengths, one per step.
    pub dissipation: Vec<f64>,
    pub converged: Vec<bool>,
    pub residuals: Vec<f64>,
    pub pressure_preclamp_min: Vec<f64>,
}

impl FlowTrajectory {
    fn new(rho0: &DiscreteMeasure) -> Self {
        FlowTrajectory {
            times: vec![0.0],
            densities: vec![rho0.clone()],
            pressures: Vec::new(),
            masses: vec![rho0.mass()],
            dissipation: Vec::new(),
            converged: Vec::new(),
            residuals: Vec::new(),
            pressure_preclamp_min: Vec::new(),
        }
    }

    fn push_step(&mut self, t: f64, step: FlowStepOutput) {
        self.times.push(t);
        self.masses.push(step.rho_next.mass());
        self.densities.push(step.rho_next);
        self.pressures.push(step.pressure);
        self.dissipation.push(step.distance_sq);
        self.converged.push(step.solver.converged);
        self.residuals.push(step.solver.final_residual);
        self.pressure_preclamp_min.push(step.pressure_preclamp_min);
    }

    pub fn final_density(&self) -> &DiscreteMeasure {
        self.densities.last().unwrap()
    }

    pub fn final_pressure(&self) -> Option<&Vec<f64>> {
        self.pressures.last()
    }

    /// Writes `summary.csv`: `k,t,mass,distance_sq,converged,minpressure`.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "k,t,mass,distance_sq,converged,minpressure")?;
        for k in 0..self.times.len() {
            let (d2, conv, minp) = if k == 0 {
                (0.0, true, 0.0)
            } else {
                (self.dissipation[k - 1], self.converged[k - 1], self.pressure_preclamp_min[k - 1])
            };
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                k, self.times[k], self.masses[k], d2, conv, minp
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_density_cap(mu: &DiscreteMeasure, what: &str) -> Result<()> {
    if mu.density().iter().any(|&a| a > 1.0 + 1e-9) {
        return Err(WfrError::InvalidArgument(format!("{what} must have density <= 1")));
    }
    Ok(())
}

/// One implicit step of the constrained-growth flow: solves the optimal
/// entropy-transport problem with the previous density fixed on the first
/// marginal and the capped-growth functional on the second, then extracts
/// `beta = min(1, m2 / (1 - 2 tau lambda))` and
/// `p = (2 tau lambda - 1 + e^-v) / (2 tau)`, clamped at 0.
pub fn prox_step(mu: &DiscreteMeasure, params: &FlowParams) -> Result<FlowStepOutput> {
    prox_step_with(mu, params, &SolverConfig::default())
}

pub fn prox_step_with(
    mu: &DiscreteMeasure,
    params: &FlowParams,
    config: &SolverConfig,
) -> Result<FlowStepOutput> {
    params.validate()?;
    check_density_cap(mu, "prox input")?;
    if params.tau <= 0.0 {
        return Err(WfrError::InvalidArgument("prox step requires tau > 0".into()));
    }
    let grid = mu.grid();
    let f1 = MarginalFunctional::KlFixed(mu.density().to_vec());
    let f2 = MarginalFunctional::GrowthCapped { tau: params.tau, lambda: params.lambda };
    let solver = scaling_solve_with(&f1, grid, &f2, grid, CostSpec::LogCos, params, config)?;

    let one_m = 1.0 - 2.0 * params.tau * params.lambda;
    let beta: Vec<f64> = solver.gamma_marginal_2.iter().map(|&m| (m / one_m).min(1.0)).collect();
    let mut preclamp_min = 0.0f64;
    let pressure: Vec<f64> = solver
        .v
        .iter()
        .map(|&v| {
            let p = (2.0 * params.tau * params.lambda - 1.0 + (-v).exp()) / (2.0 * params.tau);
            preclamp_min = preclamp_min.min(p);
            p.max(0.0)
        })
        .collect();
    // Entropy-transport value of the realized pair (mu, beta); equals the
    // solver objective with the growth reward added back.
    let distance_sq = solver.transport_cost
        + relative_entropy(&solver.gamma_marginal_1, mu.density(), grid)
        + relative_entropy(&solver.gamma_marginal_2, &beta, grid);
    let rho_next = DiscreteMeasure::new(grid.clone(), beta)?;
    Ok(FlowStepOutput { rho_next, pressure, pressure_preclamp_min: preclamp_min, distance_sq, solver })
}

/// Runs the minimizing-movement scheme for `ceil(t_final / tau)` steps.
pub fn run_flow(rho0: &DiscreteMeasure, params: &FlowParams, t_final: f64) -> Result<FlowTrajectory> {
    run_flow_with(rho0, params, t_final, &SolverConfig::default(), &mut |_, _| {})
}

/// Flow driver with solver options and a per-step observer `(k, trajectory)`.
pub fn run_flow_with(
    rho0: &DiscreteMeasure,
    params: &FlowParams,
    t_final: f64,
    config: &SolverConfig,
    on_step: &mut dyn FnMut(usize, &FlowTrajectory),
) -> Result<FlowTrajectory> {
    params.validate()?;
    check_density_cap(rho0, "initial density")?;
    if !(t_final >= params.tau) {
        return Err(WfrError::InvalidArgument("t_final must be at least one time step".into()));
    }
    let steps = (t_final / params.tau).ceil() as usize;
    let mut traj = FlowTrajectory::new(rho0);
    let mut rho = rho0.clone();
    for k in 1..=steps {
        let step = prox_step_with(&rho, params, config)?;
        rho = step.rho_next.clone();
        traj.push_step(k as f64 * params.tau, step);
        on_step(k, &traj);
    }
    Ok(traj)
}

/// Transport-growth distance between two nonnegative measures (they may live
/// on different grids): square root of the entropy-transport objective of
/// the regularized plan.
pub fn wfr_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, eps: f64) -> Result<f64> {
    wfr_distance_sq(mu, nu, eps).map(f64::sqrt)
}

pub fn wfr_distance_sq(mu: &DiscreteMeasure, nu: &DiscreteMeasure, eps: f64) -> Result<f64> {
    let params = FlowParams::new(0.0, 0.0, eps);
    let f1 = MarginalFunctional::KlFixed(mu.density().to_vec());
    let f2 = MarginalFunctional::KlFixed(nu.density().to_vec());
    let r = scaling_solve_with(
        &f1,
        mu.grid(),
        &f2,
        nu.grid(),
        CostSpec::LogCos,
        &params,
        &SolverConfig::default(),
    )?;
    Ok(r.primal_value)
}

/// Projection of a density onto the congestion set `{density <= 1}` for the
/// quadratic transport cost: returns the projected density (mass preserved)
/// and the projection pressure `q = (-v)_+` from the cap-side dual.
pub fn wasserstein_projection(rho: &DiscreteMeasure, eps: f64) -> Result<(DiscreteMeasure, Vec<f64>)> {
    let grid = rho.grid();
    if rho.mass() > grid.active_volume() * (1.0 + 1e-12) {
        return Err(WfrError::InfeasibleMarginal(format!(
            "mass {} exceeds the active volume {}",
            rho.mass(),
            grid.active_volume()
        )));
    }
    let params = FlowParams::new(0.0, 0.0, eps);
    let f1 = MarginalFunctional::Equality(rho.density().to_vec());
    let f2 = MarginalFunctional::CapOne;
    let r = scaling_solve_with(
        &f1,
        grid,
        &f2,
        grid,
        CostSpec::Quadratic,
        &params,
        &SolverConfig::default(),
    )?;
    let beta: Vec<f64> = r.gamma_marginal_2.iter().map(|&m| m.min(1.0)).collect();
    let q: Vec<f64> = r.v.iter().map(|&v| (-v).max(0.0)).collect();
    Ok((DiscreteMeasure::new(grid.clone(), beta)?, q))
}

/// Implicit projection/growth splitting scheme with growth rate
/// `Phi(p) = 4 (1 - p)_+^kappa`. Each macro step projects onto the
/// congestion set and then applies the pointwise implicit growth update
/// `rho -> rho / (1 - tau Phi(p))`, with the physical pressure recovered
/// from the projection dual as `p = q / (2 tau)`.
pub fn splitting_flow(
    rho0: &DiscreteMeasure,
    kappa: f64,
    params: &FlowParams,
    t_final: f64,
) -> Result<FlowTrajectory> {
    params.validate()?;
    check_density_cap(rho0, "initial density")?;
    if !(kappa >= 0.0) {
        return Err(WfrError::InvalidArgument("kappa must be >= 0".into()));
    }
    if 4.0 * params.tau >= 1.0 {
        return Err(WfrError::InvalidArgument("need 4 tau < 1 for the implicit growth update".into()));
    }
    if !(t_final >= params.tau) {
        return Err(WfrError::InvalidArgument("t_final must be at least one time step".into()));
    }
    let grid = rho0.grid();
    let steps = (t_final / params.tau).ceil() as usize;
    let mut traj = FlowTrajectory::new(rho0);
    let mut rho = rho0.clone();
    for k in 1..=steps {
        // Numerical dust below the sparse truncation floor would make the
        // equality marginal unservable; dropping it changes the mass by less
        // than N * 1e-100.
        let cleaned: Vec<f64> = rho
            .density()
            .iter()
            .map(|&a| if a <= crate::solver::KL_DUST_FLOOR { 0.0 } else { a })
            .collect();
        let rho_clean = DiscreteMeasure::new(grid.clone(), cleaned)?;
        let (projected, q) = wasserstein_projection(&rho_clean, params.eps)?;
        let pressure: Vec<f64> = q.iter().map(|&qi| qi / (2.0 * params.tau)).collect();
        let grown = implicit_growth_update(projected.density(), &pressure, params.tau, kappa)?;
        // Recorded state is the post-projection density.
        let step = FlowStepOutput {
            rho_next: projected,
            pressure,
            pressure_preclamp_min: q.iter().fold(0.0f64, |m, &x| m.min(x)),
            distance_sq: 0.0,
            solver: SolveResult {
                u: Vec::new(),
                v: Vec::new(),
                gamma_marginal_1: Vec::new(),
                gamma_marginal_2: Vec::new(),
                transport_cost: 0.0,
                primal_value: 0.0,
                iterations: 0,
                converged: true,
                final_residual: 0.0,
                absorptions: 0,
                residuals: None,
                plan: None,
            },
        };
        traj.push_step(k as f64 * params.tau, step);
        rho = DiscreteMeasure::new(grid.clone(), grown)?;
    }
    Ok(traj)
}

/// `Phi(p) = 4 (1 - p)_+^kappa`.
pub fn growth_rate(p: f64, kappa: f64) -> f64 {
    4.0 * (1.0 - p).max(0.0).powf(kappa)
}

/// Pointwise implicit growth update `rho -> rho / (1 - tau Phi(p))`.
pub fn implicit_growth_update(density: &[f64], pressure: &[f64], tau: f64, kappa: f64) -> Result<Vec<f64>> {
    let mut grown = Vec::with_capacity(density.len());
    for (&b, &p) in density.iter().zip(pressure) {
        let denom = 1.0 - tau * growth_rate(p, kappa);
        if denom <= 0.0 {
            return Err(WfrError::InvalidArgument(format!(
                "growth denominator {denom} <= 0: tau too large for kappa={kappa}"
            )));
        }
        grown.push(b / denom);
    }
    Ok(grown)
}

pub use crate::measure::mass_of as density_mass;
