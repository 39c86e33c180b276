//! Stabilized scaling iterations for discrete optimal entropy-transport
//! problems with pluggable marginal functionals.
//!
//! The solver minimizes
//! `J(gamma) + eps*H(gamma)` over nonnegative plans, where
//! `J(gamma) = <c, gamma> + F1(gamma w) + F2(gamma^T w)`, by alternating the
//! explicit proxdiv updates of the two marginal functionals. Scalings are
//! kept in log form and folded into the dual offsets (u, v) whenever they
//! leave a safe band ("absorption"), after which the kernel is rebuilt.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use crate::cost::CostSpec;
use crate::error::{Result, WfrError};
use crate::grid::Grid;
use crate::kernel::{KernelBuildSpec, KernelMode, StabilizedKernel, DEFAULT_TRUNC_LOG_THRESHOLD};
use crate::params::FlowParams;

/// Scalings are exponentiated through this clamp when fed to the kernel
/// applications; absorption uses the raw log values, so the clamp only
/// affects transient iterates.
const LOG_APPLY_CLAMP: f64 = 330.0;

/// Kernel-exponent a revived row is lifted to.
const REVIVE_LOG_TARGET: f64 = 10.0;

/// Dual revivals allowed per stage before declaring infeasibility.
const MAX_REVIVES: usize = 8;

/// KL-penalized cells with density at or below this are numerical dust: their
/// optimal plan rows sit below the sparse truncation floor, so they are
/// annihilated rather than revived (objective contribution <= density * w).
pub const KL_DUST_FLOOR: f64 = 1e-100;

/// Marginal functional of one side of the plan, acting on the marginal
/// density relative to the cell weights.
#[derive(Debug, Clone)]
pub enum MarginalFunctional {
    /// Relative entropy to a fixed density: `F(m) = H(m | alpha)`.
    KlFixed(Vec<f64>),
    /// `F(m) = min_{0<=s<=1} H(m|s) - 2*tau*lambda*sum s_i w_i`; the inner
    /// optimum is `s = min(1, m/(1-2*tau*lambda))`.
    GrowthCapped { tau: f64, lambda: f64 },
    /// Hard equality to a fixed density.
    Equality(Vec<f64>),
    /// Hard cap `m <= 1`.
    CapOne,
}

impl MarginalFunctional {
    fn fixed_density(&self) -> Option<&[f64]> {
        match self {
            MarginalFunctional::KlFixed(a) | MarginalFunctional::Equality(a) => Some(a),
            _ => None,
        }
    }

    /// Cells allowed to carry plan mass on this side.
    fn support(&self, n: usize) -> Vec<bool> {
        match self.fixed_density() {
            Some(a) => a.iter().map(|&x| x > 0.0).collect(),
            None => vec![true; n],
        }
    }

    /// Log of the proxdiv update for live cells; `log_s` is the log of the
    /// kernel application at those cells.
    fn proxdiv_log(&self, log_s: f64, dual: f64, eps: f64, cell: usize) -> f64 {
        match self {
            MarginalFunctional::KlFixed(alpha) => {
                (alpha[cell].ln() - log_s - dual) / (1.0 + eps)
            }
            MarginalFunctional::GrowthCapped { tau, lambda } => {
                let log_1m = (1.0 - 2.0 * tau * lambda).ln();
                if log_s <= (1.0 + eps) / eps * log_1m + dual / eps {
                    -(log_1m + dual) / eps
                } else {
                    -(log_s + dual) / (1.0 + eps)
                }
            }
            MarginalFunctional::Equality(alpha) => alpha[cell].ln() - log_s,
            MarginalFunctional::CapOne => (-dual / eps).min(-log_s),
        }
    }

    /// `F` evaluated at a marginal density. Hard-constraint functionals
    /// report 0 (the solver keeps their iterates feasible up to the
    /// regularization bias).
    pub fn objective(&self, marginal: &[f64], grid: &Grid) -> f64 {
        match self {
            MarginalFunctional::KlFixed(alpha) => crate::measure::relative_entropy(marginal, alpha, grid),
            MarginalFunctional::GrowthCapped { tau, lambda } => {
                let one_m = 1.0 - 2.0 * tau * lambda;
                let log_1m = one_m.ln();
                let mut acc = 0.0;
                for (&m, &w) in marginal.iter().zip(grid.weights()) {
                    acc += if m <= one_m {
                        m * log_1m * w
                    } else {
                        (m * m.ln() - m + 1.0 - 2.0 * tau * lambda) * w
                    };
                }
                acc
            }
            MarginalFunctional::Equality(_) | MarginalFunctional::CapOne => 0.0,
        }
    }
}

/// `proxdiv` of `H(.|alpha)`: `(alpha/s)^(1/(1+eps)) * e^(-u/(1+eps))`, 0/0 -> 0.
pub fn proxdiv_f1(s: &[f64], u: &[f64], eps: f64, alpha: &[f64]) -> Vec<f64> {
    s.iter()
        .zip(u)
        .zip(alpha)
        .map(|((&s, &u), &a)| {
            if a == 0.0 {
                0.0
            } else {
                (a / s).powf(1.0 / (1.0 + eps)) * (-u / (1.0 + eps)).exp()
            }
        })
        .collect()
}

/// `proxdiv` of the capped-growth functional.
pub fn proxdiv_f2(s: &[f64], u: &[f64], eps: f64, tau: f64, lambda: f64) -> Vec<f64> {
    let one_m = 1.0 - 2.0 * tau * lambda;
    s.iter()
        .zip(u)
        .map(|(&s, &u)| {
            if s <= one_m.powf((1.0 + eps) / eps) * (u / eps).exp() {
                (one_m * u.exp()).powf(-1.0 / eps)
            } else {
                (s * u.exp()).powf(-1.0 / (1.0 + eps))
            }
        })
        .collect()
}

/// `proxdiv` of the equality constraint: `alpha / s`, 0/0 -> 0.
///
/// The dual offset cancels: the prox of the indicator is `alpha` no matter
/// how the scaling is split between `u` and the running factor, so the
/// stabilized update is exactly the unstabilized one.
pub fn proxdiv_equality(s: &[f64], _u: &[f64], _eps: f64, alpha: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(s.len());
    for (&s, &a) in s.iter().zip(alpha) {
        if a == 0.0 {
            out.push(0.0);
        } else if s == 0.0 {
            return Err(WfrError::InfeasibleMarginal(
                "equality marginal requires mass on a cell the kernel cannot reach".into(),
            ));
        } else {
            out.push(a / s);
        }
    }
    Ok(out)
}

/// `proxdiv` of the density cap: `min(e^(-u/eps), 1/s)`.
pub fn proxdiv_cap_one(s: &[f64], u: &[f64], eps: f64) -> Vec<f64> {
    s.iter().zip(u).map(|(&s, &u)| (-u / eps).exp().min(1.0 / s)).collect()
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub mode: KernelMode,
    pub trunc_log_threshold: f64,
    /// Per-iteration trace CSV (`iter,eps,residual,absorptions`).
    pub trace_path: Option<PathBuf>,
    /// Keep `(eps, residual)` per iteration in the result.
    pub record_residuals: bool,
    /// Keep the final plan densely (small problems only).
    pub keep_plan: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: KernelMode::Auto,
            trunc_log_threshold: DEFAULT_TRUNC_LOG_THRESHOLD,
            trace_path: None,
            record_residuals: false,
            keep_plan: false,
        }
    }
}

/// Dense copy of a transport plan (densities relative to `w_i w_j`).
#[derive(Debug, Clone)]
pub struct DensePlan {
    pub n_rows: usize,
    pub n_cols: usize,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Final dual offsets; on cells outside the feasible support they carry
    /// the value of the nearest live cell (grids only; 0 on point clouds).
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// First and second marginal densities of the optimal plan.
    pub gamma_marginal_1: Vec<f64>,
    pub gamma_marginal_2: Vec<f64>,
    /// `<c, gamma>` over the plan.
    pub transport_cost: f64,
    /// Unregularized objective `J(gamma)`.
    pub primal_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub absorptions: usize,
    pub residuals: Option<Vec<(f64, f64)>>,
    pub plan: Option<DensePlan>,
}

pub fn scaling_solve(
    f1: &MarginalFunctional,
    grid_a: &Grid,
    f2: &MarginalFunctional,
    grid_b: &Grid,
    cost: CostSpec,
    params: &FlowParams,
) -> Result<SolveResult> {
    scaling_solve_with(f1, grid_a, f2, grid_b, cost, params, &SolverConfig::default())
}

struct TraceSink {
    out: Option<BufWriter<File>>,
}

impl TraceSink {
    fn new(path: &Option<PathBuf>) -> Result<Self> {
        match path {
            None => Ok(TraceSink { out: None }),
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "iter,eps,residual,absorptions")?;
                Ok(TraceSink { out: Some(w) })
            }
        }
    }

    fn record(&mut self, iter: usize, eps: f64, residual: f64, absorptions: usize) -> Result<()> {
        if let Some(w) = &mut self.out {
            writeln!(w, "{iter},{eps:.16e},{residual:.16e},{absorptions}")?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(w) = &mut self.out {
            w.flush()?;
        }
        Ok(())
    }
}

pub fn scaling_solve_with(
    f1: &MarginalFunctional,
    grid_a: &Grid,
    f2: &MarginalFunctional,
    grid_b: &Grid,
    cost: CostSpec,
    params: &FlowParams,
    config: &SolverConfig,
) -> Result<SolveResult> {
    params.validate()?;
    let n1 = grid_a.len();
    let n2 = grid_b.len();
    for (f, n, side) in [(f1, n1, "first"), (f2, n2, "second")] {
        if let Some(a) = f.fixed_density() {
            if a.len() != n {
                return Err(WfrError::InvalidArgument(format!(
                    "{side} marginal density has length {}, grid has {n} active cells",
                    a.len()
                )));
            }
            if a.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(WfrError::InvalidArgument(format!("{side} marginal density must be finite and >= 0")));
            }
        }
    }
    let mut live1 = f1.support(n1);
    let mut live2 = f2.support(n2);
    if !live1.iter().any(|&l| l) || !live2.iter().any(|&l| l) {
        // Nothing can couple; the optimal plan is zero.
        return finalize_empty(f1, grid_a, f2, grid_b, config);
    }

    let mut u = vec![0.0; n1];
    let mut v = vec![0.0; n2];
    let mut log_a = vec![0.0; n1];
    let mut log_b = vec![0.0; n2];
    let mut s1 = vec![0.0; n1];
    let mut s2 = vec![0.0; n2];
    let mut scaled = vec![0.0; n1.max(n2)];

    let mut trace = TraceSink::new(&config.trace_path)?;
    let mut residual_log = config.record_residuals.then(Vec::new);

    let mut kernel: Option<StabilizedKernel> = None;
    let mut total_iters = 0usize;
    let mut absorptions = 0usize;
    let mut converged = false;
    let mut final_residual = f64::INFINITY;

    let n_stages = params.eps_schedule.len();
    for (stage, &eps) in params.eps_schedule.iter().enumerate() {
        let is_target = stage + 1 == n_stages;
        log_a.fill(0.0);
        log_b.fill(0.0);
        let mut k = build_kernel(grid_a, grid_b, cost, eps, &u, &v, &live1, &live2, config);
        annihilate_uncoupled(f1, &k, &mut live1, true)?;
        if !live1.iter().any(|&l| l) {
            kernel = Some(k);
            converged = true;
            final_residual = 0.0;
            break;
        }

        let mut stage_iters = 0usize;
        let mut revives = 0usize;
        loop {
            // a-update
            for (i, x) in scaled[..n2].iter_mut().enumerate() {
                *x = if live2[i] { clamped_exp(log_b[i]) * grid_b.weight(i) } else { 0.0 };
            }
            k.apply(&scaled[..n2], &mut s1);
            if constrained(f1) {
                let starved: Vec<usize> =
                    (0..n1).filter(|&i| live1[i] && s1[i] <= 0.0).collect();
                if !starved.is_empty() {
                    revives += 1;
                    if revives > MAX_REVIVES {
                        return Err(WfrError::InfeasibleMarginal(
                            "constrained cells remain unreachable after dual revival".into(),
                        ));
                    }
                    revive_starved(
                        &starved, f1, &mut u, &mut live1, &v, &live2, grid_a, grid_b, cost, eps,
                    )?;
                    log_a.fill(0.0);
                    log_b.fill(0.0);
                    k = build_kernel(grid_a, grid_b, cost, eps, &u, &v, &live1, &live2, config);
                    continue;
                }
            }
            let mut residual = 0.0f64;
            for i in 0..n1 {
                if !live1[i] {
                    continue;
                }
                let log_s = if s1[i] > 0.0 { s1[i].ln() } else { f64::NEG_INFINITY };
                let new = f1.proxdiv_log(log_s, u[i], eps, i);
                residual = residual.max((new - log_a[i]).abs());
                log_a[i] = new;
            }
            // b-update
            for (i, x) in scaled[..n1].iter_mut().enumerate() {
                *x = if live1[i] { clamped_exp(log_a[i]) * grid_a.weight(i) } else { 0.0 };
            }
            k.apply_transpose(&scaled[..n1], &mut s2);
            if constrained(f2) {
                let starved: Vec<usize> =
                    (0..n2).filter(|&j| live2[j] && s2[j] <= 0.0).collect();
                if !starved.is_empty() {
                    revives += 1;
                    if revives > MAX_REVIVES {
                        return Err(WfrError::InfeasibleMarginal(
                            "constrained cells remain unreachable after dual revival".into(),
                        ));
                    }
                    revive_starved(
                        &starved, f2, &mut v, &mut live2, &u, &live1, grid_b, grid_a, cost, eps,
                    )?;
                    log_a.fill(0.0);
                    log_b.fill(0.0);
                    k = build_kernel(grid_a, grid_b, cost, eps, &u, &v, &live1, &live2, config);
                    continue;
                }
            }
            for j in 0..n2 {
                if !live2[j] {
                    continue;
                }
                let log_s = if s2[j] > 0.0 { s2[j].ln() } else { f64::NEG_INFINITY };
                log_b[j] = f2.proxdiv_log(log_s, v[j], eps, j);
            }
            stage_iters += 1;
            total_iters += 1;
            trace.record(total_iters, eps, residual, absorptions)?;
            if let Some(r) = &mut residual_log {
                r.push((eps, residual));
            }

            let needs_absorb = k.clamped_entries > 0
                || log_a.iter().zip(&live1).any(|(&x, &l)| l && x.abs() > params.absorb_threshold)
                || log_b.iter().zip(&live2).any(|(&x, &l)| l && x.abs() > params.absorb_threshold);
            let done = if is_target {
                final_residual = residual;
                if residual < params.stop_tol {
                    converged = true;
                    true
                } else {
                    stage_iters >= params.max_iters
                }
            } else {
                residual < params.prestage_tol || stage_iters >= params.prestage_max_iters
            };
            if needs_absorb || done {
                absorb(&mut u, &mut v, &mut log_a, &mut log_b, &live1, &live2, eps);
                absorptions += 1;
                k = build_kernel(grid_a, grid_b, cost, eps, &u, &v, &live1, &live2, config);
                if done {
                    break;
                }
            }
        }
        kernel = Some(k);
    }
    trace.finish()?;

    let kernel = kernel.expect("at least one stage runs");
    let mut result =
        finalize(f1, grid_a, f2, grid_b, cost, params.eps, &kernel, u, v, &live1, &live2, config);
    result.iterations = total_iters;
    result.converged = converged;
    result.final_residual = final_residual;
    result.absorptions = absorptions;
    result.residuals = residual_log;
    Ok(result)
}

fn clamped_exp(x: f64) -> f64 {
    x.clamp(-LOG_APPLY_CLAMP, LOG_APPLY_CLAMP).exp()
}

fn constrained(f: &MarginalFunctional) -> bool {
    matches!(f, MarginalFunctional::KlFixed(_) | MarginalFunctional::Equality(_))
}

/// A constrained cell whose kernel row came out empty (exponent underflow
/// after a regularization drop, or truncation) gets its dual shifted so that
/// its best reachable pair sits at a healthy kernel exponent. The dual split
/// is free until convergence, so this changes no fixed point. Cells with no
/// finite-cost partner at all, and KL cells with dust-level density, are
/// annihilated instead; an equality cell without a partner is infeasible.
#[allow(clippy::too_many_arguments)]
fn revive_starved(
    starved: &[usize],
    f_mine: &MarginalFunctional,
    dual_mine: &mut [f64],
    live_mine: &mut [bool],
    dual_other: &[f64],
    live_other: &[bool],
    grid_mine: &Grid,
    grid_other: &Grid,
    cost: CostSpec,
    eps: f64,
) -> Result<()> {
    let dim = grid_mine.dim();
    let hard_equality = matches!(f_mine, MarginalFunctional::Equality(_));
    let density = f_mine.fixed_density();
    for &i in starved {
        if let Some(a) = density {
            if !hard_equality && a[i] <= KL_DUST_FLOOR {
                live_mine[i] = false;
                continue;
            }
        }
        let xi = grid_mine.center(i);
        let mut best = f64::NEG_INFINITY;
        for j in 0..grid_other.len() {
            if !live_other[j] {
                continue;
            }
            let c = cost.eval(dim, &xi, &grid_other.center(j));
            if c.is_finite() {
                best = best.max(dual_other[j] - c);
            }
        }
        if best.is_finite() {
            dual_mine[i] = -REVIVE_LOG_TARGET * eps - best;
        } else if hard_equality {
            return Err(WfrError::InfeasibleMarginal(
                "equality marginal has mass beyond the finite-cost range".into(),
            ));
        } else {
            live_mine[i] = false;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_kernel(
    grid_a: &Grid,
    grid_b: &Grid,
    cost: CostSpec,
    eps: f64,
    u: &[f64],
    v: &[f64],
    live1: &[bool],
    live2: &[bool],
    config: &SolverConfig,
) -> StabilizedKernel {
    StabilizedKernel::build(&KernelBuildSpec {
        grid_a,
        grid_b,
        cost,
        eps,
        u,
        v,
        row_live: live1,
        col_live: live2,
        mode: config.mode,
        trunc_log_threshold: config.trunc_log_threshold,
    })
}

/// Rows whose every admissible column has infinite cost can never carry plan
/// mass: for a KL side the optimum simply pays the annihilation cost, for an
/// equality side the problem is infeasible.
fn annihilate_uncoupled(
    f1: &MarginalFunctional,
    kernel: &StabilizedKernel,
    live1: &mut [bool],
    is_first_side: bool,
) -> Result<()> {
    debug_assert!(is_first_side);
    for i in 0..live1.len() {
        if live1[i] && !kernel.row_nonempty(i) && kernel.row_all_infinite_cost(i) {
            if matches!(f1, MarginalFunctional::Equality(_)) {
                return Err(WfrError::InfeasibleMarginal(
                    "equality marginal has mass beyond the finite-cost range".into(),
                ));
            }
            live1[i] = false;
        }
    }
    Ok(())
}

fn absorb(
    u: &mut [f64],
    v: &mut [f64],
    log_a: &mut [f64],
    log_b: &mut [f64],
    live1: &[bool],
    live2: &[bool],
    eps: f64,
) {
    for (i, ui) in u.iter_mut().enumerate() {
        if live1[i] {
            *ui += eps * log_a[i];
        }
    }
    for (j, vj) in v.iter_mut().enumerate() {
        if live2[j] {
            *vj += eps * log_b[j];
        }
    }
    log_a.fill(0.0);
    log_b.fill(0.0);
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    f1: &MarginalFunctional,
    grid_a: &Grid,
    f2: &MarginalFunctional,
    grid_b: &Grid,
    cost: CostSpec,
    eps: f64,
    kernel: &StabilizedKernel,
    mut u: Vec<f64>,
    mut v: Vec<f64>,
    live1: &[bool],
    live2: &[bool],
    config: &SolverConfig,
) -> SolveResult {
    // With the scalings absorbed the kernel entries are the plan itself.
    let n1 = grid_a.len();
    let n2 = grid_b.len();
    let mut m1 = vec![0.0; n1];
    let mut m2 = vec![0.0; n2];
    kernel.apply(grid_b.weights(), &mut m1);
    kernel.apply_transpose(grid_a.weights(), &mut m2);
    let transport = kernel.transport_cost(grid_a, grid_b, cost);
    let primal = transport + f1.objective(&m1, grid_a) + f2.objective(&m2, grid_b);
    let plan = config.keep_plan.then(|| {
        let mut gamma = vec![0.0; n1 * n2];
        kernel.for_each_entry(|i, j, k| gamma[i * n2 + j] = k);
        DensePlan { n_rows: n1, n_cols: n2, gamma }
    });
    extend_duals(&mut u, live1, grid_a, &v, live2, grid_b, cost, eps);
    extend_duals(&mut v, live2, grid_b, &u, live1, grid_a, cost, eps);
    SolveResult {
        u,
        v,
        gamma_marginal_1: m1,
        gamma_marginal_2: m2,
        transport_cost: transport,
        primal_value: primal,
        iterations: 0,
        converged: false,
        final_residual: f64::INFINITY,
        absorptions: 0,
        residuals: None,
        plan,
    }
}

fn finalize_empty(
    f1: &MarginalFunctional,
    grid_a: &Grid,
    f2: &MarginalFunctional,
    grid_b: &Grid,
    config: &SolverConfig,
) -> Result<SolveResult> {
    if matches!(f1, MarginalFunctional::Equality(_)) || matches!(f2, MarginalFunctional::Equality(_)) {
        return Err(WfrError::InfeasibleMarginal("equality marginal with empty feasible support".into()));
    }
    let m1 = vec![0.0; grid_a.len()];
    let m2 = vec![0.0; grid_b.len()];
    let primal = f1.objective(&m1, grid_a) + f2.objective(&m2, grid_b);
    Ok(SolveResult {
        u: vec![0.0; grid_a.len()],
        v: vec![0.0; grid_b.len()],
        gamma_marginal_1: m1,
        gamma_marginal_2: m2,
        transport_cost: 0.0,
        primal_value: primal,
        iterations: 0,
        converged: true,
        final_residual: 0.0,
        absorptions: 0,
        residuals: None,
        plan: config.keep_plan.then(|| DensePlan {
            n_rows: grid_a.len(),
            n_cols: grid_b.len(),
            gamma: vec![0.0; grid_a.len() * grid_b.len()],
        }),
    })
}

/// Layers of dead cells next to the feasible support whose duals are filled
/// with the smoothed conjugate; beyond that the fill is constant.
const EXTEND_SOFT_DEPTH: usize = 4;

/// Off-support dual values. The dual is determined only where the marginal
/// carries mass; downstream consumers (potentials, gradients) want a smooth
/// field, so the first few dead layers get the smoothed conjugate
/// `u_i = -eps log sum_j exp((v_j - c_ij)/eps) w_j`, which continues the live
/// values up to O(eps), and farther cells copy breadth-first from the filled
/// region.
#[allow(clippy::too_many_arguments)]
fn extend_duals(
    dual: &mut [f64],
    live: &[bool],
    grid: &Grid,
    dual_other: &[f64],
    live_other: &[bool],
    grid_other: &Grid,
    cost: CostSpec,
    eps: f64,
) {
    if grid.cells_per_axis() == 0 || live.iter().all(|&l| l) || !live.iter().any(|&l| l) {
        return;
    }
    let dim = grid.dim();
    let soft_value = |i: usize| -> Option<f64> {
        let xi = grid.center(i);
        let mut best = f64::NEG_INFINITY;
        for j in 0..grid_other.len() {
            if !live_other[j] {
                continue;
            }
            let c = cost.eval(dim, &xi, &grid_other.center(j));
            if c.is_finite() {
                best = best.max((dual_other[j] - c) / eps);
            }
        }
        if !best.is_finite() {
            return None;
        }
        let mut acc = 0.0;
        for j in 0..grid_other.len() {
            if !live_other[j] {
                continue;
            }
            let c = cost.eval(dim, &xi, &grid_other.center(j));
            if c.is_finite() {
                acc += ((dual_other[j] - c) / eps - best).exp() * grid_other.weight(j);
            }
        }
        Some(-eps * (best + acc.ln()))
    };
    let mut filled: Vec<bool> = live.to_vec();
    let mut frontier: Vec<usize> = (0..dual.len()).filter(|&i| live[i]).collect();
    let mut depth = 0usize;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for &i in &frontier {
            for axis in 0..dim {
                for dir in [-1i64, 1] {
                    if let Some(j) = grid.neighbor(i, axis, dir) {
                        if !filled[j] {
                            filled[j] = true;
                            dual[j] = if depth <= EXTEND_SOFT_DEPTH {
                                soft_value(j).unwrap_or(dual[i])
                            } else {
                                dual[i]
                            };
                            next.push(j);
                        }
                    }
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }
}

/// Unregularized objective `J(gamma) = <c,gamma> + F1(gamma w) + F2(gamma^T w)`
/// of an explicit dense plan; any plan mass on an infinite-cost pair yields
/// +inf.
pub fn primal_objective_dense(
    gamma: &[f64],
    f1: &MarginalFunctional,
    grid_a: &Grid,
    f2: &MarginalFunctional,
    grid_b: &Grid,
    cost: CostSpec,
) -> f64 {
    let n1 = grid_a.len();
    let n2 = grid_b.len();
    assert_eq!(gamma.len(), n1 * n2);
    let dim = grid_a.dim();
    let mut transport = 0.0;
    let mut m1 = vec![0.0; n1];
    let mut m2 = vec![0.0; n2];
    for i in 0..n1 {
        for j in 0..n2 {
            let g = gamma[i * n2 + j];
            if g == 0.0 {
                continue;
            }
            let c = cost.eval(dim, &grid_a.center(i), &grid_b.center(j));
            if c.is_infinite() {
                return f64::INFINITY;
            }
            transport += c * g * grid_a.weight(i) * grid_b.weight(j);
            m1[i] += g * grid_b.weight(j);
            m2[j] += g * grid_a.weight(i);
        }
    }
    transport + f1.objective(&m1, grid_a) + f2.objective(&m2, grid_b)
}

/// Entropy `H(gamma) = sum_ij (g log g - g + 1) w_i w_j` of a dense plan.
pub fn plan_entropy_dense(gamma: &[f64], grid_a: &Grid, grid_b: &Grid) -> f64 {
    let n2 = grid_b.len();
    let mut acc = 0.0;
    for (i, &wi) in grid_a.weights().iter().enumerate() {
        for (j, &wj) in grid_b.weights().iter().enumerate() {
            let g = gamma[i * n2 + j];
            let e = if g == 0.0 { 1.0 } else { g * g.ln() - g + 1.0 };
            acc += e * wi * wj;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    #[test]
    fn proxdiv_f1_examples() {
        let r = proxdiv_f1(&[1.0, 4.0], &[0.0, 0.0], 1.0, &[1.0, 1.0]);
        assert_relative_eq!(r[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(r[1], 0.5, max_relative = 1e-14);
        let r = proxdiv_f1(&[1.0], &[4.0_f64.ln()], 1.0, &[1.0]);
        assert_relative_eq!(r[0], 0.5, max_relative = 1e-14);
        // identity: s = alpha, u = 0
        let a = vec![0.3, 0.9, 2.0];
        let r = proxdiv_f1(&a, &[0.0; 3], 0.37, &a);
        assert!(r.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        // 0/0 -> 0
        let r = proxdiv_f1(&[0.0], &[0.0], 1.0, &[0.0]);
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn proxdiv_f2_examples() {
        // tau*lambda = 0: 1 if s <= 1 else s^(-1/(1+eps))
        let r = proxdiv_f2(&[0.5, 1.0, 4.0], &[0.0; 3], 1.0, 0.0, 0.0);
        assert_relative_eq!(r[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(r[1], 1.0, max_relative = 1e-14);
        assert_relative_eq!(r[2], 0.5, max_relative = 1e-14);
        // 1-2*tau*lambda = 0.9, eps = 1
        let r = proxdiv_f2(&[0.5, 1.0], &[0.0; 2], 1.0, 0.05, 1.0);
        assert_relative_eq!(r[0], 1.0 / 0.9, max_relative = 1e-14);
        assert_relative_eq!(r[1], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn proxdiv_f2_tie_takes_first_branch() {
        // s exactly at the threshold: both branches agree there.
        let eps = 1.0;
        let one_m = 0.9_f64;
        let s = one_m.powf((1.0 + eps) / eps);
        let r = proxdiv_f2(&[s], &[0.0], eps, 0.05, 1.0);
        assert_relative_eq!(r[0], (one_m).powf(-1.0 / eps), max_relative = 1e-14);
        assert_relative_eq!(r[0], (s).powf(-1.0 / (1.0 + eps)), max_relative = 1e-14);
    }

    #[test]
    fn proxdiv_equality_examples() {
        let r = proxdiv_equality(&[2.0, 1.0], &[0.0; 2], 1.0, &[2.0, 2.0]).unwrap();
        assert_relative_eq!(r[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(r[1], 2.0, max_relative = 1e-14);
        assert_eq!(proxdiv_equality(&[0.0], &[0.0], 1.0, &[0.0]).unwrap()[0], 0.0);
        assert!(proxdiv_equality(&[0.0], &[0.0], 1.0, &[1.0]).is_err());
    }

    #[test]
    fn proxdiv_cap_one_examples() {
        let eps = 0.3;
        let r = proxdiv_cap_one(&[0.5, 2.0], &[0.0; 2], eps);
        assert_relative_eq!(r[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(r[1], 0.5, max_relative = 1e-14);
        let r = proxdiv_cap_one(&[2.0], &[-eps * 4.0_f64.ln()], eps);
        assert_relative_eq!(r[0], 0.5, max_relative = 1e-14);
    }

    fn dirac_pair(d: f64) -> (std::sync::Arc<Grid>, std::sync::Arc<Grid>) {
        (Grid::singleton(1, [0.0, 0.0]).unwrap(), Grid::singleton(1, [d, 0.0]).unwrap())
    }

    #[test]
    fn self_distance_vanishes_with_eps() {
        let g = Grid::singleton(1, [0.4, 0.0]).unwrap();
        let f = MarginalFunctional::KlFixed(vec![1.0]);
        let params = FlowParams::new(0.0, 0.0, 1e-6);
        let r = scaling_solve(&f, &g, &f, &g, CostSpec::LogCos, &params).unwrap();
        assert!(r.converged);
        assert!(r.primal_value <= 1e-4, "primal {}", r.primal_value);
    }

    #[test]
    fn same_point_mass_mismatch_square_root_law() {
        let g = Grid::singleton(1, [0.5, 0.0]).unwrap();
        let f1 = MarginalFunctional::KlFixed(vec![1.0]);
        let f2 = MarginalFunctional::KlFixed(vec![4.0]);
        let params = FlowParams::new(0.0, 0.0, 1e-6);
        let r = scaling_solve(&f1, &g, &f2, &g, CostSpec::LogCos, &params).unwrap();
        assert!((r.primal_value - 1.0).abs() < 1e-4, "primal {}", r.primal_value);
    }

    #[test]
    fn two_point_distance_law() {
        let d = std::f64::consts::PI / 3.0;
        let (ga, gb) = dirac_pair(d);
        let f = MarginalFunctional::KlFixed(vec![1.0]);
        let params = FlowParams::new(0.0, 0.0, 1e-6);
        let r = scaling_solve(&f, &ga, &f, &gb, CostSpec::LogCos, &params).unwrap();
        assert!((r.primal_value - 1.0).abs() < 1e-4, "primal {}", r.primal_value);
    }

    #[test]
    fn disjoint_far_supports_annihilate() {
        let (ga, gb) = dirac_pair(2.0); // beyond pi/2
        let f1 = MarginalFunctional::KlFixed(vec![0.7]);
        let f2 = MarginalFunctional::KlFixed(vec![0.4]);
        let params = FlowParams::new(0.0, 0.0, 1e-3);
        let r = scaling_solve(&f1, &ga, &f2, &gb, CostSpec::LogCos, &params).unwrap();
        assert!(r.converged);
        assert!((r.primal_value - 1.1).abs() < 1e-12, "mass sum expected, got {}", r.primal_value);
        assert!(r.gamma_marginal_1.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn primal_objective_empty_plan() {
        let g = Grid::uniform(1, 4, None).unwrap();
        let alpha = vec![0.5, 1.0, 0.25, 0.0];
        let f1 = MarginalFunctional::KlFixed(alpha.clone());
        let f2 = MarginalFunctional::GrowthCapped { tau: 0.0, lambda: 0.0 };
        let j = primal_objective_dense(&vec![0.0; 16], &f1, &g, &f2, &g, CostSpec::LogCos);
        let mass: f64 = alpha.iter().zip(g.weights()).map(|(a, w)| a * w).sum();
        assert_relative_eq!(j, mass, max_relative = 1e-14);
    }

    #[test]
    fn primal_objective_infinite_on_forbidden_pair() {
        let ga = Grid::singleton(1, [0.0, 0.0]).unwrap();
        let gb = Grid::singleton(1, [2.0, 0.0]).unwrap();
        let f = MarginalFunctional::KlFixed(vec![1.0]);
        let j = primal_objective_dense(&[0.5], &f, &ga, &f, &gb, CostSpec::LogCos);
        assert!(j.is_infinite());
    }

    #[test]
    fn marginal_identity_at_fixed_point() {
        // gamma_marginal_1 must equal the kernel application at the final state
        let g = Grid::uniform(1, 8, None).unwrap();
        let alpha: Vec<f64> = (0..8).map(|i| 0.3 + 0.05 * i as f64).collect();
        let f1 = MarginalFunctional::KlFixed(alpha);
        let f2 = MarginalFunctional::GrowthCapped { tau: 0.01, lambda: 1.0 };
        let mut params = FlowParams::new(0.01, 1.0, 1e-3);
        params.stop_tol = 1e-10;
        let r = scaling_solve(&f1, &g, &f2, &g, CostSpec::LogCos, &params).unwrap();
        assert!(r.converged);
        assert!(r.primal_value.is_finite());
        // first marginal close to alpha * e^{-u}
        for i in 0..8 {
            let expect = (0.3 + 0.05 * i as f64) * (-r.u[i]).exp();
            assert_relative_eq!(r.gamma_marginal_1[i], expect, max_relative = 1e-6);
        }
    }
}
