//! Transport-growth geodesic interpolation. Given an optimal dual potential
//! `u` for the first endpoint, the geodesic through `mu_0` is the pushforward
//! `mu_t = (X_t)_# (a_t mu_0)` with `phi = 1 - e^-u`,
//! `a_t = (1 - t phi)^2 + t^2 |grad phi|^2 / 4` and
//! `X_t = x - arctan(t |grad phi| / (2 - 2 t phi)) grad phi / |grad phi|`.
//!
//! Entropic duals stand in for the exact potential, so the interpolation is
//! a visualization / cross-check aid with an O(eps) bias.

use std::sync::Arc;

use crate::error::{Result, WfrError};
use crate::grid::Grid;
use crate::measure::DiscreteMeasure;

#[derive(Debug, Clone)]
pub struct GeodesicField {
    grid: Arc<Grid>,
    phi: Vec<f64>,
    grad_phi: Vec<[f64; 2]>,
}

impl GeodesicField {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn grad_phi(&self) -> &[[f64; 2]] {
        &self.grad_phi
    }
}

/// Builds the potential `phi = 1 - e^-u` and its per-cell gradient (central
/// differences, one-sided at domain boundaries and obstacles, zero on cells
/// with no active neighbor along an axis).
pub fn potential_from_duals(u: &[f64], grid: &Arc<Grid>) -> GeodesicField {
    assert_eq!(u.len(), grid.len());
    let phi: Vec<f64> = u.iter().map(|&ui| 1.0 - (-ui).exp()).collect();
    let h = grid.spacing().unwrap_or(1.0);
    let mut grad = vec![[0.0, 0.0]; grid.len()];
    for i in 0..grid.len() {
        for axis in 0..grid.dim() {
            let prev = grid.neighbor(i, axis, -1);
            let next = grid.neighbor(i, axis, 1);
            grad[i][axis] = match (prev, next) {
                (Some(p), Some(n)) => (phi[n] - phi[p]) / (2.0 * h),
                (None, Some(n)) => (phi[n] - phi[i]) / h,
                (Some(p), None) => (phi[i] - phi[p]) / h,
                (None, None) => 0.0,
            };
        }
    }
    GeodesicField { grid: grid.clone(), phi, grad_phi: grad }
}

/// Mass-scaling factor `a_t` at one cell.
fn growth_factor(phi: f64, grad_norm: f64, t: f64) -> f64 {
    let lin = 1.0 - phi * t;
    lin * lin + 0.25 * t * t * grad_norm * grad_norm
}

/// Subsamples per axis used to de-alias the re-binning.
const DEPOSIT_SUBSAMPLES: usize = 4;

/// Pushes `mu_0` along the geodesic field to time `t` in [0, 1] and re-bins
/// the moved mass onto the grid by linear (1-D) / bilinear (2-D) splitting.
/// Each cell's mass is carried by 4 (1-D) / 16 (2-D) stratified subsamples
/// whose displacements interpolate the per-cell displacement field, which
/// suppresses binning aliasing where the map compresses. Mass is conserved
/// exactly and `t = 0` reproduces `mu_0` bit for bit.
pub fn geodesic_density(mu0: &DiscreteMeasure, field: &GeodesicField, t: f64) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(WfrError::InvalidArgument(format!("geodesic time must lie in [0,1], got {t}")));
    }
    let grid = mu0.grid();
    if !grid.same_domain(field.grid()) {
        return Err(WfrError::InvalidArgument("measure and field live on different grids".into()));
    }
    if t == 0.0 {
        return Ok(mu0.clone());
    }
    let dim = grid.dim();
    let n_cells = grid.len();

    // Per-cell displacement of the flow map.
    let displacement: Vec<[f64; 2]> = (0..n_cells)
        .map(|i| {
            let phi = field.phi[i];
            let g = field.grad_phi[i];
            let gnorm = if dim == 1 { g[0].abs() } else { g[0].hypot(g[1]) };
            if gnorm == 0.0 {
                return [0.0, 0.0];
            }
            // atan2 handles the saturated case 2 - 2 t phi = 0 (angle pi/2)
            let shift = (t * gnorm).atan2(2.0 - 2.0 * t * phi);
            [-shift * g[0] / gnorm, if dim == 2 { -shift * g[1] / gnorm } else { 0.0 }]
        })
        .collect();

    let h = grid.spacing().unwrap_or(0.0);
    let s = if h > 0.0 { DEPOSIT_SUBSAMPLES } else { 1 };
    let sub_offsets: Vec<f64> =
        (0..s).map(|k| ((2 * k + 1) as f64 / (2 * s) as f64 - 0.5) * h).collect();
    let mut binned = vec![0.0; n_cells];
    for (i, &alpha) in mu0.density().iter().enumerate() {
        if alpha == 0.0 {
            continue;
        }
        let phi = field.phi[i];
        let g = field.grad_phi[i];
        let gnorm = if dim == 1 { g[0].abs() } else { g[0].hypot(g[1]) };
        let cell_mass = alpha * grid.weight(i) * growth_factor(phi, gnorm, t);
        let center = grid.center(i);
        if dim == 1 {
            let sub_mass = cell_mass / s as f64;
            for &ox in &sub_offsets {
                let d = interp_displacement(grid, &displacement, i, ox, 0.0, h);
                deposit(grid, &mut binned, &[center[0] + ox + d[0], 0.0], sub_mass, i);
            }
        } else {
            let sub_mass = cell_mass / (s * s) as f64;
            for &ox in &sub_offsets {
                for &oy in &sub_offsets {
                    let d = interp_displacement(grid, &displacement, i, ox, oy, h);
                    deposit(
                        grid,
                        &mut binned,
                        &[center[0] + ox + d[0], center[1] + oy + d[1]],
                        sub_mass,
                        i,
                    );
                }
            }
        }
    }
    let density: Vec<f64> = binned.iter().zip(grid.weights()).map(|(m, w)| m / w).collect();
    DiscreteMeasure::new(grid.clone(), density)
}

/// Displacement vector at an offset `(ox, oy)` from the center of cell `i`,
/// linearly interpolated toward the neighbors on the offset sides; where the
/// neighbor is missing (boundary, obstacle) the opposite-side slope is
/// extrapolated instead of freezing the field.
fn interp_displacement(
    grid: &Grid,
    displacement: &[[f64; 2]],
    i: usize,
    ox: f64,
    oy: f64,
    h: f64,
) -> [f64; 2] {
    if h == 0.0 {
        return displacement[i];
    }
    let mut d = displacement[i];
    for (axis, off) in [(0usize, ox), (1usize, oy)] {
        if axis >= grid.dim() || off == 0.0 {
            continue;
        }
        let frac = (off / h).abs();
        let side = if off >= 0.0 { 1i64 } else { -1 };
        match (grid.neighbor(i, axis, side), grid.neighbor(i, axis, -side)) {
            (Some(nb), _) => {
                d[0] += frac * (displacement[nb][0] - displacement[i][0]);
                d[1] += frac * (displacement[nb][1] - displacement[i][1]);
            }
            (None, Some(op)) => {
                d[0] += frac * (displacement[i][0] - displacement[op][0]);
                d[1] += frac * (displacement[i][1] - displacement[op][1]);
            }
            (None, None) => {}
        }
    }
    d
}

/// Deposits `mass` into the cell containing `pos` (the subsampling supplies
/// the sub-cell resolution); positions outside the box or on an obstacle
/// fall back to the source cell so nothing is lost.
fn deposit(grid: &Grid, binned: &mut [f64], pos: &[f64; 2], mass: f64, source: usize) {
    let n = grid.cells_per_axis();
    if n == 0 {
        binned[source] += mass;
        return;
    }
    let nf = n as f64;
    let cell = |x: f64| ((x * nf).floor().max(0.0) as usize).min(n - 1);
    let full = if grid.dim() == 1 { cell(pos[0]) } else { cell(pos[1]) * n + cell(pos[0]) };
    match grid.active_index(full) {
        Some(a) => binned[a] += mass,
        None => binned[source] += mass,
    }
}
