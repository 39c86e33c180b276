//! Pointed partitions of the unit box: cell centers, cell weights and an
//! obstacle mask. All density vectors in this crate are indexed by *active*
//! cells only; obstacle cells are deleted from every vector.

use std::sync::Arc;

use crate::error::{Result, WfrError};

pub const INACTIVE: u32 = u32::MAX;

/// Discrete domain: a partition of `[0,1]^dim` into `n^dim` cube cells, of
/// which a subset is active. Also representable: a free-form list of weighted
/// points (see [`Grid::from_points`]) used for point-mass computations.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    centers: Vec<[f64; 2]>,
    weights: Vec<f64>,
    active_of_full: Vec<u32>,
    full_of_active: Vec<u32>,
}

impl Grid {
    /// Uniform grid of `n` cells per axis on `[0,1]^dim`; cells whose center
    /// satisfies `obstacle` are deactivated.
    pub fn uniform(dim: usize, n: usize, obstacle: Option<&dyn Fn(&[f64; 2]) -> bool>) -> Result<Arc<Grid>> {
        if dim != 1 && dim != 2 {
            return Err(WfrError::InvalidArgument(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 2 {
            return Err(WfrError::InvalidArgument(format!("need n >= 2 cells per axis, got {n}")));
        }
        let full = n.pow(dim as u32);
        let w = (n as f64).powi(-(dim as i32));
        let mut centers = Vec::new();
        let mut weights = Vec::new();
        let mut active_of_full = vec![INACTIVE; full];
        let mut full_of_active = Vec::new();
        for idx in 0..full {
            let c = Self::center_of(dim, n, idx);
            if let Some(f) = obstacle {
                if f(&c) {
                    continue;
                }
            }
            active_of_full[idx] = centers.len() as u32;
            full_of_active.push(idx as u32);
            centers.push(c);
            weights.push(w);
        }
        if centers.is_empty() {
            return Err(WfrError::InvalidArgument("all cells are obstacles".into()));
        }
        Ok(Arc::new(Grid { dim, n, centers, weights, active_of_full, full_of_active }))
    }

    /// Uniform grid with the mask given explicitly (`true` = active), row-major.
    pub fn uniform_masked(dim: usize, n: usize, active: &[bool]) -> Result<Arc<Grid>> {
        if active.len() != n.pow(dim as u32) {
            return Err(WfrError::InvalidArgument("mask length does not match n^dim".into()));
        }
        let mask = active.to_vec();
        Grid::uniform(dim, n, Some(&move |c: &[f64; 2]| {
            let idx = Self::index_of(dim, n, c);
            !mask[idx]
        }))
    }

    /// Free-form weighted point cloud. Used for point-mass (Dirac) transport
    /// computations; carries no neighbor structure, so gradient-based
    /// operations are not available on it.
    pub fn from_points(dim: usize, points: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<Arc<Grid>> {
        if dim != 1 && dim != 2 {
            return Err(WfrError::InvalidArgument("dim must be 1 or 2".into()));
        }
        if points.is_empty() || points.len() != weights.len() {
            return Err(WfrError::InvalidArgument("points/weights size mismatch or empty".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(WfrError::InvalidArgument("weights must be positive and finite".into()));
        }
        let m = points.len();
        Ok(Arc::new(Grid {
            dim,
            n: 0,
            centers: points,
            weights,
            active_of_full: (0..m as u32).collect(),
            full_of_active: (0..m as u32).collect(),
        }))
    }

    /// Single unit-weight point.
    pub fn singleton(dim: usize, point: [f64; 2]) -> Result<Arc<Grid>> {
        Grid::from_points(dim, vec![point], vec![1.0])
    }

    fn center_of(dim: usize, n: usize, full_idx: usize) -> [f64; 2] {
        let h = 1.0 / n as f64;
        if dim == 1 {
            [(2 * full_idx + 1) as f64 * 0.5 * h, 0.0]
        } else {
            let iy = full_idx / n;
            let ix = full_idx % n;
            [(2 * ix + 1) as f64 * 0.5 * h, (2 * iy + 1) as f64 * 0.5 * h]
        }
    }

    fn index_of(dim: usize, n: usize, c: &[f64; 2]) -> usize {
        let to_axis = |x: f64| ((x * n as f64) as usize).min(n - 1);
        if dim == 1 {
            to_axis(c[0])
        } else {
            to_axis(c[1]) * n + to_axis(c[0])
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis; 0 for free-form point grids.
    pub fn cells_per_axis(&self) -> usize {
        self.n
    }

    /// Number of active cells.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn full_len(&self) -> usize {
        self.active_of_full.len()
    }

    /// Grid spacing `1/n`; `None` for point grids.
    pub fn spacing(&self) -> Option<f64> {
        (self.n > 0).then(|| 1.0 / self.n as f64)
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn center(&self, active_idx: usize) -> [f64; 2] {
        self.centers[active_idx]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, active_idx: usize) -> f64 {
        self.weights[active_idx]
    }

    /// Total Lebesgue volume of the active region.
    pub fn active_volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn full_index(&self, active_idx: usize) -> usize {
        self.full_of_active[active_idx] as usize
    }

    pub fn active_index(&self, full_idx: usize) -> Option<usize> {
        let a = self.active_of_full[full_idx];
        (a != INACTIVE).then(|| a as usize)
    }

    pub fn is_active_full(&self, full_idx: usize) -> bool {
        self.active_of_full[full_idx] != INACTIVE
    }

    /// Active-cell mask over the full row-major grid.
    pub fn active_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.full_len()];
        for &f in &self.full_of_active {
            m[f as usize] = true;
        }
        m
    }

    /// Neighbor of an active cell along `axis` in direction `dir` (-1 or +1),
    /// if inside the box and active. Point grids have no neighbors.
    pub fn neighbor(&self, active_idx: usize, axis: usize, dir: i64) -> Option<usize> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as i64;
        let full = self.full_of_active[active_idx] as i64;
        let (ix, iy) = if self.dim == 1 { (full, 0) } else { (full % n, full / n) };
        let (jx, jy) = match axis {
            0 => (ix + dir, iy),
            _ => (ix, iy + dir),
        };
        if jx < 0 || jx >= n || jy < 0 || jy >= n {
            return None;
        }
        self.active_index((jy * n + jx) as usize)
    }

    /// Axis index range of active columns intersecting `[x-r, x+r]` (used by
    /// the truncated kernel builder). Returns full-grid axis indices.
    pub fn axis_window(&self, x: f64, r: f64) -> (usize, usize) {
        debug_assert!(self.n > 0);
        let n = self.n as f64;
        let lo = ((x - r) * n).floor().max(0.0) as usize;
        let hi = (((x + r) * n).ceil() as usize).min(self.n - 1).max(lo);
        (lo.min(self.n - 1), hi)
    }

    /// Structural equality of the discrete domain (same partition and mask).
    pub fn same_domain(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.n == other.n
            && self.full_of_active == other.full_of_active
            && self.centers == other.centers
            && self.weights == other.weights
    }
}

/// Euclidean distance respecting the grid dimension.
pub fn point_distance(dim: usize, a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    if dim == 1 {
        dx.abs()
    } else {
        let dy = a[1] - b[1];
        dx.hypot(dy)
    }
}
