//! Nonnegative measures as densities relative to the discretized Lebesgue
//! measure `sum_i w_i delta_{x_i}`, plus the density CSV format.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Result, WfrError};
use crate::grid::{point_distance, Grid};

/// Density vector over the active cells of a grid.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    grid: Arc<Grid>,
    density: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(grid: Arc<Grid>, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(WfrError::InvalidArgument(format!(
                "density length {} does not match active cell count {}",
                density.len(),
                grid.len()
            )));
        }
        if density.iter().any(|&a| !a.is_finite() || a < 0.0) {
            return Err(WfrError::InvalidArgument("density entries must be finite and >= 0".into()));
        }
        Ok(DiscreteMeasure { grid, density })
    }

    pub fn zero(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        DiscreteMeasure { grid, density: vec![0.0; n] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Total mass `sum_i alpha_i w_i`.
    pub fn mass(&self) -> f64 {
        mass_of(&self.density, &self.grid)
    }
}

pub fn mass_of(density: &[f64], grid: &Grid) -> f64 {
    density.iter().zip(grid.weights()).map(|(a, w)| a * w).sum()
}

/// Cell-averaged indicator of a region: each cell gets the fraction of its
/// 4^dim stratified subsamples lying inside the region, so frontier cells are
/// fractional rather than sharp.
pub fn discretize_indicator(grid: &Arc<Grid>, region: impl Fn(&[f64; 2]) -> bool) -> DiscreteMeasure {
    const S: usize = 4;
    let dim = grid.dim();
    let h = grid.spacing().unwrap_or(0.0);
    let mut density = Vec::with_capacity(grid.len());
    for c in grid.centers() {
        if h == 0.0 {
            density.push(if region(c) { 1.0 } else { 0.0 });
            continue;
        }
        let mut hits = 0usize;
        let mut total = 0usize;
        for kx in 0..S {
            let x = c[0] + ((2 * kx + 1) as f64 / (2 * S) as f64 - 0.5) * h;
            if dim == 1 {
                total += 1;
                if region(&[x, 0.0]) {
                    hits += 1;
                }
            } else {
                for ky in 0..S {
                    let y = c[1] + ((2 * ky + 1) as f64 / (2 * S) as f64 - 0.5) * h;
                    total += 1;
                    if region(&[x, y]) {
                        hits += 1;
                    }
                }
            }
        }
        density.push(hits as f64 / total as f64);
    }
    DiscreteMeasure { grid: grid.clone(), density }
}

/// Indicator of the ball around `center` of radius `r`.
pub fn ball_indicator(grid: &Arc<Grid>, center: [f64; 2], r: f64) -> DiscreteMeasure {
    let dim = grid.dim();
    discretize_indicator(grid, move |p| point_distance(dim, p, &center) <= r)
}

/// Discrete relative entropy `sum_i (b log(b/a) - b + a) w_i`, with the
/// conventions H(0|0) = 0 and H(b|0) = +inf for b > 0.
pub fn relative_entropy(beta: &[f64], alpha: &[f64], grid: &Grid) -> f64 {
    assert_eq!(beta.len(), grid.len());
    assert_eq!(alpha.len(), grid.len());
    let mut acc = 0.0;
    for ((&b, &a), &w) in beta.iter().zip(alpha).zip(grid.weights()) {
        if b == 0.0 {
            acc += a * w;
        } else if a == 0.0 {
            return f64::INFINITY;
        } else {
            acc += (b * (b / a).ln() - b + a) * w;
        }
    }
    acc
}

/// Writes a value vector in the density CSV schema
/// `i,x[,y],w,alpha` (17 significant digits, row-major over active cells).
pub fn write_density_csv(path: &Path, grid: &Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(WfrError::InvalidArgument("value vector does not match grid".into()));
    }
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    if grid.dim() == 1 {
        writeln!(out, "i,x,w,alpha")?;
        for (a, &v) in values.iter().enumerate() {
            let c = grid.center(a);
            writeln!(out, "{},{:.16e},{:.16e},{:.16e}", grid.full_index(a), c[0], grid.weight(a), v)?;
        }
    } else {
        writeln!(out, "i,x,y,w,alpha")?;
        for (a, &v) in values.iter().enumerate() {
            let c = grid.center(a);
            writeln!(out, "{},{:.16e},{:.16e},{:.16e},{:.16e}", grid.full_index(a), c[0], c[1], grid.weight(a), v)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Loads a density CSV written by [`write_density_csv`] against the same
/// grid; cell indices, coordinates and weights must match bit-exactly.
pub fn read_density_csv(path: &Path, grid: &Grid) -> Result<Vec<f64>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| WfrError::Parse("empty density CSV".into()))??;
    let expected = if grid.dim() == 1 { "i,x,w,alpha" } else { "i,x,y,w,alpha" };
    if header.trim() != expected {
        return Err(WfrError::Parse(format!("bad header {header:?}, expected {expected:?}")));
    }
    let ncols = if grid.dim() == 1 { 4 } else { 5 };
    let mut values = Vec::with_capacity(grid.len());
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(WfrError::Parse(format!("row {row}: expected {ncols} fields")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| WfrError::Parse(format!("row {row}: {e}")))
        };
        let i: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| WfrError::Parse(format!("row {row}: {e}")))?;
        if row >= grid.len() || grid.full_index(row) != i {
            return Err(WfrError::Parse(format!("row {row}: cell index {i} does not match grid")));
        }
        let c = grid.center(row);
        let x = parse(fields[1])?;
        let (w, v) = if grid.dim() == 1 {
            (parse(fields[2])?, parse(fields[3])?)
        } else {
            let y = parse(fields[2])?;
            if y != c[1] {
                return Err(WfrError::Parse(format!("row {row}: y coordinate mismatch")));
            }
            (parse(fields[3])?, parse(fields[4])?)
        };
        if x != c[0] || w != grid.weight(row) {
            return Err(WfrError::Parse(format!("row {row}: coordinate/weight mismatch")));
        }
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(WfrError::Parse("density CSV row count does not match grid".into()));
    }
    Ok(values)
}
