//! Stabilized Gibbs kernel `K_ij = exp((u_i + v_j - c(x_i, x_j)) / eps)`,
//! stored dense or truncated-sparse (CSR). Applications are deterministic:
//! each output entry is a serial sum in fixed index order, so results are
//! bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::cost::CostSpec;
use crate::grid::Grid;

/// Exponents above this are clamped before `exp` so sums stay finite; a
/// nonzero clamp count signals the solver to absorb and rebuild.
pub const KERNEL_EXP_CAP: f64 = 350.0;

/// Default sparse truncation threshold: ln(1e-100).
pub const DEFAULT_TRUNC_LOG_THRESHOLD: f64 = -230.258_509_299_404_57;

/// Dense mode is allowed up to this many row*col pairs when `Auto`; larger
/// problems use truncated-sparse storage, whose footprint at small
/// regularization is a narrow band around the plan support.
const DENSE_AUTO_LIMIT: usize = 65_536;

/// Rows at or above this count are dispatched in parallel.
const PAR_ROW_THRESHOLD: usize = 256;

/// Fixed chunk size for parallel transpose application; partial outputs are
/// merged in chunk order, so the reduction is independent of thread count.
const TRANSPOSE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    Auto,
    Dense,
    Sparse,
}

/// Four-lane dot product; breaks the single-accumulator dependency chain
/// while keeping a fixed summation order.
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += s * a`, four lanes.
fn axpy_unrolled(s: f64, a: &[f64], out: &mut [f64]) {
    let n = a.len().min(out.len());
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        out[k] += s * a[k];
        out[k + 1] += s * a[k + 1];
        out[k + 2] += s * a[k + 2];
        out[k + 3] += s * a[k + 3];
    }
    for k in 4 * chunks..n {
        out[k] += s * a[k];
    }
}

#[derive(Debug)]
enum Storage {
    Dense(Vec<f64>),
    Sparse { row_ptr: Vec<usize>, cols: Vec<u32>, vals: Vec<f64> },
}

/// Built kernel plus bookkeeping about rows that came out empty.
#[derive(Debug)]
pub struct StabilizedKernel {
    n_rows: usize,
    n_cols: usize,
    storage: Storage,
    /// Entries whose exponent hit [`KERNEL_EXP_CAP`].
    pub clamped_entries: usize,
    /// Rows with at least one stored entry.
    row_nonempty: Vec<bool>,
    /// Rows whose every admissible column has infinite cost (permanently
    /// uncoupled; only meaningful where `row_nonempty` is false).
    row_all_infinite_cost: Vec<bool>,
}

pub struct KernelBuildSpec<'a> {
    pub grid_a: &'a Grid,
    pub grid_b: &'a Grid,
    pub cost: CostSpec,
    pub eps: f64,
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub row_live: &'a [bool],
    pub col_live: &'a [bool],
    pub mode: KernelMode,
    pub trunc_log_threshold: f64,
}

impl StabilizedKernel {
    pub fn build(spec: &KernelBuildSpec) -> StabilizedKernel {
        let n_rows = spec.grid_a.len();
        let n_cols = spec.grid_b.len();
        debug_assert_eq!(spec.u.len(), n_rows);
        debug_assert_eq!(spec.v.len(), n_cols);
        let dense = match spec.mode {
            KernelMode::Dense => true,
            KernelMode::Sparse => false,
            KernelMode::Auto => n_rows.saturating_mul(n_cols) <= DENSE_AUTO_LIMIT,
        };
        if dense {
            Self::build_dense(spec, n_rows, n_cols)
        } else {
            Self::build_sparse(spec, n_rows, n_cols)
        }
    }

    fn build_dense(spec: &KernelBuildSpec, n_rows: usize, n_cols: usize) -> StabilizedKernel {
        let dim = spec.grid_a.dim();
        let mut vals = vec![0.0; n_rows * n_cols];
        let mut row_nonempty = vec![false; n_rows];
        let mut row_all_inf = vec![false; n_rows];
        let clamped: usize = vals
            .par_chunks_mut(n_cols)
            .zip(row_nonempty.par_iter_mut())
            .zip(row_all_inf.par_iter_mut())
            .enumerate()
            .map(|(i, ((row, nonempty), all_inf))| {
                if !spec.row_live[i] {
                    return 0;
                }
                let xi = spec.grid_a.center(i);
                let ui = spec.u[i];
                let mut clamped = 0;
                let mut any_finite_cost = false;
                for j in 0..n_cols {
                    if !spec.col_live[j] {
                        continue;
                    }
                    let c = spec.cost.eval(dim, &xi, &spec.grid_b.center(j));
                    if c.is_infinite() {
                        continue;
                    }
                    any_finite_cost = true;
                    let mut e = (ui + spec.v[j] - c) / spec.eps;
                    if e > KERNEL_EXP_CAP {
                        e = KERNEL_EXP_CAP;
                        clamped += 1;
                    }
                    let k = e.exp();
                    if k > 0.0 {
                        row[j] = k;
                        *nonempty = true;
                    }
                }
                *all_inf = !any_finite_cost;
                clamped
            })
            .sum();
        StabilizedKernel {
            n_rows,
            n_cols,
            storage: Storage::Dense(vals),
            clamped_entries: clamped,
            row_nonempty,
            row_all_infinite_cost: row_all_inf,
        }
    }

    fn build_sparse(spec: &KernelBuildSpec, n_rows: usize, n_cols: usize) -> StabilizedKernel {
        let dim = spec.grid_a.dim();
        // Largest dual offset on the column side bounds the reach of a row.
        let v_max = spec
            .v
            .iter()
            .zip(spec.col_live)
            .filter(|&(_, &l)| l)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let windowed = spec.grid_b.cells_per_axis() > 0;

        struct Row {
            cols: Vec<u32>,
            vals: Vec<f64>,
            clamped: usize,
            all_inf: bool,
        }
        let build_row = |i: usize| -> Row {
            let mut r = Row { cols: Vec::new(), vals: Vec::new(), clamped: 0, all_inf: false };
            if !spec.row_live[i] || !v_max.is_finite() {
                return r;
            }
            let xi = spec.grid_a.center(i);
            let ui = spec.u[i];
            // entries kept when (u_i + v_j - c)/eps >= threshold
            let cost_cap = ui + v_max - spec.eps * spec.trunc_log_threshold;
            let mut any_finite_cost = false;
            let mut visit = |j: usize| {
                if !spec.col_live[j] {
                    return;
                }
                let c = spec.cost.eval(dim, &xi, &spec.grid_b.center(j));
                if c.is_infinite() {
                    return;
                }
                any_finite_cost = true;
                let mut e = (ui + spec.v[j] - c) / spec.eps;
                if e < spec.trunc_log_threshold {
                    return;
                }
                if e > KERNEL_EXP_CAP {
                    e = KERNEL_EXP_CAP;
                    r.clamped += 1;
                }
                let k = e.exp();
                if k > 0.0 {
                    r.cols.push(j as u32);
                    r.vals.push(k);
                }
            };
            let radius = spec.cost.radius_for_cost_cap(cost_cap);
            if windowed && radius < 1.0 {
                let n = spec.grid_b.cells_per_axis();
                let (x0, x1) = spec.grid_b.axis_window(xi[0], radius);
                if dim == 1 {
                    for jx in x0..=x1 {
                        if let Some(j) = spec.grid_b.active_index(jx) {
                            visit(j);
                        }
                    }
                } else {
                    let (y0, y1) = spec.grid_b.axis_window(xi[1], radius);
                    for jy in y0..=y1 {
                        for jx in x0..=x1 {
                            if let Some(j) = spec.grid_b.active_index(jy * n + jx) {
                                visit(j);
                            }
                        }
                    }
                }
                // The window can only omit columns with finite cost above the
                // cap, so emptiness here never means "all infinite".
                any_finite_cost = true;
            } else {
                for j in 0..n_cols {
                    visit(j);
                }
            }
            r.all_inf = !any_finite_cost;
            r
        };

        let rows: Vec<Row> = if n_rows >= PAR_ROW_THRESHOLD {
            (0..n_rows).into_par_iter().map(build_row).collect()
        } else {
            (0..n_rows).map(build_row).collect()
        };

        let nnz: usize = rows.iter().map(|r| r.cols.len()).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        let mut row_nonempty = vec![false; n_rows];
        let mut row_all_inf = vec![false; n_rows];
        let mut clamped = 0;
        row_ptr.push(0);
        for (i, r) in rows.into_iter().enumerate() {
            row_nonempty[i] = !r.cols.is_empty();
            row_all_inf[i] = r.all_inf;
            clamped += r.clamped;
            cols.extend_from_slice(&r.cols);
            vals.extend_from_slice(&r.vals);
            row_ptr.push(cols.len());
        }
        StabilizedKernel {
            n_rows,
            n_cols,
            storage: Storage::Sparse { row_ptr, cols, vals },
            clamped_entries: clamped,
            row_nonempty,
            row_all_infinite_cost: row_all_inf,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.iter().filter(|&&x| x > 0.0).count(),
            Storage::Sparse { vals, .. } => vals.len(),
        }
    }

    pub fn row_nonempty(&self, i: usize) -> bool {
        self.row_nonempty[i]
    }

    pub fn row_all_infinite_cost(&self, i: usize) -> bool {
        self.row_all_infinite_cost[i]
    }

    /// `out_i = sum_j K_ij x_j` (callers pass `x = b .* w`). Each row is a
    /// serial four-lane sum in fixed index order: deterministic for any
    /// thread count.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        match &self.storage {
            Storage::Dense(vals) => {
                let n_cols = self.n_cols;
                let body = |(o, row): (&mut f64, &[f64])| {
                    *o = dot_unrolled(row, &x[..n_cols]);
                };
                if self.n_rows >= PAR_ROW_THRESHOLD {
                    out.par_iter_mut().zip(vals.par_chunks(n_cols)).for_each(body);
                } else {
                    out.iter_mut().zip(vals.chunks(n_cols)).for_each(body);
                }
            }
            Storage::Sparse { row_ptr, cols, vals } => {
                let body = |i: usize, o: &mut f64| {
                    let mut acc = 0.0;
                    for k in row_ptr[i]..row_ptr[i + 1] {
                        acc += vals[k] * x[cols[k] as usize];
                    }
                    *o = acc;
                };
                if self.n_rows >= PAR_ROW_THRESHOLD {
                    out.par_iter_mut().enumerate().for_each(|(i, o)| body(i, o));
                } else {
                    out.iter_mut().enumerate().for_each(|(i, o)| body(i, o));
                }
            }
        }
    }

    /// `out_j = sum_i K_ij x_i`. Row-major scatter with fixed-size row
    /// chunks; the chunk partials are merged in chunk order, so the result
    /// does not depend on the thread count.
    pub fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_rows);
        debug_assert_eq!(out.len(), self.n_cols);
        let n_cols = self.n_cols;
        let scatter_chunk = |chunk_idx: usize, partial: &mut [f64]| {
            let lo = chunk_idx * TRANSPOSE_CHUNK;
            let hi = (lo + TRANSPOSE_CHUNK).min(self.n_rows);
            match &self.storage {
                Storage::Dense(vals) => {
                    for i in lo..hi {
                        let xi = x[i];
                        if xi == 0.0 {
                            continue;
                        }
                        axpy_unrolled(xi, &vals[i * n_cols..(i + 1) * n_cols], partial);
                    }
                }
                Storage::Sparse { row_ptr, cols, vals } => {
                    for i in lo..hi {
                        let xi = x[i];
                        if xi == 0.0 {
                            continue;
                        }
                        for k in row_ptr[i]..row_ptr[i + 1] {
                            partial[cols[k] as usize] += vals[k] * xi;
                        }
                    }
                }
            }
        };
        let n_chunks = self.n_rows.div_ceil(TRANSPOSE_CHUNK);
        if self.n_rows >= PAR_ROW_THRESHOLD && n_chunks > 1 {
            let partials: Vec<Vec<f64>> = (0..n_chunks)
                .into_par_iter()
                .map(|c| {
                    let mut p = vec![0.0; n_cols];
                    scatter_chunk(c, &mut p);
                    p
                })
                .collect();
            out.fill(0.0);
            for p in &partials {
                for (o, &v) in out.iter_mut().zip(p) {
                    *o += v;
                }
            }
        } else {
            out.fill(0.0);
            for c in 0..n_chunks {
                scatter_chunk(c, out);
            }
        }
    }

    /// Streams stored entries `(i, j, K_ij)` in row-major order.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, f64)) {
        match &self.storage {
            Storage::Dense(vals) => {
                for i in 0..self.n_rows {
                    let row = &vals[i * self.n_cols..(i + 1) * self.n_cols];
                    for (j, &k) in row.iter().enumerate() {
                        if k > 0.0 {
                            f(i, j, k);
                        }
                    }
                }
            }
            Storage::Sparse { row_ptr, cols, vals } => {
                for i in 0..self.n_rows {
                    for k in row_ptr[i]..row_ptr[i + 1] {
                        f(i, cols[k] as usize, vals[k]);
                    }
                }
            }
        }
    }

    /// `sum_ij c(x_i, x_j) K_ij w_i w_j` over stored entries.
    pub fn transport_cost(&self, grid_a: &Grid, grid_b: &Grid, cost: CostSpec) -> f64 {
        let dim = grid_a.dim();
        let mut acc = 0.0;
        self.for_each_entry(|i, j, k| {
            let c = cost.eval(dim, &grid_a.center(i), &grid_b.center(j));
            acc += c * k * grid_a.weight(i) * grid_b.weight(j);
        });
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn build_pair(mode: KernelMode, trunc: f64, eps: f64, u: &[f64], v: &[f64], g: &Grid) -> StabilizedKernel {
        let live = vec![true; g.len()];
        StabilizedKernel::build(&KernelBuildSpec {
            grid_a: g,
            grid_b: g,
            cost: CostSpec::LogCos,
            eps,
            u,
            v,
            row_live: &live,
            col_live: &live,
            mode,
            trunc_log_threshold: trunc,
        })
    }

    #[test]
    fn unit_entries_for_zero_cost_zero_duals() {
        let g = Grid::from_points(1, vec![[0.3, 0.0]], vec![1.0]).unwrap();
        let k = build_pair(KernelMode::Dense, f64::NEG_INFINITY, 0.5, &[0.0], &[0.0], &g);
        let mut out = [0.0];
        k.apply(&[0.5], &mut out);
        assert_eq!(out[0], 0.5);
    }

    #[test]
    fn direct_substitution_quarter_pi() {
        let g = Grid::from_points(1, vec![[0.0, 0.0], [std::f64::consts::FRAC_PI_4, 0.0]], vec![1.0, 1.0]).unwrap();
        let k = build_pair(KernelMode::Dense, f64::NEG_INFINITY, 1.0, &[0.0, 0.0], &[0.0, 0.0], &g);
        let mut out = [0.0, 0.0];
        k.apply(&[0.0, 1.0], &mut out);
        assert!((out[0] - 0.5).abs() < 1e-14, "{}", out[0]);
    }

    #[test]
    fn truncation_drops_below_threshold() {
        // two cells, (u+v-c)/eps = -11 for the off-diagonal entry
        let d = 0.1_f64;
        let c = CostSpec::LogCos.eval_radial(d);
        let eps = c / 11.0;
        let g = Grid::from_points(1, vec![[0.2, 0.0], [0.2 + d, 0.0]], vec![1.0, 1.0]).unwrap();
        let k = build_pair(KernelMode::Sparse, -10.0, eps, &[0.0, 0.0], &[0.0, 0.0], &g);
        assert_eq!(k.nnz(), 2); // only the diagonal survives
        let k_all = build_pair(KernelMode::Sparse, -12.0, eps, &[0.0, 0.0], &[0.0, 0.0], &g);
        assert_eq!(k_all.nnz(), 4);
    }

    #[test]
    fn two_cell_hand_evaluated_apply() {
        // centers 0.25/0.75, u=v=0, eps=1, b.*w = (0.5, 0.5)
        let g = Grid::uniform(1, 2, None).unwrap();
        let k = build_pair(KernelMode::Dense, f64::NEG_INFINITY, 1.0, &[0.0, 0.0], &[0.0, 0.0], &g);
        let mut out = [0.0, 0.0];
        k.apply(&[0.5, 0.5], &mut out);
        let expect = 0.5 * (1.0 + 0.5_f64.cos().powi(2));
        assert!((out[0] - expect).abs() < 1e-12, "{} vs {expect}", out[0]);
        assert!((out[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn sparse_matches_dense_and_brute_force() {
        let g = Grid::uniform(1, 16, None).unwrap();
        let n = g.len();
        let u: Vec<f64> = (0..n).map(|i| 0.01 * (i as f64).sin()).collect();
        let v: Vec<f64> = (0..n).map(|i| 0.02 * (i as f64 * 0.7).cos()).collect();
        let eps = 0.05;
        let kd = build_pair(KernelMode::Dense, f64::NEG_INFINITY, eps, &u, &v, &g);
        let ks = build_pair(KernelMode::Sparse, f64::NEG_INFINITY, eps, &u, &v, &g);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin().abs() / 16.0).collect();
        let mut od = vec![0.0; n];
        let mut os = vec![0.0; n];
        kd.apply(&x, &mut od);
        ks.apply(&x, &mut os);
        // brute force double loop
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let c = CostSpec::LogCos.eval(1, &g.center(i), &g.center(j));
                acc += ((u[i] + v[j] - c) / eps).exp() * x[j];
            }
            assert!((od[i] - acc).abs() <= 1e-14 * acc.abs().max(1.0), "dense row {i}");
            assert!((os[i] - acc).abs() <= 1e-14 * acc.abs().max(1.0), "sparse row {i}");
        }
        let mut otd = vec![0.0; n];
        let mut ots = vec![0.0; n];
        kd.apply_transpose(&x, &mut otd);
        ks.apply_transpose(&x, &mut ots);
        for j in 0..n {
            assert!((otd[j] - ots[j]).abs() <= 1e-13 * otd[j].abs().max(1.0));
        }
    }

    #[test]
    fn windowed_sparse_matches_full_scan() {
        // small eps so the window actually truncates
        let g = Grid::uniform(1, 64, None).unwrap();
        let n = g.len();
        let u = vec![0.0; n];
        let v = vec![0.0; n];
        let eps = 1e-4;
        let ks = build_pair(KernelMode::Sparse, DEFAULT_TRUNC_LOG_THRESHOLD, eps, &u, &v, &g);
        assert!(ks.nnz() < n * n);
        let mut count = 0;
        let mut consistent = true;
        ks.for_each_entry(|i, j, k| {
            count += 1;
            let c = CostSpec::LogCos.eval(1, &g.center(i), &g.center(j));
            let rel = (eps * k.ln() - (u[i] + v[j] - c)).abs() / c.abs().max(1e-30);
            if rel > 1e-12 && c > 1e-12 {
                consistent = false;
            }
        });
        assert_eq!(count, ks.nnz());
        assert!(consistent, "stored entries must satisfy eps*log K = u+v-c");
    }

    #[test]
    fn infinite_cost_rows_flagged() {
        let g1 = Grid::singleton(1, [0.0, 0.0]).unwrap();
        let g2 = Grid::singleton(1, [2.0, 0.0]).unwrap(); // distance 2 > pi/2
        let k = StabilizedKernel::build(&KernelBuildSpec {
            grid_a: &g1,
            grid_b: &g2,
            cost: CostSpec::LogCos,
            eps: 1.0,
            u: &[0.0],
            v: &[0.0],
            row_live: &[true],
            col_live: &[true],
            mode: KernelMode::Dense,
            trunc_log_threshold: f64::NEG_INFINITY,
        });
        assert!(!k.row_nonempty(0));
        assert!(k.row_all_infinite_cost(0));
    }
}
