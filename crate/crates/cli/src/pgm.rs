//! Plain (P2) 16-bit PGM output for 2-D fields, and mask loading for
//! obstacle layouts. Row 0 is the y = 0 edge of the box.

use std::io::{BufWriter, Write};
use std::path::Path;

use wfr_core::{Grid, Result, WfrError};

/// Writes a per-active-cell field as a P2 image, mapping `[lo, hi]` linearly
/// to `[0, 65535]` (clamped). Inactive cells are written as 0.
pub fn write_pgm(path: &Path, grid: &Grid, values: &[f64], lo: f64, hi: f64) -> Result<()> {
    if grid.dim() != 2 {
        return Err(WfrError::InvalidArgument("PGM output requires a 2-D grid".into()));
    }
    let n = grid.cells_per_axis();
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "P2\n{n} {n}\n65535")?;
    for iy in 0..n {
        let mut row = String::with_capacity(n * 6);
        for ix in 0..n {
            let v = match grid.active_index(iy * n + ix) {
                Some(a) => ((values[a] - lo) * scale).clamp(0.0, 65535.0).round() as u32,
                None => 0,
            };
            if ix > 0 {
                row.push(' ');
            }
            row.push_str(&v.to_string());
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a P2 mask: pixels darker than half of maxval are obstacles.
/// Returns the per-cell activity in row-major order and the image side.
pub fn read_pgm_mask(path: &Path) -> Result<(usize, Vec<bool>)> {
    let text = std::fs::read_to_string(path)?;
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    let magic = tokens.next().ok_or_else(|| WfrError::Parse("empty PGM".into()))?;
    if magic != "P2" {
        return Err(WfrError::Parse(format!("unsupported PGM magic {magic:?} (plain P2 only)")));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| WfrError::Parse(format!("PGM truncated before {what}")))?
            .parse()
            .map_err(|e| WfrError::Parse(format!("PGM {what}: {e}")))
    };
    let w = next_usize("width")?;
    let h = next_usize("height")?;
    let maxval = next_usize("maxval")?;
    if w != h {
        return Err(WfrError::Parse(format!("obstacle mask must be square, got {w}x{h}")));
    }
    if maxval == 0 {
        return Err(WfrError::Parse("PGM maxval must be positive".into()));
    }
    let mut active = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let v = next_usize("pixel")?;
        active.push(v > maxval / 2);
    }
    Ok((w, active))
}

#[cfg(test)]
mod tests {
    use super::*;
    use wfr_core::Grid;

    #[test]
    fn pgm_roundtrip_as_mask() {
        let dir = std::env::temp_dir().join("wfr_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let grid = Grid::uniform(2, 8, Some(&|c: &[f64; 2]| c[0] > 0.7 && c[1] > 0.7)).unwrap();
        let vals = vec![1.0; grid.len()];
        let p = dir.join("mask.pgm");
        write_pgm(&p, &grid, &vals, 0.0, 1.0).unwrap();
        let (n, active) = read_pgm_mask(&p).unwrap();
        assert_eq!(n, 8);
        assert_eq!(active, grid.active_mask());
    }
}
