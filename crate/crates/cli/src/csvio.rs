//! Curve CSV ingestion and emission.
//!
//! Rows are curves and columns are grid points. An optional first row holds
//! grid coordinates; without it the grid is equispaced on `[0, 1]`. In
//! group-column mode the first column labels each row's sample.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use fwmw::{Grid, Sample, WeightMode};

/// Relative tolerance, in units of the grid step, for header coordinates.
pub const GRID_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CsvLayout {
    /// First row holds grid coordinates.
    pub header: bool,
    /// First column holds a group label (combined-file mode).
    pub group_column: bool,
}

#[derive(Debug, Clone)]
pub struct CurveTable {
    pub coords: Option<Vec<f64>>,
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_cell(cell: &str, source: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| anyhow!("{source}: row {row}, column {col}: `{cell}` is not a number"))?;
    if !v.is_finite() {
        bail!("{source}: row {row}, column {col}: value is not finite");
    }
    Ok(v)
}

/// Parses a curve table; row and column numbers in errors are 1-based.
pub fn read_table(reader: impl Read, source: &str, layout: CsvLayout) -> Result<CurveTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let skip = usize::from(layout.group_column);
    let mut coords = None;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.with_context(|| format!("{source}: row {line}: unreadable record"))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let cells: Vec<&str> = rec.iter().collect();
        if cells.len() <= skip {
            bail!("{source}: row {line}: no curve values");
        }
        let w = cells.len() - skip;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                bail!("{source}: row {line}: expected {expected} values, found {w}")
            }
            _ => {}
        }
        let values = cells[skip..]
            .iter()
            .enumerate()
            .map(|(j, c)| parse_cell(c, source, line, j + 1 + skip))
            .collect::<Result<Vec<f64>>>()?;
        if layout.header && coords.is_none() && rows.is_empty() {
            coords = Some(values);
            continue;
        }
        if layout.group_column {
            labels.push(cells[0].to_string());
        }
        rows.push(values);
    }
    if rows.is_empty() {
        bail!("{source}: no curves");
    }
    Ok(CurveTable { coords, labels, rows })
}

pub fn read_file(path: &Path, layout: CsvLayout) -> Result<CurveTable> {
    let f = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_table(f, &path.display().to_string(), layout)
}

/// Grid for `d` columns, from header coordinates when present. Euclidean
/// weights do not depend on the coordinates, so unevenly spaced headers are
/// accepted there; trapezoid weights need an equispaced grid.
pub fn build_grid(coords: Option<&[f64]>, d: usize, mode: WeightMode) -> Result<Grid> {
    let Some(pts) = coords else {
        return Ok(if d == 1 { Grid::new(0.0, 0.0, 1, mode)? } else { Grid::unit(d, mode)? });
    };
    match Grid::from_points(pts, mode, GRID_TOL) {
        Ok(g) => Ok(g),
        Err(e) if mode == WeightMode::Euclidean && pts.len() > 1 && pts[pts.len() - 1] > pts[0] => {
            eprintln!("warning: {e}; euclidean weights ignore coordinates");
            Ok(Grid::new(pts[0], pts[pts.len() - 1], d, mode)?)
        }
        Err(e) => Err(e.into()),
    }
}

/// The two samples, from separate files or one labelled file.
pub fn load_samples(paths: &[&Path], layout: CsvLayout, mode: WeightMode) -> Result<(Sample, Sample)> {
    let (x_rows, y_rows, coords) = match (layout.group_column, paths) {
        (true, [one]) => {
            let t = read_file(one, layout)?;
            let first = t.labels[0].clone();
            let mut x = Vec::new();
            let mut y = Vec::new();
            let mut second: Option<&str> = None;
            for (label, row) in t.labels.iter().zip(t.rows) {
                if *label == first {
                    x.push(row);
                } else {
                    match second {
                        None => second = Some(label),
                        Some(s) if s != label => {
                            bail!("{}: more than two group labels (`{first}`, `{s}`, `{label}`)", one.display())
                        }
                        _ => {}
                    }
                    y.push(row);
                }
            }
            if y.is_empty() {
                bail!("{}: only one group label (`{first}`)", one.display());
            }
            (x, y, t.coords)
        }
        (false, [xp, yp]) => {
            let tx = read_file(xp, layout)?;
            let ty = read_file(yp, layout)?;
            if tx.rows[0].len() != ty.rows[0].len() {
                bail!(
                    "column count differs: {} has {}, {} has {}",
                    xp.display(),
                    tx.rows[0].len(),
                    yp.display(),
                    ty.rows[0].len()
                );
            }
            if let (Some(a), Some(b)) = (&tx.coords, &ty.coords) {
                if a != b {
                    bail!("grid coordinates differ between {} and {}", xp.display(), yp.display());
                }
            }
            (tx.rows, ty.rows, tx.coords.or(ty.coords))
        }
        (true, _) => bail!("group-column mode takes exactly one file"),
        (false, _) => bail!("expected two files, one per sample"),
    };
    for (name, rows) in [("first", &x_rows), ("second", &y_rows)] {
        if rows.len() < 2 {
            bail!("{name} sample has {} curve(s); need at least 2", rows.len());
        }
    }
    let d = x_rows[0].len();
    let grid = Arc::new(build_grid(coords.as_deref(), d, mode)?);
    Ok((Sample::from_rows(grid.clone(), x_rows)?, Sample::from_rows(grid, y_rows)?))
}

/// Writes curves with a grid-coordinate header row.
pub fn write_sample(out: impl Write, sample: &Sample, label: Option<&str>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<String> = Vec::new();
    if label.is_some() {
        head.push("group".into());
    }
    head.extend(sample.grid().points().iter().map(|t| t.to_string()));
    w.write_record(&head)?;
    for c in sample.curves() {
        let mut rec: Vec<String> = label.map(|l| vec![l.to_string()]).unwrap_or_default();
        rec.extend(c.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
