//! CSV formats. Conventions across every file: one header row, '.' as
//! the decimal separator, '\n' line endings, reals at 17 significant
//! digits so values round-trip through text exactly.

use crate::error::CliError;
use resflow_core::{AnalysisGrid, EpochRecord, LabeledSet};
use std::fmt::Write as _;
use std::path::Path;

/// 17 significant digits, scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset(path: &Path, set: &LabeledSet) -> Result<(), CliError> {
    let mut out = String::from("x1,x2,label\n");
    for (p, l) in set.points.iter().zip(&set.labels) {
        let _ = writeln!(out, "{},{},{}", fmt_f64(p[0]), fmt_f64(p[1]), l);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<LabeledSet, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read dataset {}: {e}", path.display())))?;
    let bad = |line: usize, msg: String| {
        CliError::Input(format!("{} line {}: {msg}", path.display(), line + 1))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "x1,x2,label")) => {}
        _ => return Err(CliError::Input(format!("{}: expected header x1,x2,label", path.display()))),
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let mut next_f64 = |what: &str| -> Result<f64, CliError> {
            let col = cols
                .next()
                .ok_or_else(|| bad(i, format!("missing {what} column")))?;
            let v: f64 = col
                .parse()
                .map_err(|e| bad(i, format!("bad {what} value '{col}': {e}")))?;
            if !v.is_finite() {
                return Err(bad(i, format!("non-finite {what} value")));
            }
            Ok(v)
        };
        let x1 = next_f64("x1")?;
        let x2 = next_f64("x2")?;
        let label_col = cols
            .next()
            .ok_or_else(|| bad(i, "missing label column".into()))?;
        let label: u8 = label_col
            .parse()
            .map_err(|e| bad(i, format!("bad label '{label_col}': {e}")))?;
        if label > 1 {
            return Err(bad(i, format!("label must be 0 or 1, got {label}")));
        }
        if cols.next().is_some() {
            return Err(bad(i, "too many columns".into()));
        }
        points.push([x1, x2]);
        labels.push(label);
    }
    if points.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(LabeledSet { points, labels })
}

pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<(), CliError> {
    let mut out = String::from("epoch,bce,wd_term,ic_term,total,train_accuracy\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.bce),
            fmt_f64(r.wd),
            fmt_f64(r.ic),
            fmt_f64(r.total),
            fmt_f64(r.accuracy)
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Cell-center grid values; divergent cells serialize as `nan`.
/// Rows iterate y ascending, x ascending within a row.
pub fn write_grid(path: &Path, grid: &AnalysisGrid) -> Result<(), CliError> {
    let mut out = String::from("x1,x2,value\n");
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (x, y) = grid.cell_center(ix, iy);
            let value = match grid.value(ix, iy) {
                Some(v) => fmt_f64(v),
                None => "nan".to_string(),
            };
            let _ = writeln!(out, "{},{},{value}", fmt_f64(x), fmt_f64(y));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One trajectory frame: the position every tracked point occupies after
/// a given number of steps.
pub fn write_snapshot(
    path: &Path,
    positions: &[[f64; 2]],
    labels: &[u8],
) -> Result<(), CliError> {
    let mut out = String::from("x1,x2,label\n");
    for (p, l) in positions.iter().zip(labels) {
        let _ = writeln!(out, "{},{},{}", fmt_f64(p[0]), fmt_f64(p[1]), l);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One cross-variant comparison row.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub accuracy: f64,
    pub j_min: f64,
    pub j_max: f64,
    pub negative_fraction: f64,
    pub boundary_edges: usize,
    pub mean_roundtrip_error: f64,
}

pub const SUMMARY_HEADER: &str =
    "variant,accuracy,j_min,j_max,negative_j_fraction,boundary_edges,mean_roundtrip_error";

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), CliError> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.variant,
            fmt_f64(r.accuracy),
            fmt_f64(r.j_min),
            fmt_f64(r.j_max),
            fmt_f64(r.negative_fraction),
            r.boundary_edges,
            fmt_f64(r.mean_roundtrip_error)
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}
