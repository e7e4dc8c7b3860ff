//! Raster exports: binary PGM for probability grids, binary PPM with a
//! blue–white–red diverging colormap for Jacobian maps.
//!
//! Image rows run top-to-bottom, so row 0 is the grid's highest y band.

use crate::error::CliError;
use resflow_core::AnalysisGrid;
use std::path::Path;

/// Jacobian colormap window. Values are clamped to [-JAC_WINDOW, JAC_WINDOW]
/// before mapping, so folds (J < 0) land firmly in the blue end.
pub const JAC_WINDOW: f64 = 2.5;

/// Grayscale raster of a grid, mapping [lo, hi] to [0, 255]. Divergent
/// cells render as 0.
pub fn write_pgm(path: &Path, grid: &AnalysisGrid, lo: f64, hi: f64) -> Result<(), CliError> {
    let mut out = format!("P5\n{} {}\n255\n", grid.nx, grid.ny).into_bytes();
    for_each_raster_cell(grid, |value| {
        let byte = match value {
            Some(v) => {
                let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                (t * 255.0).round() as u8
            }
            None => 0,
        };
        out.push(byte);
    });
    std::fs::write(path, out)?;
    Ok(())
}

/// Diverging colormap raster: blue at -window through white at 0 to red
/// at +window. Divergent cells render black.
pub fn write_diverging_ppm(path: &Path, grid: &AnalysisGrid, window: f64) -> Result<(), CliError> {
    let mut out = format!("P6\n{} {}\n255\n", grid.nx, grid.ny).into_bytes();
    for_each_raster_cell(grid, |value| {
        let rgb = match value {
            Some(v) => diverging_rgb(v / window),
            None => [0, 0, 0],
        };
        out.extend_from_slice(&rgb);
    });
    std::fs::write(path, out)?;
    Ok(())
}

/// t in [-1, 1] → blue-white-red.
fn diverging_rgb(t: f64) -> [u8; 3] {
    let t = t.clamp(-1.0, 1.0);
    let lerp = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    if t < 0.0 {
        let s = 1.0 + t; // 0 at full blue, 1 at white
        [lerp(40.0, 255.0, s), lerp(60.0, 255.0, s), lerp(230.0, 255.0, s)]
    } else {
        let s = t; // 0 at white, 1 at full red
        [lerp(255.0, 200.0, s), lerp(255.0, 30.0, s), lerp(255.0, 40.0, s)]
    }
}

fn for_each_raster_cell(grid: &AnalysisGrid, mut f: impl FnMut(Option<f64>)) {
    for iy in (0..grid.ny).rev() {
        for ix in 0..grid.nx {
            f(grid.value(ix, iy));
        }
    }
}
