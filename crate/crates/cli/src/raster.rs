//! Scalar grid layers as PNG heatmaps.
//!
//! Colormap: linear interpolation through #313695, #74add1, #ffffbf, #f46d43
//! and #a50026 between the layer's finite minimum and maximum. Cells without
//! a finite value are grey (#808080). North is up.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};
use metev_core::GridSpec;

pub const PIXELS_PER_CELL: u32 = 4;

const STOPS: [[u8; 3]; 5] = [
    [0x31, 0x36, 0x95],
    [0x74, 0xad, 0xd1],
    [0xff, 0xff, 0xbf],
    [0xf4, 0x6d, 0x43],
    [0xa5, 0x00, 0x26],
];
const MISSING: [u8; 3] = [0x80, 0x80, 0x80];

/// Color of `t` in `[0, 1]`.
pub fn color(t: f64) -> [u8; 3] {
    if !t.is_finite() {
        return MISSING;
    }
    let pos = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let frac = pos - i as f64;
    let mut c = [0u8; 3];
    for k in 0..3 {
        let a = f64::from(STOPS[i][k]);
        let b = f64::from(STOPS[i + 1][k]);
        c[k] = (a + frac * (b - a)).round() as u8;
    }
    c
}

pub fn render(grid: &GridSpec, values: &[f64]) -> RgbImage {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (grid.n_x() as u32, grid.n_y() as u32);
    let mut img = RgbImage::new(w * PIXELS_PER_CELL, h * PIXELS_PER_CELL);
    for (cell, &v) in values.iter().enumerate() {
        let t = if !v.is_finite() {
            f64::NAN
        } else if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        };
        let (ix, iy) = grid.position(cell);
        let row = h - 1 - iy as u32;
        for dy in 0..PIXELS_PER_CELL {
            for dx in 0..PIXELS_PER_CELL {
                img.put_pixel(ix as u32 * PIXELS_PER_CELL + dx, row * PIXELS_PER_CELL + dy, Rgb(color(t)));
            }
        }
    }
    img
}

pub fn write_png(path: &Path, grid: &GridSpec, values: &[f64]) -> Result<()> {
    render(grid, values)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}
