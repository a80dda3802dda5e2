//! Diverging-colormap rasterization of interaction values.
//!
//! Values are normalized symmetrically by the largest magnitude in the
//! rendered set and mapped to blue (negative) through white (zero) to red
//! (positive). Negating the input swaps the red and blue channels exactly.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CellMatrix;

/// Color of cells with no evidence.
pub const MISSING_COLOR: [u8; 4] = [128, 128, 128, 255];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    /// Edge length of one grid cell in standalone renders.
    pub cell_px: usize,
    /// Peak overlay opacity, reached at the normalization bound.
    pub alpha: f64,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self { cell_px: 32, alpha: 0.6 }
    }
}

/// 8-bit RGBA image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 4 {
            return Err(Error::ShapeMismatch { expected: width * height * 4, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let at = (y * self.width + x) * 4;
        [self.pixels[at], self.pixels[at + 1], self.pixels[at + 2], self.pixels[at + 3]]
    }
}

/// Row means over the non-missing token cells of each patch.
pub fn aggregate_per_patch(phi: &CellMatrix) -> Result<Vec<f64>> {
    (0..phi.rows())
        .map(|i| {
            let (sum, count) = phi
                .row(i)
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                Err(Error::EmptyRow(i))
            } else {
                Ok(sum / count as f64)
            }
        })
        .collect()
}

/// Largest magnitude among present values; zero if none is nonzero.
pub fn symmetric_bound(values: &[Option<f64>]) -> f64 {
    values.iter().flatten().fold(0.0, |b, v| if v.abs() > b { v.abs() } else { b })
}

/// Color for a normalized value `t` in `[-1, 1]`.
pub fn diverging_color(t: f64) -> [u8; 4] {
    let t = t.clamp(-1.0, 1.0);
    let fade = libm::round(255.0 * (1.0 - t.abs())) as u8;
    if t >= 0.0 {
        [255, fade, fade, 255]
    } else {
        [fade, fade, 255, 255]
    }
}

fn normalized(value: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        value / bound
    } else {
        0.0
    }
}

fn check_grid(values: &[Option<f64>], rows: usize, cols: usize) -> Result<()> {
    if rows * cols != values.len() || rows == 0 {
        return Err(Error::ShapeMismatch { expected: rows * cols, got: values.len() });
    }
    Ok(())
}

/// Standalone `rows x cols` heatmap with `spec.cell_px` pixels per cell.
/// Returns the raster and the normalization bound used.
pub fn render_grid(values: &[Option<f64>], rows: usize, cols: usize, spec: &HeatmapSpec) -> Result<(Raster, f64)> {
    check_grid(values, rows, cols)?;
    let bound = symmetric_bound(values);
    let px = spec.cell_px.max(1);
    let (width, height) = (cols * px, rows * px);
    let mut pixels = vec![0u8; width * height * 4];
    for y in 0..height {
        for x in 0..width {
            let color = match values[(y / px) * cols + x / px] {
                Some(v) => diverging_color(normalized(v, bound)),
                None => MISSING_COLOR,
            };
            let at = (y * width + x) * 4;
            pixels[at..at + 4].copy_from_slice(&color);
        }
    }
    Ok((Raster { width, height, pixels }, bound))
}

/// Tints `base` cell by cell. Each grid cell covers an equal pixel block,
/// so the base dimensions must be divisible by the grid. Opacity scales
/// with the normalized magnitude, so zero cells leave the base untouched.
pub fn overlay(
    base: &Raster,
    values: &[Option<f64>],
    rows: usize,
    cols: usize,
    spec: &HeatmapSpec,
) -> Result<(Raster, f64)> {
    check_grid(values, rows, cols)?;
    if !base.width.is_multiple_of(cols) || !base.height.is_multiple_of(rows) {
        return Err(Error::ShapeMismatch { expected: rows * cols, got: base.width * base.height });
    }
    let bound = symmetric_bound(values);
    let (bw, bh) = (base.width / cols, base.height / rows);
    let mut out = base.clone();
    for y in 0..base.height {
        for x in 0..base.width {
            let Some(v) = values[(y / bh) * cols + x / bw] else { continue };
            let t = normalized(v, bound);
            let a = spec.alpha.clamp(0.0, 1.0) * t.abs().min(1.0);
            let color = diverging_color(t);
            let at = (y * base.width + x) * 4;
            for c in 0..3 {
                let mixed = (1.0 - a) * base.pixels[at + c] as f64 + a * color[c] as f64;
                out.pixels[at + c] = libm::round(mixed).clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok((out, bound))
}
