//! PNG and CSV renderings of kernels, masks and reconstructions.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};

use crate::autodiff::CTensor;
use crate::error::{Error, Result};
use crate::real::Real;

pub const PSF_PNG: &str = "psf_db.png";
pub const LATERAL_CSV: &str = "lateral.csv";
pub const AXIAL_CSV: &str = "axial.csv";

/// Displayed dynamic range of kernel images.
pub const DB_RANGE: f64 = 40.0;

/// `20 log10(v / max v)` clipped at `-range_db`.
pub fn to_db(values: &[f64], range_db: f64) -> Vec<f64> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    values
        .iter()
        .map(|&v| {
            if max <= 0.0 || v <= 0.0 {
                -range_db
            } else {
                (20.0 * (v / max).log10()).max(-range_db)
            }
        })
        .collect()
}

/// Writes a `rows x cols` image with values in `[0, 1]` as 8-bit grayscale.
pub fn write_gray_png(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::InvalidShape {
            op: "write_gray_png",
            shape: vec![values.len()],
            reason: format!("expected {rows}x{cols} values"),
        });
    }
    let img = GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = values[y as usize * cols + x as usize];
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Decodes an image file to 8-bit luma: `(pixels, rows, cols)`.
pub fn decode_gray(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
    let img = image::load_from_memory(bytes)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((img.into_raw(), h as usize, w as usize))
}

/// Scales by the maximum so the brightest pixel maps to 1.
pub fn normalize_max(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Linear grayscale of the dB magnitude: `-range_db` is black, 0 dB white.
pub fn db_gray(magnitude: &[f64], range_db: f64) -> Vec<f64> {
    to_db(magnitude, range_db)
        .into_iter()
        .map(|d| (d + range_db) / range_db)
        .collect()
}

/// Writes `psf_db.png` plus lateral (center row) and axial (center column)
/// dB profiles with positions in millimetres.
pub fn write_psf_outputs<T: Real>(dir: &Path, kappa: &CTensor<T>, pixel_pitch_m: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = kappa.shape()[0];
    let mag: Vec<f64> = kappa.abs().iter().map(|v| v.f64()).collect();
    write_gray_png(&dir.join(PSF_PNG), n, n, &db_gray(&mag, DB_RANGE))?;
    let db = to_db(&mag, DB_RANGE);
    let c = n / 2;
    let pos = |i: usize| (i as f64 - c as f64) * pixel_pitch_m * 1e3;
    let mut lat = csv::Writer::from_path(dir.join(LATERAL_CSV))?;
    lat.write_record(["x_mm", "db"])?;
    for i in 0..n {
        lat.write_record([pos(i).to_string(), db[c * n + i].to_string()])?;
    }
    lat.flush()?;
    let mut ax = csv::Writer::from_path(dir.join(AXIAL_CSV))?;
    ax.write_record(["z_mm", "db"])?;
    for i in 0..n {
        ax.write_record([pos(i).to_string(), db[i * n + c].to_string()])?;
    }
    ax.flush()?;
    Ok(())
}

/// One square cell per element, white when active.
pub fn write_mask_png(path: &Path, n_elements: usize, active: &[usize]) -> Result<()> {
    const CELL: usize = 8;
    let cols = n_elements * CELL;
    let mut v = vec![0.0; CELL * cols];
    for &e in active {
        for r in 0..CELL {
            for c in 1..CELL - 1 {
                v[r * cols + e * CELL + c] = 1.0;
            }
        }
    }
    write_gray_png(path, CELL, cols, &v)
}

/// Square images side by side, each scaled by its own maximum, separated
/// by a two-pixel gap.
pub fn write_triptych(path: &Path, n: usize, panels: &[Vec<f64>]) -> Result<()> {
    const GAP: usize = 2;
    let cols = panels.len() * n + panels.len().saturating_sub(1) * GAP;
    let mut v = vec![0.0; n * cols];
    for (p, panel) in panels.iter().enumerate() {
        let scaled = normalize_max(panel);
        let off = p * (n + GAP);
        for r in 0..n {
            v[r * cols + off..r * cols + off + n].copy_from_slice(&scaled[r * n..(r + 1) * n]);
        }
    }
    write_gray_png(path, n, cols, &v)
}
