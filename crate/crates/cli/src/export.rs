//! Score-map export: a top-down raster and a colored point cloud.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndp_core::{Error, PointCloud, Result, ScoreField};

/// Largest raster side we are willing to allocate.
pub const MAX_SIDE: u32 = 8192;

const BACKGROUND: Rgb<u8> = Rgb([0, 0, 0]);

/// Min-max normalization clamped to [0, 1]. Constant input maps to 0.
pub fn normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    scores
        .iter()
        .map(|&s| if span > 0.0 { ((s - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

/// Dark blue through teal and orange to yellow.
pub fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [30.0, 20.0, 90.0],
        [40.0, 110.0, 180.0],
        [60.0, 180.0, 140.0],
        [240.0, 140.0, 40.0],
        [250.0, 240.0, 80.0],
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    [c(0), c(1), c(2)]
}

/// Raster size for a cloud at `resolution` meters per pixel.
pub fn raster_size(cloud: &PointCloud, resolution: f64) -> Result<(u32, u32, [f64; 2])> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::Contract("resolution must be positive".into()));
    }
    if cloud.is_empty() {
        return Err(Error::Contract("cannot rasterize an empty cloud".into()));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in cloud.points() {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d] as f64);
            hi[d] = hi[d].max(p[d] as f64);
        }
    }
    let side = |d: usize| ((hi[d] - lo[d]) / resolution).floor() + 1.0;
    let (w, h) = (side(0), side(1));
    if w > MAX_SIDE as f64 || h > MAX_SIDE as f64 {
        return Err(Error::Contract(format!(
            "raster of {w}x{h} pixels exceeds {MAX_SIDE}; use a coarser resolution"
        )));
    }
    Ok((w as u32, h as u32, [lo[0], hi[1]]))
}

/// Top-down raster, +y up. Each pixel shows the highest normalized score
/// among its points; empty pixels stay black.
pub fn render_raster(cloud: &PointCloud, scores: &ScoreField, resolution: f64) -> Result<RgbImage> {
    check_lengths(cloud, scores)?;
    let (w, h, [x0, y_top]) = raster_size(cloud, resolution)?;
    let norm = normalize(scores.as_slice());
    let mut best = vec![f64::NEG_INFINITY; (w * h) as usize];
    for (p, &t) in cloud.points().iter().zip(&norm) {
        let col = (((p[0] as f64 - x0) / resolution).floor() as u32).min(w - 1);
        let row = (((y_top - p[1] as f64) / resolution).floor() as u32).min(h - 1);
        let cell = &mut best[(row * w + col) as usize];
        *cell = cell.max(t);
    }
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let t = best[(y * w + x) as usize];
        if t.is_finite() {
            Rgb(colormap(t))
        } else {
            BACKGROUND
        }
    }))
}

/// ASCII PLY with position, color and normalized score per point.
pub fn render_ply(cloud: &PointCloud, scores: &ScoreField) -> Result<String> {
    check_lengths(cloud, scores)?;
    let norm = normalize(scores.as_slice());
    let mut out = String::new();
    let _ = write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty float score\nend_header\n",
        cloud.len()
    );
    for (p, &t) in cloud.points().iter().zip(&norm) {
        let [r, g, b] = colormap(t);
        let _ = writeln!(out, "{} {} {} {r} {g} {b} {}", p[0], p[1], p[2], t as f32);
    }
    Ok(out)
}

fn check_lengths(cloud: &PointCloud, scores: &ScoreField) -> Result<()> {
    if cloud.len() != scores.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} points",
            scores.len(),
            cloud.len()
        )));
    }
    Ok(())
}

/// Writes `<prefix>.png` and `<prefix>.ply`.
pub fn export_map(cloud: &PointCloud, scores: &ScoreField, resolution: f64, png: &Path, ply: &Path) -> Result<()> {
    let raster = render_raster(cloud, scores, resolution)?;
    raster
        .save_with_format(png, image::ImageFormat::Png)
        .map_err(|e| Error::Contract(format!("cannot write {}: {e}", png.display())))?;
    fs::write(ply, render_ply(cloud, scores)?)?;
    Ok(())
}
