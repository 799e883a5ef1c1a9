//! SemanticKITTI-style binary containers.
//!
//! * `.bin`: N records of four little-endian `f32` (x, y, z, intensity).
//! * `.label`: N little-endian `u32`, semantic id in the low 16 bits and
//!   instance id in the high 16 bits.
//! * `.score`: N little-endian `f32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ClassSpec, LabelMap, PointCloud, ScoreField};

pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    decode_point_cloud(&fs::read(path)?)
}

pub fn decode_point_cloud(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Format(format!(
            "point file size {} is not a multiple of 16 bytes",
            bytes.len()
        )));
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        points.push([f(0), f(4), f(8)]);
        intensity.push(f(12));
    }
    PointCloud::new(points, Some(intensity)).map_err(|e| Error::Format(e.to_string()))
}

/// Clouds without intensity are written with intensity 0.
pub fn encode_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points().iter().enumerate() {
        let int = cloud.intensity().map_or(0.0, |v| v[i]);
        for v in [p[0], p[1], p[2], int] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_point_cloud(cloud))?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>, spec: &ClassSpec) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?, spec)
}

pub fn decode_labels(bytes: &[u8], spec: &ClassSpec) -> Result<LabelMap> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!(
            "label file size {} is not a multiple of 4 bytes",
            bytes.len()
        )));
    }
    let (semantic, instance) = bytes
        .chunks_exact(4)
        .map(|w| {
            let word = u32::from_le_bytes(w.try_into().unwrap());
            ((word & 0xFFFF) as u16, (word >> 16) as u16)
        })
        .unzip();
    LabelMap::from_ids(semantic, instance, spec)
}

pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    labels
        .semantic()
        .iter()
        .zip(labels.instance())
        .flat_map(|(&s, &i)| (((i as u32) << 16) | s as u32).to_le_bytes())
        .collect()
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    fs::write(path, encode_labels(labels))?;
    Ok(())
}

/// Scores are narrowed to `f32` on disk.
pub fn encode_scores(scores: &ScoreField) -> Vec<u8> {
    scores
        .as_slice()
        .iter()
        .flat_map(|&s| (s as f32).to_le_bytes())
        .collect()
}

pub fn decode_scores(bytes: &[u8]) -> Result<ScoreField> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!(
            "score file size {} is not a multiple of 4 bytes",
            bytes.len()
        )));
    }
    let scores = bytes
        .chunks_exact(4)
        .map(|w| f32::from_le_bytes(w.try_into().unwrap()) as f64)
        .collect();
    ScoreField::new(scores).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_scores(path: impl AsRef<Path>, scores: &ScoreField) -> Result<()> {
    fs::write(path, encode_scores(scores))?;
    Ok(())
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreField> {
    decode_scores(&fs::read(path)?)
}
