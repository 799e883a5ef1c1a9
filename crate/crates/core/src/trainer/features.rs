//! Handcrafted per-point features fed to the toy backbone.

use crate::spatial::GridIndex;
use crate::types::PointCloud;

pub const NUM_FEATURES: usize = 4;
/// Neighborhood radius for the density and height-variance features.
pub const NEIGHBOR_RADIUS: f64 = 0.5;

/// `[z, radial distance, neighbor count within 0.5 m (self included),
/// population variance of z over those neighbors]` per point.
pub fn extract_features(cloud: &PointCloud) -> Vec<[f64; NUM_FEATURES]> {
    let pos = cloud.positions();
    let index = GridIndex::new(&pos, NEIGHBOR_RADIUS);
    let mut neighbors = Vec::new();
    pos.iter()
        .map(|p| {
            index.within(p, NEIGHBOR_RADIUS, &mut neighbors);
            let n = neighbors.len() as f64;
            let mean = neighbors.iter().map(|&j| pos[j][2]).sum::<f64>() / n;
            let var = neighbors.iter().map(|&j| (pos[j][2] - mean).powi(2)).sum::<f64>() / n;
            [p[2], p[0].hypot(p[1]), n, var]
        })
        .collect()
}
