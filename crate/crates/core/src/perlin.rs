//! 2D gradient noise and the raise augmentation that turns a noise-selected
//! road patch into a synthetic anomaly.

use std::f64::consts::{SQRT_2, TAU};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{dbscan, largest_cluster};
use crate::error::{contract, Error, Result};
use crate::spatial::GridIndex;
use crate::types::{ClassSpec, LabelMap, PointCloud, Role};

/// Seeded lattice of unit gradients. Lattice nodes sit at
/// `origin + cell_size * (i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerlinField {
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub seed: u64,
}

impl PerlinField {
    pub fn new(cell_size: f64, origin: [f64; 2], seed: u64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(contract(format!("cell size must be positive, got {cell_size}")));
        }
        Ok(Self {
            cell_size,
            origin,
            seed,
        })
    }

    /// Unit gradient attached to lattice node `(i, j)`.
    pub fn gradient(&self, i: i64, j: i64) -> [f64; 2] {
        let h = splitmix64(
            self.seed
                ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F),
        );
        let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * TAU;
        [angle.cos(), angle.sin()]
    }

    pub fn lattice_point(&self, i: i64, j: i64) -> [f64; 2] {
        [
            self.origin[0] + self.cell_size * i as f64,
            self.origin[1] + self.cell_size * j as f64,
        ]
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Classic gradient noise with quintic fade. The raw value of 2D noise with
/// unit gradients is bounded by `sqrt(2)/2`, so it is scaled by `sqrt(2)` and
/// clamped into `[-1, 1]`.
pub fn perlin2d(field: &PerlinField, u: f64, v: f64) -> f64 {
    let x = (u - field.origin[0]) / field.cell_size;
    let y = (v - field.origin[1]) / field.cell_size;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (i, j) = (x0 as i64, y0 as i64);

    let corner = |di: i64, dj: i64| {
        let g = field.gradient(i + di, j + dj);
        g[0] * (fx - di as f64) + g[1] * (fy - dj as f64)
    };
    let (sx, sy) = (fade(fx), fade(fy));
    let bottom = lerp(corner(0, 0), corner(1, 0), sx);
    let top = lerp(corner(0, 1), corner(1, 1), sx);
    (lerp(bottom, top, sy) * SQRT_2).clamp(-1.0, 1.0)
}

/// Parameters of one raise. The patch radius is drawn uniformly from
/// `[r_min, r_max]` per call; set both equal for a fixed radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RaiseConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub alpha: f64,
    pub rho: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub seed: u64,
    /// Relabel every clustered point instead of only the raised cluster.
    pub label_all_clusters: bool,
    /// Noise lattice spacing; `None` means half the sampled radius.
    pub cell_size: Option<f64>,
}

impl Default for RaiseConfig {
    fn default() -> Self {
        Self {
            r_min: 0.75,
            r_max: 1.5,
            alpha: 0.4,
            rho: 0.3,
            dbscan_eps: 0.5,
            dbscan_min_pts: 3,
            seed: 0,
            label_all_clusters: false,
            cell_size: None,
        }
    }
}

impl RaiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max.is_finite()) {
            return Err(contract(format!(
                "radius range [{}, {}] must be positive and ordered",
                self.r_min, self.r_max
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(contract("alpha must be non-negative"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(contract("rho must lie in (0, 1]"));
        }
        if !(self.dbscan_eps > 0.0) || self.dbscan_min_pts < 1 {
            return Err(contract("dbscan eps must be positive and min_pts at least 1"));
        }
        if let Some(c) = self.cell_size {
            if !(c > 0.0) {
                return Err(contract("cell size must be positive"));
            }
        }
        Ok(())
    }
}

/// What a raise did. `raised` is empty when clustering found no core cluster.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RaiseReport {
    pub center: [f64; 3],
    pub radius: f64,
    pub neighborhood: usize,
    /// Cloud indices of the noise-selected subset of the neighborhood.
    pub selected: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    /// Indices into the cloud of the points whose z changed (the raised cluster).
    pub raised: Vec<usize>,
    /// Height offset applied to each entry of `raised`.
    pub delta_z: Vec<f64>,
    /// Indices relabeled as auxiliary anomaly.
    pub labeled: Vec<usize>,
}

/// Linearly interpolated empirical quantile of an unsorted sample.
pub fn quantile_linear(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Raises one noise-selected road patch and tags the largest connected part
/// of it as an auxiliary anomaly.
///
/// Only road points are candidates, so no other class is ever moved. If the
/// selected set has no DBSCAN core the inputs come back unchanged with an
/// empty `raised` list; retrying with another seed is up to the caller.
pub fn perlin_raise(
    cloud: &PointCloud,
    labels: &LabelMap,
    spec: &ClassSpec,
    cfg: &RaiseConfig,
) -> Result<(PointCloud, LabelMap, RaiseReport)> {
    cfg.validate()?;
    labels.check_matches(cloud)?;
    let road: Vec<usize> = (0..labels.len())
        .filter(|&i| labels.role()[i] == Role::Inlier && labels.semantic()[i] == spec.road_id)
        .collect();
    if road.len() < cfg.dbscan_min_pts.max(1) {
        return Err(Error::Precondition(format!(
            "{} road points, at least {} required",
            road.len(),
            cfg.dbscan_min_pts.max(1)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let radius = if cfg.r_min == cfg.r_max {
        cfg.r_min
    } else {
        rng.random_range(cfg.r_min..=cfg.r_max)
    };
    let positions = cloud.positions();
    let road_pos: Vec<[f64; 3]> = road.iter().map(|&i| positions[i]).collect();
    let center = road_pos[rng.random_range(0..road.len())];

    let index = GridIndex::new(&road_pos, radius);
    let mut local = Vec::new();
    index.within(&center, radius, &mut local);
    let neighborhood: Vec<usize> = local.iter().map(|&j| road[j]).collect();

    let cell = cfg.cell_size.unwrap_or(radius / 2.0);
    let offset = [rng.random_range(0.0..cell), rng.random_range(0.0..cell)];
    let field = PerlinField::new(cell, [center[0] - offset[0], center[1] - offset[1]], rng.next_u64())?;
    let noise: Vec<f64> = neighborhood
        .iter()
        .map(|&i| perlin2d(&field, positions[i][0], positions[i][1]))
        .collect();

    let mut report = RaiseReport {
        center,
        radius,
        neighborhood: neighborhood.len(),
        ..RaiseReport::default()
    };

    let threshold = quantile_linear(&noise, 1.0 - cfg.rho);
    let selected: Vec<usize> = (0..neighborhood.len())
        .filter(|&s| cfg.rho >= 1.0 || noise[s] > threshold)
        .collect();
    report.selected = selected.iter().map(|&s| neighborhood[s]).collect();
    if selected.is_empty() {
        return Ok((cloud.clone(), labels.clone(), report));
    }

    let (lo, hi) = selected
        .iter()
        .map(|&s| noise[s])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| (lo.min(n), hi.max(n)));
    let gain = |n: f64| if hi > lo { (n - lo) / (hi - lo) } else { 1.0 };

    let selected_pos: Vec<[f64; 3]> = selected.iter().map(|&s| positions[neighborhood[s]]).collect();
    let clusters = dbscan(&selected_pos, cfg.dbscan_eps, cfg.dbscan_min_pts)?;
    report.cluster_sizes = clusters.sizes();
    let k = match largest_cluster(&clusters) {
        Ok(k) => k as i32,
        Err(Error::NoCluster) => return Ok((cloud.clone(), labels.clone(), report)),
        Err(e) => return Err(e),
    };

    let mut out_cloud = cloud.clone();
    let mut out_labels = labels.clone();
    let instance = labels.max_instance().saturating_add(1);
    for (slot, &cid) in clusters.ids().iter().enumerate() {
        let point = neighborhood[selected[slot]];
        if cid == k {
            let dz = cfg.alpha * gain(noise[selected[slot]]);
            out_cloud.raise(point, dz as f32);
            report.raised.push(point);
            report.delta_z.push(dz);
        }
        if cid == k || (cfg.label_all_clusters && cid >= 0) {
            out_labels.set(point, spec.aux_ood_id, instance, Role::AuxOod);
            report.labeled.push(point);
        }
    }
    Ok((out_cloud, out_labels, report))
}
