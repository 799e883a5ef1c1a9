//! Deterministic synthetic street scenes with a long-tailed class profile,
//! plus primitive-shaped anomalies for held-out evaluation.
//!
//! Layout: a road band along x, sidewalks on both sides, buildings and
//! vegetation beyond the sidewalks. Cars sit on the road; people, bicycles,
//! poles and unlabeled clutter sit on the sidewalks.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{contract, Error, Result};
use crate::types::{ClassSpec, LabelMap, PointCloud, Role};

/// Raw SemanticKITTI ids for the synthetic taxonomy.
pub mod classes {
    pub const UNLABELED: u16 = 0;
    pub const OUTLIER: u16 = 1;
    pub const ANOMALY: u16 = 2;
    pub const AUX_ANOMALY: u16 = 3;
    pub const CAR: u16 = 10;
    pub const BICYCLE: u16 = 11;
    pub const PERSON: u16 = 30;
    pub const ROAD: u16 = 40;
    pub const SIDEWALK: u16 = 48;
    pub const BUILDING: u16 = 50;
    pub const VEGETATION: u16 = 70;
    pub const POLE: u16 = 80;
}

use classes::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnomalyShape {
    Box,
    Hemisphere,
    Ramp,
}

impl AnomalyShape {
    pub fn name(self) -> &'static str {
        match self {
            AnomalyShape::Box => "box",
            AnomalyShape::Hemisphere => "hemisphere",
            AnomalyShape::Ramp => "ramp",
        }
    }
}

impl std::str::FromStr for AnomalyShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(AnomalyShape::Box),
            "hemisphere" => Ok(AnomalyShape::Hemisphere),
            "ramp" => Ok(AnomalyShape::Ramp),
            other => Err(contract(format!("unknown anomaly shape `{other}`"))),
        }
    }
}

/// Primitive anomaly family with its characteristic size range in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnomalyKind {
    pub shape: AnomalyShape,
    pub size_min: f64,
    pub size_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    /// Half-width of the square scene.
    pub extent: f64,
    /// Half-width of the road band.
    pub road_half_width: f64,
    pub class_budget: BTreeMap<u16, usize>,
    pub road_noise_sigma: f64,
    pub eval_anomaly_kinds: Vec<AnomalyKind>,
}

const SIDEWALK_WIDTH: f64 = 2.5;
const SIDEWALK_HEIGHT: f64 = 0.15;

impl Default for SceneConfig {
    fn default() -> Self {
        Self::with_total(16_000)
    }
}

impl SceneConfig {
    /// Default long-tail profile scaled to roughly `total` labeled points:
    /// road 45%, vegetation 30%, building 15%, sidewalk 8%, tail classes 2%,
    /// plus about 1.25% unlabeled clutter. Density is kept constant by
    /// scaling the scene extent with the point count.
    pub fn with_total(total: usize) -> Self {
        let share = |f: f64| ((total as f64 * f).round() as usize).max(1);
        let class_budget = BTreeMap::from([
            (ROAD, share(0.45)),
            (VEGETATION, share(0.30)),
            (BUILDING, share(0.15)),
            (SIDEWALK, share(0.08)),
            (CAR, share(0.01)),
            (PERSON, share(0.00375)),
            (BICYCLE, share(0.003125)),
            (POLE, share(0.003125)),
            (UNLABELED, share(0.0125)),
        ]);
        let scale = (total as f64 / 16_000.0).sqrt();
        Self {
            seed: 0,
            extent: 16.0 * scale,
            road_half_width: 6.0 * scale,
            class_budget,
            road_noise_sigma: 0.02,
            eval_anomaly_kinds: vec![
                AnomalyKind { shape: AnomalyShape::Box, size_min: 0.4, size_max: 0.9 },
                AnomalyKind { shape: AnomalyShape::Hemisphere, size_min: 0.5, size_max: 1.0 },
                AnomalyKind { shape: AnomalyShape::Ramp, size_min: 0.6, size_max: 1.2 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.class_budget.contains_key(&ROAD) {
            return Err(contract("class budget must include road"));
        }
        if self.class_budget.values().any(|&n| n == 0) {
            return Err(contract("class budgets must be positive"));
        }
        if !(self.road_half_width > 0.0 && self.extent > self.road_half_width) {
            return Err(contract("scene extent must exceed the road half-width"));
        }
        if !(self.road_noise_sigma >= 0.0) {
            return Err(contract("road noise sigma must be non-negative"));
        }
        for kind in &self.eval_anomaly_kinds {
            if !(kind.size_min > 0.0 && kind.size_min <= kind.size_max) {
                return Err(contract("anomaly size range must be positive and ordered"));
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    spec: &'a ClassSpec,
    points: Vec<[f32; 3]>,
    labels: LabelMap,
    next_instance: u16,
}

impl Builder<'_> {
    fn push(&mut self, p: [f64; 3], class: u16, instance: u16) {
        let role = self.spec.role_of(class).unwrap_or(Role::Void);
        let class = if self.spec.role_of(class).is_some() { class } else { self.spec.void_id };
        self.points.push([p[0] as f32, p[1] as f32, p[2] as f32]);
        self.labels.push(class, instance, role);
    }

    fn instance(&mut self) -> u16 {
        let id = self.next_instance;
        self.next_instance = self.next_instance.wrapping_add(1).max(1);
        id
    }
}

/// Splits `total` points across `ceil(total / per_object)` objects.
fn object_sizes(total: usize, per_object: usize) -> Vec<usize> {
    let n = total.div_ceil(per_object).max(1);
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

/// Samples a point uniformly on the surface of an axis-aligned box
/// (four walls and the roof; the floor is hidden).
fn box_surface(rng: &mut ChaCha8Rng, min: [f64; 3], max: [f64; 3]) -> [f64; 3] {
    let [sx, sy, sz] = [max[0] - min[0], max[1] - min[1], max[2] - min[2]];
    let faces = [sx * sz, sx * sz, sy * sz, sy * sz, sx * sy];
    let total: f64 = faces.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut face = 0;
    while face < 4 && pick >= faces[face] {
        pick -= faces[face];
        face += 1;
    }
    let (u, v) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    match face {
        0 => [min[0] + u * sx, min[1], min[2] + v * sz],
        1 => [min[0] + u * sx, max[1], min[2] + v * sz],
        2 => [min[0], min[1] + u * sy, min[2] + v * sz],
        3 => [max[0], min[1] + u * sy, min[2] + v * sz],
        _ => [min[0] + u * sx, min[1] + v * sy, max[2]],
    }
}

fn cylinder_surface(rng: &mut ChaCha8Rng, base: [f64; 3], radius: f64, height: f64) -> [f64; 3] {
    let t = rng.random_range(0.0..TAU);
    [
        base[0] + radius * t.cos(),
        base[1] + radius * t.sin(),
        base[2] + rng.random_range(0.0..height),
    ]
}

/// Generates one labeled scene. Per-class counts match the budget exactly.
pub fn generate_scene(config: &SceneConfig, spec: &ClassSpec) -> Result<(PointCloud, LabelMap)> {
    config.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.road_noise_sigma).map_err(|e| contract(e.to_string()))?;
    let (e, w) = (config.extent, config.road_half_width);
    let mut b = Builder {
        spec,
        points: Vec::new(),
        labels: LabelMap::empty(),
        next_instance: 1,
    };

    // Offroad band lies between the sidewalk and the scene edge.
    let offroad_lo = (w + SIDEWALK_WIDTH + 1.0).min(e);
    let side = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let sidewalk_y = |rng: &mut ChaCha8Rng, margin: f64| {
        side(rng) * rng.random_range(w + margin..w + SIDEWALK_WIDTH - margin)
    };

    for (&class, &budget) in &config.class_budget {
        match class {
            ROAD => {
                for _ in 0..budget {
                    let p = [rng.random_range(-e..e), rng.random_range(-w..w), noise.sample(&mut rng)];
                    b.push(p, class, 0);
                }
            }
            SIDEWALK => {
                for _ in 0..budget {
                    let p = [
                        rng.random_range(-e..e),
                        sidewalk_y(&mut rng, 0.0),
                        SIDEWALK_HEIGHT + noise.sample(&mut rng),
                    ];
                    b.push(p, class, 0);
                }
            }
            VEGETATION => {
                for n in object_sizes(budget, 300) {
                    let c = [
                        rng.random_range(-e..e),
                        side(&mut rng) * rng.random_range(offroad_lo..=e),
                        rng.random_range(1.5..3.0),
                    ];
                    let r = [rng.random_range(0.8..1.5), rng.random_range(0.8..1.5), rng.random_range(0.6..1.2)];
                    for _ in 0..n {
                        let t = rng.random_range(0.0..TAU);
                        let cz: f64 = rng.random_range(-1.0..1.0);
                        let s = (1.0 - cz * cz).sqrt() * rng.random_range(0.85..1.0);
                        let p = [c[0] + r[0] * s * t.cos(), c[1] + r[1] * s * t.sin(), c[2] + r[2] * cz];
                        b.push(p, class, 0);
                    }
                }
            }
            BUILDING => {
                for n in object_sizes(budget, 1500) {
                    let id = b.instance();
                    let sx = rng.random_range(4.0..8.0);
                    let sy = rng.random_range(3.0f64..6.0).min((e - offroad_lo).max(1.0));
                    let x0 = rng.random_range(-e..(e - sx).max(-e + 1e-3));
                    let near = offroad_lo;
                    let (y0, y1) = if side(&mut rng) > 0.0 { (near, near + sy) } else { (-near - sy, -near) };
                    let h = rng.random_range(4.0..10.0);
                    for _ in 0..n {
                        let p = box_surface(&mut rng, [x0, y0, 0.0], [x0 + sx, y1, h]);
                        b.push(p, class, id);
                    }
                }
            }
            CAR => {
                for n in object_sizes(budget, 250) {
                    let id = b.instance();
                    let cx = rng.random_range(-e + 2.0..e - 2.0);
                    let cy = rng.random_range(-w + 1.0..w - 1.0);
                    for _ in 0..n {
                        let p = box_surface(&mut rng, [cx - 2.0, cy - 0.9, 0.0], [cx + 2.0, cy + 0.9, 1.5]);
                        b.push(p, class, id);
                    }
                }
            }
            POLE => {
                for n in object_sizes(budget, 50) {
                    let id = b.instance();
                    let base = [rng.random_range(-e..e), sidewalk_y(&mut rng, 0.2), SIDEWALK_HEIGHT];
                    for _ in 0..n {
                        b.push(cylinder_surface(&mut rng, base, 0.08, 4.0), class, id);
                    }
                }
            }
            BICYCLE => {
                for n in object_sizes(budget, 80) {
                    let id = b.instance();
                    let (cx, cy) = (rng.random_range(-e..e), sidewalk_y(&mut rng, 0.5));
                    for _ in 0..n {
                        let p = box_surface(
                            &mut rng,
                            [cx - 0.85, cy - 0.2, SIDEWALK_HEIGHT],
                            [cx + 0.85, cy + 0.2, SIDEWALK_HEIGHT + 1.1],
                        );
                        b.push(p, class, id);
                    }
                }
            }
            UNLABELED => {
                // Bins, meters and other clutter the closed set leaves unlabeled.
                for n in object_sizes(budget, 80) {
                    let id = b.instance();
                    let (cx, cy) = (rng.random_range(-e..e), sidewalk_y(&mut rng, 0.4));
                    for _ in 0..n {
                        let p = box_surface(
                            &mut rng,
                            [cx - 0.3, cy - 0.3, SIDEWALK_HEIGHT],
                            [cx + 0.3, cy + 0.3, SIDEWALK_HEIGHT + 1.0],
                        );
                        b.push(p, class, id);
                    }
                }
            }
            _ => {
                // Person-like upright clusters for any other class.
                for n in object_sizes(budget, 60) {
                    let id = b.instance();
                    let base = [rng.random_range(-e..e), sidewalk_y(&mut rng, 0.3), SIDEWALK_HEIGHT];
                    for _ in 0..n {
                        b.push(cylinder_surface(&mut rng, base, 0.25, 1.7), class, id);
                    }
                }
            }
        }
    }

    let n = b.points.len();
    let cloud = PointCloud::new(b.points, Some(vec![0.0; n]))?;
    Ok((cloud, b.labels))
}

/// Placement and shape of an injected anomaly.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedAnomaly {
    pub shape: AnomalyShape,
    pub size: f64,
    pub instance: u16,
    /// Axis-aligned bounds of the primitive, `[min, max]`.
    pub bounds: [[f64; 3]; 2],
    pub first_point: usize,
    pub num_points: usize,
}

fn footprint_overlaps(a: &[[f64; 3]; 2], b: &[[f64; 3]; 2]) -> bool {
    a[0][0] <= b[1][0] && b[0][0] <= a[1][0] && a[0][1] <= b[1][1] && b[0][1] <= a[1][1]
}

/// Ground-plane bounds of every labeled object (instance > 0) in the scene.
pub fn object_footprints(cloud: &PointCloud, labels: &LabelMap) -> Vec<(u16, u16, [[f64; 3]; 2])> {
    let mut boxes: BTreeMap<(u16, u16), [[f64; 3]; 2]> = BTreeMap::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        let inst = labels.instance()[i];
        if inst == 0 {
            continue;
        }
        let entry = boxes
            .entry((labels.semantic()[i], inst))
            .or_insert([[f64::INFINITY; 3], [f64::NEG_INFINITY; 3]]);
        for d in 0..3 {
            entry[0][d] = entry[0][d].min(p[d]);
            entry[1][d] = entry[1][d].max(p[d]);
        }
    }
    boxes.into_iter().map(|((s, i), b)| (s, i, b)).collect()
}

/// Points sampled on the visible surface of a primitive resting at `base`.
fn primitive_points(rng: &mut ChaCha8Rng, shape: AnomalyShape, size: f64, base: [f64; 3]) -> Vec<[f64; 3]> {
    let half = size / 2.0;
    let [cx, cy, z0] = base;
    match shape {
        AnomalyShape::Box => {
            let n = ((5.0 * size * size) * 120.0).round().clamp(30.0, 400.0) as usize;
            (0..n)
                .map(|_| box_surface(rng, [cx - half, cy - half, z0], [cx + half, cy + half, z0 + size]))
                .collect()
        }
        AnomalyShape::Hemisphere => {
            let n = ((TAU * half * half) * 120.0).round().clamp(30.0, 400.0) as usize;
            (0..n)
                .map(|_| {
                    // Uniform on the upper hemisphere: cos(polar) uniform in [0, 1].
                    let cz: f64 = rng.random_range(0.0..1.0);
                    let s = (1.0 - cz * cz).sqrt();
                    let t = rng.random_range(0.0..TAU);
                    [cx + half * s * t.cos(), cy + half * s * t.sin(), z0 + half * cz]
                })
                .collect()
        }
        AnomalyShape::Ramp => {
            // Wedge rising along +x to height size/2, with a vertical back face.
            let h = half;
            let slope_len = (size * size + h * h).sqrt();
            let (slope, back) = (slope_len * size, h * size);
            let n = ((slope + back) * 120.0).round().clamp(30.0, 400.0) as usize;
            (0..n)
                .map(|_| {
                    let v = rng.random_range(-half..half);
                    if rng.random_range(0.0..slope + back) < slope {
                        let u: f64 = rng.random_range(0.0..1.0);
                        [cx - half + u * size, cy + v, z0 + u * h]
                    } else {
                        [cx + half, cy + v, z0 + rng.random_range(0.0..h)]
                    }
                })
                .collect()
        }
    }
}

/// Places `count` primitive anomalies on road points, each labeled with the
/// spec's anomaly id and a fresh instance id. Placements never overlap
/// labeled objects or earlier anomalies in the ground plane.
pub fn inject_eval_anomalies(
    cloud: &PointCloud,
    labels: &LabelMap,
    spec: &ClassSpec,
    config: &SceneConfig,
    count: usize,
    seed: u64,
) -> Result<(PointCloud, LabelMap, Vec<InjectedAnomaly>)> {
    labels.check_matches(cloud)?;
    if count == 0 {
        return Ok((cloud.clone(), labels.clone(), Vec::new()));
    }
    if config.eval_anomaly_kinds.is_empty() {
        return Err(contract("no anomaly kinds configured"));
    }
    let positions = cloud.positions();
    let road: Vec<usize> = (0..labels.len())
        .filter(|&i| labels.role()[i] == Role::Inlier && labels.semantic()[i] == spec.road_id)
        .collect();
    if road.is_empty() {
        return Err(Error::Precondition("scene has no road points".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocked: Vec<[[f64; 3]; 2]> = object_footprints(cloud, labels)
        .into_iter()
        .filter(|(s, _, _)| *s != spec.road_id)
        .map(|(_, _, b)| b)
        .collect();
    let mut out_cloud = cloud.clone();
    let mut out_labels = labels.clone();
    let mut injected = Vec::with_capacity(count);
    let mut instance = labels.max_instance();

    for _ in 0..count {
        let kind = config.eval_anomaly_kinds[rng.random_range(0..config.eval_anomaly_kinds.len())];
        let mut placed = None;
        for _attempt in 0..200 {
            let size = rng.random_range(kind.size_min..=kind.size_max);
            let base = positions[road[rng.random_range(0..road.len())]];
            let half = size / 2.0;
            let bounds = [
                [base[0] - half, base[1] - half, base[2]],
                [base[0] + half, base[1] + half, base[2] + size],
            ];
            let margin = [[bounds[0][0] - 0.3, bounds[0][1] - 0.3, 0.0], [bounds[1][0] + 0.3, bounds[1][1] + 0.3, 0.0]];
            if !blocked.iter().any(|b| footprint_overlaps(b, &margin)) {
                placed = Some((size, base, bounds));
                break;
            }
        }
        let Some((size, base, bounds)) = placed else {
            return Err(Error::Precondition("no free road location for an anomaly".into()));
        };
        instance = instance.checked_add(1).ok_or_else(|| contract("instance ids exhausted"))?;
        let pts = primitive_points(&mut rng, kind.shape, size, base);
        let first_point = out_cloud.len();
        let as_f32: Vec<[f32; 3]> = pts.iter().map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]).collect();
        out_cloud.extend(&as_f32);
        for _ in &pts {
            out_labels.push(spec.ood_id, instance, Role::RealOod);
        }
        blocked.push(bounds);
        injected.push(InjectedAnomaly {
            shape: kind.shape,
            size,
            instance,
            bounds,
            first_point,
            num_points: pts.len(),
        });
    }
    Ok((out_cloud, out_labels, injected))
}
