//! Uniform grid hash for fixed-radius neighbor queries.

use std::collections::HashMap;

type Cell = (i64, i64, i64);

/// Buckets points into cubic cells so a ball query only touches the cells
/// overlapping the ball. Expected cost per query is O(k) for bounded density.
#[derive(Debug, Clone)]
pub struct GridIndex<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    buckets: HashMap<Cell, Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    /// `cell` should be close to the typical query radius.
    pub fn new(points: &'a [[f64; 3]], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell size must be positive");
        let mut buckets: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(cell_of(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            buckets,
        }
    }

    pub fn points(&self) -> &'a [[f64; 3]] {
        self.points
    }

    /// Indices of all points with `|p - center| <= radius`, ascending.
    pub fn within(&self, center: &[f64; 3], radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let r2 = radius * radius;
        let span = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = cell_of(center, self.cell);
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    out.extend(
                        bucket
                            .iter()
                            .copied()
                            .filter(|&j| dist2(&self.points[j], center) <= r2),
                    );
                }
            }
        }
        out.sort_unstable();
    }

    /// Neighbor count within `radius`, the query point itself included when indexed.
    pub fn count_within(&self, center: &[f64; 3], radius: f64) -> usize {
        let r2 = radius * radius;
        let span = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = cell_of(center, self.cell);
        let mut count = 0;
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        count += bucket
                            .iter()
                            .filter(|&&j| dist2(&self.points[j], center) <= r2)
                            .count();
                    }
                }
            }
        }
        count
    }
}

fn cell_of(p: &[f64; 3], cell: f64) -> Cell {
    (
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    )
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
