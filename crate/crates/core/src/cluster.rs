//! DBSCAN density clustering over 3D points.

use std::collections::VecDeque;

use crate::error::{contract, Error, Result};
use crate::spatial::GridIndex;

pub const NOISE: i32 = -1;
const UNVISITED: i32 = -2;

/// Cluster id per point, `NOISE` (-1) for noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    ids: Vec<i32>,
    num_clusters: usize,
}

impl ClusterAssignment {
    /// Wraps raw ids; ids must be dense in `0..num_clusters` apart from noise.
    pub fn from_ids(ids: Vec<i32>) -> Result<Self> {
        let num_clusters = ids.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
        let mut seen = vec![false; num_clusters];
        for &id in &ids {
            if id < NOISE {
                return Err(contract(format!("invalid cluster id {id}")));
            }
            if id >= 0 {
                seen[id as usize] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(contract("cluster ids are not contiguous"));
        }
        Ok(Self { ids, num_clusters })
    }

    pub fn ids(&self) -> &[i32] {
        &self.ids
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &id in &self.ids {
            if id >= 0 {
                sizes[id as usize] += 1;
            }
        }
        sizes
    }

    /// Point indices per cluster, each list ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_clusters];
        for (i, &id) in self.ids.iter().enumerate() {
            if id >= 0 {
                members[id as usize].push(i);
            }
        }
        members
    }
}

/// Density-based clustering with inclusive neighborhoods (`d <= eps`, self
/// counted). Points are scanned in ascending index order and clusters are
/// expanded breadth-first, so a border point reachable from several clusters
/// joins the one created first.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(contract(format!("eps must be positive, got {eps}")));
    }
    if min_pts < 1 {
        return Err(contract("min_pts must be at least 1"));
    }
    let index = GridIndex::new(points, eps);
    let mut ids = vec![UNVISITED; points.len()];
    let mut num_clusters = 0usize;
    let mut neighbors = Vec::new();
    let mut queue = VecDeque::new();

    for i in 0..points.len() {
        if ids[i] != UNVISITED {
            continue;
        }
        index.within(&points[i], eps, &mut neighbors);
        if neighbors.len() < min_pts {
            ids[i] = NOISE;
            continue;
        }
        let cluster = num_clusters as i32;
        num_clusters += 1;
        ids[i] = cluster;
        queue.extend(neighbors.iter().copied());
        while let Some(j) = queue.pop_front() {
            match ids[j] {
                NOISE => ids[j] = cluster,
                UNVISITED => {
                    ids[j] = cluster;
                    index.within(&points[j], eps, &mut neighbors);
                    if neighbors.len() >= min_pts {
                        queue.extend(neighbors.iter().copied().filter(|&n| ids[n] < 0));
                    }
                }
                _ => {}
            }
        }
    }
    Ok(ClusterAssignment { ids, num_clusters })
}

/// Id of the largest cluster, ties going to the smallest id.
pub fn largest_cluster(assign: &ClusterAssignment) -> Result<usize> {
    let sizes = assign.sizes();
    let mut best: Option<(usize, usize)> = None;
    for (id, &size) in sizes.iter().enumerate() {
        if size > 0 && best.is_none_or(|(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    best.map(|(id, _)| id).ok_or(Error::NoCluster)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: [f64; 3], n: usize, spread: f64) -> Vec<[f64; 3]> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64 * std::f64::consts::TAU;
                [center[0] + spread * t.cos(), center[1] + spread * t.sin(), center[2]]
            })
            .collect()
    }

    #[test]
    fn two_separated_blobs() {
        let eps = 0.5;
        let mut pts = blob([0.0, 0.0, 0.0], 20, 0.2);
        pts.extend(blob([10.0 * eps, 0.0, 0.0], 20, 0.2));
        let a = dbscan(&pts, eps, 3).unwrap();
        assert_eq!(a.num_clusters(), 2);
        assert!(a.ids().iter().all(|&id| id >= 0));
        assert_eq!(a.sizes(), vec![20, 20]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let a = dbscan(&[[0.0, 0.0, 0.0]], 1.0, 2).unwrap();
        assert_eq!(a.ids(), &[NOISE]);
        assert!(matches!(largest_cluster(&a), Err(Error::NoCluster)));
        // With min_pts = 1 every point is its own core.
        let a = dbscan(&[[0.0, 0.0, 0.0]], 1.0, 1).unwrap();
        assert_eq!(a.ids(), &[0]);
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // Evenly spaced chain: interior points are core, the ends are border.
        let pts = [
            [0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.5, 0.0, 0.0],
            [2.0, 0.0, 0.0],
        ];
        let a = dbscan(&pts, 0.5, 3).unwrap();

        assert_eq!(a.num_clusters(), 1);

        // Border point 4 touches one core of each square but is not core itself.
        let pts = [
            [0.0, 0.0, 0.0],
            [0.3, 0.0, 0.0],
            [0.0, 0.3, 0.0],
            [0.3, 0.3, 0.0],
            [0.75, 0.0, 0.0],
            [1.2, 0.0, 0.0],
            [1.5, 0.0, 0.0],
            [1.2, 0.3, 0.0],
            [1.5, 0.3, 0.0],
        ];
        let a = dbscan(&pts, 0.5, 4).unwrap();
        assert_eq!(a.num_clusters(), 2);
        assert_eq!(a.sizes(), vec![5, 4]);
        assert_eq!(a.ids()[4], 0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(dbscan(&[], 0.0, 2).is_err());
        assert!(dbscan(&[], 1.0, 0).is_err());
        assert_eq!(dbscan(&[], 1.0, 2).unwrap().num_clusters(), 0);
    }

    #[test]
    fn largest_cluster_tie_goes_to_smallest_id() {
        let mut ids = vec![0; 5];
        ids.extend(vec![1; 9]);
        ids.extend(vec![2; 9]);
        ids.push(NOISE);
        let a = ClusterAssignment::from_ids(ids).unwrap();
        assert_eq!(largest_cluster(&a).unwrap(), 1);
        let single = ClusterAssignment::from_ids(vec![NOISE, 0, 0]).unwrap();
        assert_eq!(largest_cluster(&single).unwrap(), 0);
    }

    #[test]
    fn from_ids_rejects_gaps() {
        assert!(ClusterAssignment::from_ids(vec![0, 2]).is_err());
        assert!(ClusterAssignment::from_ids(vec![-3]).is_err());
    }
}
