//! Domain types shared by every stage of the pipeline.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};

use crate::error::{contract, Error, Result};

/// A LiDAR scan: 3D points in meters with optional per-point intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, intensity: Option<Vec<f32>>) -> Result<Self> {
        if let Some((i, _)) = points
            .iter()
            .enumerate()
            .find(|(_, p)| !p.iter().all(|c| c.is_finite()))
        {
            return Err(contract(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(int) = &intensity {
            if int.len() != points.len() {
                return Err(contract(format!(
                    "intensity length {} does not match point count {}",
                    int.len(),
                    points.len()
                )));
            }
        }
        Ok(Self { points, intensity })
    }

    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            intensity: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    /// Coordinates widened to `f64`, the precision all geometry runs in.
    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect()
    }

    /// Appends points, padding intensity with zeros when this cloud carries it.
    pub fn extend(&mut self, points: &[[f32; 3]]) {
        self.points.extend_from_slice(points);
        if let Some(int) = &mut self.intensity {
            int.resize(self.points.len(), 0.0);
        }
    }

    /// Shifts the z coordinate of one point.
    pub(crate) fn raise(&mut self, index: usize, dz: f32) {
        self.points[index][2] += dz;
    }
}

/// Evaluation role of a point, derived from its semantic id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Inlier,
    Void,
    AuxOod,
    RealOod,
    Ignore,
}

/// Closed-set taxonomy plus the special label ids.
///
/// `aux_ood_id` tags points synthesized by the raise augmentation, so role
/// stays a pure function of the semantic id and training anomalies remain
/// distinguishable from held-out ones after a save/load cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSpec {
    pub inlier_classes: Vec<u16>,
    pub road_id: u16,
    pub void_id: u16,
    pub ood_id: u16,
    pub aux_ood_id: u16,
    pub ignore_id: u16,
    pub extended: bool,
}

impl ClassSpec {
    pub fn validate(&self) -> Result<()> {
        if self.inlier_classes.len() < 2 {
            return Err(contract("at least two inlier classes are required"));
        }
        let inliers: BTreeSet<u16> = self.inlier_classes.iter().copied().collect();
        if inliers.len() != self.inlier_classes.len() {
            return Err(contract("duplicate inlier class id"));
        }
        if !inliers.contains(&self.road_id) {
            return Err(contract("road id must be an inlier class"));
        }
        let specials = [self.void_id, self.ood_id, self.aux_ood_id, self.ignore_id];
        let unique: BTreeSet<u16> = specials.iter().copied().collect();
        if unique.len() != specials.len() || specials.iter().any(|s| inliers.contains(s)) {
            return Err(contract(
                "inlier, void, ood, aux-ood and ignore ids must be disjoint",
            ));
        }
        Ok(())
    }

    /// Number of closed-set classes K.
    pub fn k(&self) -> usize {
        self.inlier_classes.len()
    }

    /// Logit width C: K, or 2K for extended heads.
    pub fn channels(&self) -> usize {
        if self.extended {
            2 * self.k()
        } else {
            self.k()
        }
    }

    pub fn inlier_index(&self, id: u16) -> Option<usize> {
        self.inlier_classes.iter().position(|&c| c == id)
    }

    /// Role for a known id, `None` for ids outside the taxonomy.
    pub fn role_of(&self, id: u16) -> Option<Role> {
        if id == self.void_id {
            Some(Role::Void)
        } else if id == self.ood_id {
            Some(Role::RealOod)
        } else if id == self.aux_ood_id {
            Some(Role::AuxOod)
        } else if id == self.ignore_id {
            Some(Role::Ignore)
        } else if self.inlier_classes.contains(&id) {
            Some(Role::Inlier)
        } else {
            None
        }
    }

    /// Taxonomy used by the synthetic scene generator (SemanticKITTI raw ids).
    pub fn synthetic(extended: bool) -> Self {
        use crate::scenegen::classes::*;
        Self {
            inlier_classes: vec![CAR, BICYCLE, PERSON, ROAD, SIDEWALK, BUILDING, VEGETATION, POLE],
            road_id: ROAD,
            void_id: UNLABELED,
            ood_id: ANOMALY,
            aux_ood_id: AUX_ANOMALY,
            ignore_id: OUTLIER,
            extended,
        }
    }
}

/// Per-point semantic id, instance id and role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    semantic: Vec<u16>,
    instance: Vec<u16>,
    role: Vec<Role>,
    unknown_remapped: usize,
}

impl LabelMap {
    /// Builds a label map, degrading ids unknown to `spec` to its void id.
    pub fn from_ids(mut semantic: Vec<u16>, instance: Vec<u16>, spec: &ClassSpec) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(contract("semantic and instance arrays differ in length"));
        }
        let mut unknown_remapped = 0;
        let role = semantic
            .iter_mut()
            .map(|id| match spec.role_of(*id) {
                Some(role) => role,
                None => {
                    unknown_remapped += 1;
                    *id = spec.void_id;
                    Role::Void
                }
            })
            .collect();
        if unknown_remapped > 0 {
            log::warn!("{unknown_remapped} points carried unknown semantic ids; mapped to void");
        }
        Ok(Self {
            semantic,
            instance,
            role,
            unknown_remapped,
        })
    }

    pub fn empty() -> Self {
        Self {
            semantic: Vec::new(),
            instance: Vec::new(),
            role: Vec::new(),
            unknown_remapped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn semantic(&self) -> &[u16] {
        &self.semantic
    }

    pub fn instance(&self) -> &[u16] {
        &self.instance
    }

    pub fn role(&self) -> &[Role] {
        &self.role
    }

    /// Number of points whose id was unknown at load time.
    pub fn unknown_remapped(&self) -> usize {
        self.unknown_remapped
    }

    pub fn max_instance(&self) -> u16 {
        self.instance.iter().copied().max().unwrap_or(0)
    }

    pub(crate) fn set(&mut self, index: usize, semantic: u16, instance: u16, role: Role) {
        self.semantic[index] = semantic;
        self.instance[index] = instance;
        self.role[index] = role;
    }

    pub(crate) fn push(&mut self, semantic: u16, instance: u16, role: Role) {
        self.semantic.push(semantic);
        self.instance.push(instance);
        self.role.push(role);
    }

    /// Checks that this map annotates `cloud` point for point.
    pub fn check_matches(&self, cloud: &PointCloud) -> Result<()> {
        if self.len() != cloud.len() {
            return Err(contract(format!(
                "label count {} does not match point count {}",
                self.len(),
                cloud.len()
            )));
        }
        Ok(())
    }
}

/// Per-point logits, M rows by K or 2K channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    values: Array2<f64>,
    k: usize,
    extended: bool,
}

impl LogitField {
    pub fn new(values: Array2<f64>, k: usize, extended: bool) -> Result<Self> {
        let expected = if extended { 2 * k } else { k };
        if k < 2 || values.ncols() != expected {
            return Err(contract(format!(
                "logit width {} does not match K = {k} (extended = {extended})",
                values.ncols()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(contract("logits contain NaN or infinite entries"));
        }
        Ok(Self {
            values,
            k,
            extended,
        })
    }

    pub fn for_spec(values: Array2<f64>, spec: &ClassSpec) -> Result<Self> {
        Self::new(values, spec.k(), spec.extended)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }
}

/// Per-point OOD scores. Larger means more anomalous everywhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    scores: Vec<f64>,
}

impl ScoreField {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Contract(format!("score {i} is not finite")));
        }
        Ok(Self { scores })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.scores
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_points() {
        assert!(PointCloud::new(vec![[0.0, f32::NAN, 0.0]], None).is_err());
        assert!(PointCloud::new(vec![[0.0; 3]], Some(vec![])).is_err());
    }

    #[test]
    fn synthetic_spec_is_valid() {
        let spec = ClassSpec::synthetic(true);
        spec.validate().unwrap();
        assert_eq!(spec.channels(), 2 * spec.k());
    }

    #[test]
    fn overlapping_ids_are_rejected() {
        let mut spec = ClassSpec::synthetic(false);
        spec.void_id = spec.road_id;
        assert!(spec.validate().is_err());
        let mut spec = ClassSpec::synthetic(false);
        spec.inlier_classes.truncate(1);
        spec.road_id = spec.inlier_classes[0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn roles_follow_semantic_ids() {
        let spec = ClassSpec::synthetic(false);
        let ids = vec![spec.road_id, spec.void_id, spec.ood_id, spec.aux_ood_id, spec.ignore_id, 999];
        let labels = LabelMap::from_ids(ids, vec![0; 6], &spec).unwrap();
        assert_eq!(
            labels.role(),
            &[Role::Inlier, Role::Void, Role::RealOod, Role::AuxOod, Role::Ignore, Role::Void]
        );
        assert_eq!(labels.semantic()[5], spec.void_id);
        assert_eq!(labels.unknown_remapped(), 1);
    }

    #[test]
    fn logit_width_must_match_head() {
        assert!(LogitField::new(Array2::zeros((3, 4)), 4, false).is_ok());
        assert!(LogitField::new(Array2::zeros((3, 4)), 4, true).is_err());
        assert!(LogitField::new(Array2::zeros((3, 8)), 4, true).is_ok());
        let mut bad = Array2::zeros((1, 2));
        bad[[0, 1]] = f64::INFINITY;
        assert!(LogitField::new(bad, 2, false).is_err());
    }
}
