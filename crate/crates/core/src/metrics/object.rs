//! Object-level evaluation: cluster flagged points into predicted anomalies,
//! match them to ground-truth instances, and score the matching.

use std::collections::{BTreeMap, HashMap};

use crate::cluster::dbscan;
use crate::error::{contract, Result};
use crate::scoring::{classify, Decision};
use crate::types::{LabelMap, PointCloud, Role, ScoreField};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub gamma: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    /// Fixed by the protocol; kept as a field so reports can show it.
    pub iou_threshold: f64,
}

impl EvalConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            dbscan_eps: 0.5,
            dbscan_min_pts: 5,
            iou_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(contract("gamma must be finite"));
        }
        if !(self.dbscan_eps > 0.0) || self.dbscan_min_pts < 1 {
            return Err(contract("eval clustering needs eps > 0 and min_pts >= 1"));
        }
        if self.iou_threshold != 0.5 {
            return Err(contract("the IoU threshold is fixed at 0.5"));
        }
        Ok(())
    }
}

/// Points flagged OOD at `γ`, clustered; each cluster is one predicted
/// instance given as ascending point indices. Noise is discarded.
pub fn cluster_predictions(scores: &ScoreField, cloud: &PointCloud, cfg: &EvalConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    if scores.len() != cloud.len() {
        return Err(contract("scores and cloud differ in length"));
    }
    let flagged: Vec<usize> = classify(scores, cfg.gamma)
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == Decision::Ood)
        .map(|(i, _)| i)
        .collect();
    if flagged.is_empty() {
        return Ok(Vec::new());
    }
    let all = cloud.positions();
    let positions: Vec<[f64; 3]> = flagged.iter().map(|&i| all[i]).collect();
    let assign = dbscan(&positions, cfg.dbscan_eps, cfg.dbscan_min_pts)?;
    Ok(assign
        .members()
        .into_iter()
        .map(|m| m.into_iter().map(|j| flagged[j]).collect())
        .collect())
}

/// True for points whose role marks them as anomalous in evaluation.
pub fn ood_mask(labels: &LabelMap) -> Vec<bool> {
    labels.role().iter().map(|r| matches!(r, Role::RealOod | Role::AuxOod)).collect()
}

/// True for points excluded from evaluation.
pub fn ignore_mask(labels: &LabelMap) -> Vec<bool> {
    labels.role().iter().map(|r| matches!(r, Role::Void | Role::Ignore)).collect()
}

/// Ground-truth anomaly instances keyed by instance id.
pub fn gt_instances(labels: &LabelMap) -> BTreeMap<u16, Vec<usize>> {
    let mut out: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, (&inst, role)) in labels.instance().iter().zip(labels.role()).enumerate() {
        if matches!(role, Role::RealOod | Role::AuxOod) {
            out.entry(inst).or_default().push(i);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// `(pred index, gt instance id, IoU)`.
    pub true_pos: Vec<(usize, u16, f64)>,
    pub false_pos: Vec<usize>,
    pub false_neg: Vec<u16>,
}

/// Greedy one-to-one matching by descending IoU, ties broken by gt id then
/// pred index. Ignored points are removed from both sides first; unmatched
/// predictions lying wholly in ignored space are dropped rather than counted.
pub fn match_instances(preds: &[Vec<usize>], gt: &LabelMap, ignore: &[bool], iou_threshold: f64) -> Result<MatchResult> {
    if ignore.len() != gt.len() {
        return Err(contract("ignore mask and labels differ in length"));
    }
    let gts = gt_instances(gt);
    let mut owner: HashMap<usize, u16> = HashMap::new();
    let mut gt_size: BTreeMap<u16, usize> = BTreeMap::new();
    for (&id, members) in &gts {
        let kept: Vec<usize> = members.iter().copied().filter(|&i| !ignore[i]).collect();
        gt_size.insert(id, kept.len());
        owner.extend(kept.into_iter().map(|i| (i, id)));
    }

    let mut pred_size = Vec::with_capacity(preds.len());
    let mut candidates: Vec<(f64, u16, usize)> = Vec::new();
    for (p, members) in preds.iter().enumerate() {
        let mut size = 0usize;
        let mut overlap: BTreeMap<u16, usize> = BTreeMap::new();
        for &i in members {
            if i >= ignore.len() {
                return Err(contract("prediction index out of range"));
            }
            if ignore[i] {
                continue;
            }
            size += 1;
            if let Some(&g) = owner.get(&i) {
                *overlap.entry(g).or_default() += 1;
            }
        }
        pred_size.push(size);
        for (g, inter) in overlap {
            let union = size + gt_size[&g] - inter;
            let iou = inter as f64 / union as f64;
            if iou > iou_threshold {
                candidates.push((iou, g, p));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut result = MatchResult::default();
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used: BTreeMap<u16, bool> = gts.keys().map(|&g| (g, false)).collect();
    for (iou, g, p) in candidates {
        if pred_used[p] || gt_used[&g] {
            continue;
        }
        pred_used[p] = true;
        gt_used.insert(g, true);
        result.true_pos.push((p, g, iou));
    }
    result.false_pos = (0..preds.len()).filter(|&p| !pred_used[p] && pred_size[p] > 0).collect();
    result.false_neg = gt_used.into_iter().filter(|(_, used)| !used).map(|(g, _)| g).collect();
    Ok(result)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PanopticScores {
    pub sq: f64,
    pub rq: f64,
    pub pq: f64,
    pub recall_q: f64,
    pub uq: f64,
}

/// Pools matches across scans before computing the panoptic quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PanopticAccumulator {
    pub iou_sum: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PanopticAccumulator {
    pub fn add(&mut self, m: &MatchResult) {
        self.iou_sum += m.true_pos.iter().map(|t| t.2).sum::<f64>();
        self.tp += m.true_pos.len();
        self.fp += m.false_pos.len();
        self.fn_ += m.false_neg.len();
    }

    pub fn scores(&self) -> PanopticScores {
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let tp = self.tp as f64;
        let sq = ratio(self.iou_sum, tp);
        let rq = ratio(tp, tp + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64);
        let recall_q = ratio(tp, tp + self.fn_ as f64);
        let s = PanopticScores {
            sq,
            rq,
            pq: sq * rq,
            recall_q,
            uq: sq * recall_q,
        };
        debug_assert!(s.pq == s.sq * s.rq && s.uq == s.sq * s.recall_q);
        s
    }
}

pub fn panoptic_scores(m: &MatchResult) -> PanopticScores {
    let mut acc = PanopticAccumulator::default();
    acc.add(m);
    acc.scores()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassSpec;

    /// `n` points; those in `ood` get instance ids from the map.
    fn labels(n: usize, ood: &[(u16, std::ops::Range<usize>)]) -> LabelMap {
        let spec = ClassSpec::synthetic(true);
        let mut sem = vec![spec.inlier_classes[0]; n];
        let mut inst = vec![0u16; n];
        for (id, range) in ood {
            for i in range.clone() {
                sem[i] = spec.ood_id;
                inst[i] = *id;
            }
        }
        LabelMap::from_ids(sem, inst, &spec).unwrap()
    }

    #[test]
    fn identical_instance_is_perfect() {
        let gt = labels(20, &[(3, 5..15)]);
        let m = match_instances(&[(5..15).collect()], &gt, &[false; 20], 0.5).unwrap();
        assert_eq!(m.true_pos, vec![(0, 3, 1.0)]);
        let s = panoptic_scores(&m);
        assert_eq!((s.sq, s.rq, s.pq, s.recall_q, s.uq), (1.0, 1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn disjoint_gives_fp_and_fn() {
        let gt = labels(20, &[(1, 0..5)]);
        let m = match_instances(&[(10..15).collect()], &gt, &[false; 20], 0.5).unwrap();
        assert!(m.true_pos.is_empty());
        assert_eq!(m.false_pos, vec![0]);
        assert_eq!(m.false_neg, vec![1]);
    }

    #[test]
    fn sixty_percent_cover_matches() {
        let gt = labels(120, &[(1, 0..100)]);
        let m = match_instances(&[(0..60).collect()], &gt, &[false; 120], 0.5).unwrap();
        assert_eq!(m.true_pos.len(), 1);
        assert!((m.true_pos[0].2 - 0.6).abs() < 1e-15);
    }

    #[test]
    fn half_overlap_is_not_enough() {
        let gt = labels(120, &[(1, 0..100)]);
        let m = match_instances(&[(0..50).collect()], &gt, &[false; 120], 0.5).unwrap();
        assert!(m.true_pos.is_empty());
    }

    #[test]
    fn prediction_in_ignore_is_dropped() {
        let gt = labels(30, &[(1, 0..10)]);
        let mut ignore = vec![false; 30];
        ignore[20..30].iter_mut().for_each(|v| *v = true);
        let base = match_instances(&[(0..10).collect()], &gt, &ignore, 0.5).unwrap();
        let more = match_instances(&[(0..10).collect(), (20..30).collect()], &gt, &ignore, 0.5).unwrap();
        assert_eq!(panoptic_scores(&base), panoptic_scores(&more));
        assert!(more.false_pos.is_empty());
    }

    #[test]
    fn empty_match_scores_zero() {
        assert_eq!(panoptic_scores(&MatchResult::default()), PanopticScores::default());
        let gt = labels(5, &[(1, 0..5)]);
        let m = match_instances(&[], &gt, &[false; 5], 0.5).unwrap();
        assert_eq!(panoptic_scores(&m), PanopticScores::default());
    }

    #[test]
    fn hand_case_with_false_positive() {
        let m = MatchResult {
            true_pos: vec![(0, 1, 0.6)],
            false_pos: vec![1],
            false_neg: vec![],
        };
        let s = panoptic_scores(&m);
        assert!((s.sq - 0.6).abs() < 1e-15);
        assert!((s.rq - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.pq - 0.4).abs() < 1e-15);
        assert_eq!(s.recall_q, 1.0);
        assert!((s.uq - 0.6).abs() < 1e-15);
    }

    #[test]
    fn nothing_above_gamma_gives_no_instances() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 10], None).unwrap();
        let scores = ScoreField::new(vec![0.1; 10]).unwrap();
        assert!(cluster_predictions(&scores, &cloud, &EvalConfig::new(0.5)).unwrap().is_empty());
    }

    #[test]
    fn tight_blob_is_one_instance() {
        let mut pts = vec![[0.0f32, 0.0, 0.0]; 10];
        for (i, p) in pts.iter_mut().enumerate() {
            p[0] = 0.05 * i as f32;
        }
        pts.extend((0..5).map(|i| [20.0 + i as f32, 0.0, 0.0]));
        let cloud = PointCloud::new(pts, None).unwrap();
        let mut s = vec![1.0; 10];
        s.extend([0.0; 5]);
        let out = cluster_predictions(&ScoreField::new(s).unwrap(), &cloud, &EvalConfig::new(0.5)).unwrap();
        assert_eq!(out, vec![(0..10).collect::<Vec<_>>()]);
    }

    #[test]
    fn iou_threshold_is_fixed() {
        let cfg = EvalConfig { iou_threshold: 0.4, ..EvalConfig::new(0.0) };
        assert!(cfg.validate().is_err());
    }
}
