//! Point-level and object-level anomaly metrics, plus the plain-text report.

pub mod object;
pub mod point;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;

pub use object::{
    cluster_predictions, gt_instances, ignore_mask, match_instances, ood_mask, panoptic_scores, EvalConfig, MatchResult,
    PanopticAccumulator, PanopticScores,
};
pub use point::{auroc, average_precision, fpr_at_95_tpr, gamma_at_tpr, roc_curve};

use crate::error::{contract, Error, Result};
use crate::types::{LabelMap, PointCloud, ScoreField};

/// The eight reported quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalMetrics {
    pub auroc: f64,
    pub fpr95: f64,
    pub ap: f64,
    pub recall_q: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq: f64,
    pub uq: f64,
}

/// Report keys for the metrics, in the order of [`EvalMetrics::values`].
pub const METRIC_KEYS: [&str; 8] = [
    "metric.auroc",
    "metric.fpr95",
    "metric.ap",
    "metric.recall_q",
    "metric.sq",
    "metric.rq",
    "metric.pq",
    "metric.uq",
];

impl EvalMetrics {
    pub fn values(&self) -> [f64; 8] {
        [self.auroc, self.fpr95, self.ap, self.recall_q, self.sq, self.rq, self.pq, self.uq]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self {
            auroc: v[0],
            fpr95: v[1],
            ap: v[2],
            recall_q: v[3],
            sq: v[4],
            rq: v[5],
            pq: v[6],
            uq: v[7],
        }
    }
}

/// Collects scans, pooling points for the ranking metrics and matches for
/// the panoptic ones.
#[derive(Debug, Clone)]
pub struct Evaluator {
    cfg: EvalConfig,
    scores: Vec<f64>,
    is_ood: Vec<bool>,
    ignore: Vec<bool>,
    panoptic: PanopticAccumulator,
}

impl Evaluator {
    pub fn new(cfg: EvalConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            scores: Vec::new(),
            is_ood: Vec::new(),
            ignore: Vec::new(),
            panoptic: PanopticAccumulator::default(),
        })
    }

    pub fn add_scan(&mut self, scores: &ScoreField, cloud: &PointCloud, labels: &LabelMap) -> Result<MatchResult> {
        labels.check_matches(cloud)?;
        if scores.len() != cloud.len() {
            return Err(contract("scores and cloud differ in length"));
        }
        let ignore = ignore_mask(labels);
        let preds = cluster_predictions(scores, cloud, &self.cfg)?;
        let m = match_instances(&preds, labels, &ignore, self.cfg.iou_threshold)?;
        self.panoptic.add(&m);
        self.scores.extend_from_slice(scores.as_slice());
        self.is_ood.extend(ood_mask(labels));
        self.ignore.extend(ignore);
        Ok(m)
    }

    pub fn panoptic(&self) -> PanopticAccumulator {
        self.panoptic
    }

    pub fn finish(&self) -> Result<EvalMetrics> {
        let pan = self.panoptic.scores();
        Ok(EvalMetrics {
            auroc: auroc(&self.scores, &self.is_ood, &self.ignore)?,
            fpr95: fpr_at_95_tpr(&self.scores, &self.is_ood, &self.ignore)?,
            ap: average_precision(&self.scores, &self.is_ood, &self.ignore)?,
            recall_q: pan.recall_q,
            sq: pan.sq,
            rq: pan.rq,
            pq: pan.pq,
            uq: pan.uq,
        })
    }
}

/// Key-sorted `key = value` text. Always carries the crate version.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    entries: BTreeMap<String, String>,
}

impl Default for Report {
    fn default() -> Self {
        Self::new()
    }
}

impl Report {
    pub fn new() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert("version".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Self { entries }
    }

    pub fn with_metrics(metrics: &EvalMetrics) -> Self {
        let mut r = Self::new();
        r.set_metrics(metrics);
        r
    }

    pub fn set_metrics(&mut self, metrics: &EvalMetrics) {
        for (k, v) in METRIC_KEYS.iter().zip(metrics.values()) {
            self.set(k, v);
        }
    }

    /// Panics on keys or values that would break the line format.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        assert!(
            !key.is_empty() && !key.contains(['=', '\n', ' ']) && !value.contains('\n'),
            "invalid report entry {key:?}"
        );
        self.entries.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self.get(key).ok_or_else(|| Error::Format(format!("report lacks {key}")))?;
        v.parse().map_err(|_| Error::Format(format!("{key} is not a number: {v}")))
    }

    pub fn metrics(&self) -> Result<EvalMetrics> {
        let mut v = [0.0; 8];
        for (slot, key) in v.iter_mut().zip(METRIC_KEYS) {
            *slot = self.get_f64(key)?;
        }
        Ok(EvalMetrics::from_values(v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("report line {} is not `key = value`", n + 1)))?;
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Format(format!("duplicate report key {k}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_has_zero_metrics() {
        let r = Report::with_metrics(&EvalMetrics::default());
        assert_eq!(r.metrics().unwrap(), EvalMetrics::default());
        assert!(r.to_text().contains("metric.pq = 0\n"));
    }

    #[test]
    fn report_round_trips() {
        let mut r = Report::with_metrics(&EvalMetrics::from_values([0.9, 0.1, 0.7, 0.5, 0.8, 0.4, 0.32, 0.4]));
        r.set("train.seed", 7);
        r.set("eval.gamma", 0.125);
        let back = Report::parse(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.metrics().unwrap().pq, 0.32);
    }

    #[test]
    fn keys_are_sorted_in_text() {
        let mut r = Report::new();
        r.set("b", 1);
        r.set("a", 2);
        assert_eq!(r.to_text(), format!("a = 2\nb = 1\nversion = {}\n", env!("CARGO_PKG_VERSION")));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Report::parse("just text\n").is_err());
        assert!(Report::parse("a = 1\na = 2\n").is_err());
    }
}
