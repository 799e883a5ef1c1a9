//! Flat `section.key = value` pipeline configuration.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use ndp_core::losses::StdOrientation;
use ndp_core::metrics::EvalConfig;
use ndp_core::scenegen::SceneConfig;
use ndp_core::{Error, RaiseConfig, Result, TrainConfig};
use sha2::{Digest, Sha256};

/// Every tunable of every stage. Command-line flags override file values.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scene_seed: u64,
    pub scene_count: usize,
    pub scene_points: usize,
    pub scene_anomalies: usize,
    pub scene_road_noise_sigma: f64,
    /// Raise parameters; `train.raise` mirrors this section.
    pub raise: RaiseConfig,
    pub train: TrainConfig,
    pub eval_gamma: Option<f64>,
    pub eval_gamma_from_tpr: Option<f64>,
    pub eval_dbscan_eps: f64,
    pub eval_dbscan_min_pts: usize,
    pub eval_iou_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let eval = EvalConfig::new(0.0);
        Self {
            scene_seed: 0,
            scene_count: 10,
            scene_points: 4000,
            scene_anomalies: 0,
            scene_road_noise_sigma: 0.02,
            raise: RaiseConfig::default(),
            train: TrainConfig::default(),
            eval_gamma: None,
            eval_gamma_from_tpr: None,
            eval_dbscan_eps: eval.dbscan_eps,
            eval_dbscan_min_pts: eval.dbscan_min_pts,
            eval_iou_threshold: eval.iou_threshold,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Contract(format!("invalid value `{value}` for {key}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn orientation_name(o: StdOrientation) -> &'static str {
    match o {
        StdOrientation::Consistent => "consistent",
        StdOrientation::Swapped => "swapped",
    }
}

impl PipelineConfig {
    /// Canonical `(key, value)` pairs, sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let r = &self.raise;
        let t = &self.train;
        let l = &t.loss;
        let mut out = vec![
            ("eval.dbscan_eps", self.eval_dbscan_eps.to_string()),
            ("eval.dbscan_min_pts", self.eval_dbscan_min_pts.to_string()),
            ("eval.gamma", show_opt(self.eval_gamma)),
            ("eval.gamma_from_tpr", show_opt(self.eval_gamma_from_tpr)),
            ("eval.iou_threshold", self.eval_iou_threshold.to_string()),
            ("loss.beta", l.beta.to_string()),
            ("loss.ce_positive_only", l.ce_positive_only.to_string()),
            ("loss.ood_weight", l.ood_weight.to_string()),
            ("loss.std_orientation", orientation_name(l.std_orientation).to_string()),
            ("raise.alpha", r.alpha.to_string()),
            ("raise.cell_size", show_opt(r.cell_size)),
            ("raise.dbscan_eps", r.dbscan_eps.to_string()),
            ("raise.dbscan_min_pts", r.dbscan_min_pts.to_string()),
            ("raise.label_all_clusters", r.label_all_clusters.to_string()),
            ("raise.r_max", r.r_max.to_string()),
            ("raise.r_min", r.r_min.to_string()),
            ("raise.rho", r.rho.to_string()),
            ("raise.seed", r.seed.to_string()),
            ("scene.anomalies", self.scene_anomalies.to_string()),
            ("scene.count", self.scene_count.to_string()),
            ("scene.points", self.scene_points.to_string()),
            ("scene.road_noise_sigma", self.scene_road_noise_sigma.to_string()),
            ("scene.seed", self.scene_seed.to_string()),
            ("train.adam_beta1", t.beta1.to_string()),
            ("train.adam_beta2", t.beta2.to_string()),
            ("train.adam_eps", t.eps.to_string()),
            ("train.batch_scans", t.batch_scans.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.hidden", t.hidden.to_string()),
            ("train.latent_dim", t.latent_dim.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.method", t.method.name().to_string()),
            ("train.ndp", t.ndp.to_string()),
            ("train.raise_per_scan", t.raise_per_scan.to_string()),
            ("train.seed", t.seed.to_string()),
        ];
        out.sort_by_key(|(k, _)| *k);
        out
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let r = &mut self.raise;
        let t = &mut self.train;
        match key {
            "eval.dbscan_eps" => self.eval_dbscan_eps = parse(key, v)?,
            "eval.dbscan_min_pts" => self.eval_dbscan_min_pts = parse(key, v)?,
            "eval.gamma" => self.eval_gamma = parse_opt(key, v)?,
            "eval.gamma_from_tpr" => self.eval_gamma_from_tpr = parse_opt(key, v)?,
            "eval.iou_threshold" => self.eval_iou_threshold = parse(key, v)?,
            "loss.beta" => t.loss.beta = parse(key, v)?,
            "loss.ce_positive_only" => t.loss.ce_positive_only = parse(key, v)?,
            "loss.ood_weight" => t.loss.ood_weight = parse(key, v)?,
            "loss.std_orientation" => {
                t.loss.std_orientation = match v {
                    "consistent" => StdOrientation::Consistent,
                    "swapped" => StdOrientation::Swapped,
                    _ => return Err(Error::Contract(format!("invalid value `{v}` for {key}"))),
                }
            }
            "raise.alpha" => r.alpha = parse(key, v)?,
            "raise.cell_size" => r.cell_size = parse_opt(key, v)?,
            "raise.dbscan_eps" => r.dbscan_eps = parse(key, v)?,
            "raise.dbscan_min_pts" => r.dbscan_min_pts = parse(key, v)?,
            "raise.label_all_clusters" => r.label_all_clusters = parse(key, v)?,
            "raise.r_max" => r.r_max = parse(key, v)?,
            "raise.r_min" => r.r_min = parse(key, v)?,
            "raise.rho" => r.rho = parse(key, v)?,
            "raise.seed" => r.seed = parse(key, v)?,
            "scene.anomalies" => self.scene_anomalies = parse(key, v)?,
            "scene.count" => self.scene_count = parse(key, v)?,
            "scene.points" => self.scene_points = parse(key, v)?,
            "scene.road_noise_sigma" => self.scene_road_noise_sigma = parse(key, v)?,
            "scene.seed" => self.scene_seed = parse(key, v)?,
            "train.adam_beta1" => t.beta1 = parse(key, v)?,
            "train.adam_beta2" => t.beta2 = parse(key, v)?,
            "train.adam_eps" => t.eps = parse(key, v)?,
            "train.batch_scans" => t.batch_scans = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.hidden" => t.hidden = parse(key, v)?,
            "train.latent_dim" => t.latent_dim = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.method" => t.method = parse(key, v)?,
            "train.ndp" => t.ndp = parse(key, v)?,
            "train.raise_per_scan" => t.raise_per_scan = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            _ => return Err(Error::Contract(format!("unknown config key `{key}`"))),
        }
        self.train.raise = self.raise.clone();
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Contract(format!("config line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn scene_config(&self, seed: u64) -> SceneConfig {
        SceneConfig {
            seed,
            road_noise_sigma: self.scene_road_noise_sigma,
            ..SceneConfig::with_total(self.scene_points)
        }
    }

    pub fn eval_config(&self, gamma: f64) -> EvalConfig {
        EvalConfig {
            gamma,
            dbscan_eps: self.eval_dbscan_eps,
            dbscan_min_pts: self.eval_dbscan_min_pts,
            iou_threshold: self.eval_iou_threshold,
        }
    }

    /// Checks every section, so no stage starts on a bad config.
    pub fn validate(&self) -> Result<()> {
        if self.scene_count == 0 || self.scene_points < 100 {
            return Err(Error::Contract("need at least one scene of at least 100 points".into()));
        }
        self.scene_config(self.scene_seed).validate()?;
        self.raise.validate()?;
        self.train.validate()?;
        self.eval_config(self.eval_gamma.unwrap_or(0.0)).validate()?;
        if let Some(t) = self.eval_gamma_from_tpr {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Contract("eval.gamma_from_tpr must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.set("train.lr", "0.001").unwrap();
        cfg.set("raise.cell_size", "0.4").unwrap();
        cfg.set("loss.std_orientation", "swapped").unwrap();
        let back = PipelineConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(back.train.raise.cell_size, Some(0.4));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::parse("train.learning_rate = 1\n").is_err());
        assert!(PipelineConfig::parse("no equals sign\n").is_err());
        assert!(PipelineConfig::parse("train.epochs = many\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let cfg = PipelineConfig::parse("# comment\n\ntrain.epochs = 3 # trailing\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn validation_covers_every_section() {
        assert!(PipelineConfig::default().validate().is_ok());
        for (k, v) in [("raise.rho", "0"), ("train.epochs", "0"), ("loss.beta", "2"), ("eval.iou_threshold", "0.6")] {
            let mut cfg = PipelineConfig::default();
            cfg.set(k, v).unwrap();
            assert!(cfg.validate().is_err(), "{k}");
        }
    }

    #[test]
    fn entries_are_sorted_and_unique() {
        let keys: Vec<_> = PipelineConfig::default().entries().into_iter().map(|(k, _)| k).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(keys, sorted);
    }
}
