//! One function per subcommand. Each reads its inputs, runs one stage and
//! writes its artifact together with a provenance sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndp_core::io::{load_point_cloud, load_scores, save_scores};
use ndp_core::metrics::{gamma_at_tpr, ignore_mask, ood_mask, Evaluator, Report};
use ndp_core::scenegen::{generate_scene, inject_eval_anomalies};
use ndp_core::{perlin_raise, train, ClassSpec, Error, RaiseConfig, ScoreMethod, TrainedModel};

use crate::config::PipelineConfig;
use crate::dataset::{list_scans, load_dataset, load_scan, load_score_file, save_scan, scan_name, score_path};
use crate::export::export_map;
use crate::provenance::{upstream_field, Provenance};
use crate::{CliError, Command, Common};

type CmdResult = Result<(), CliError>;

/// Seed of the `index`-th item derived from a stage seed.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// Class taxonomy of every dataset the pipeline reads and writes. Models
/// always carry the 2K-channel head so any score method can be applied.
pub fn pipeline_spec() -> ClassSpec {
    ClassSpec::synthetic(true)
}

fn load_config(common: &Common) -> Result<PipelineConfig, CliError> {
    Ok(match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    })
}

fn set<T: ToString>(cfg: &mut PipelineConfig, key: &str, value: Option<T>) -> Result<(), CliError> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn distinct(input: &Path, output: &Path) -> Result<(), CliError> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Error::Contract(format!("refusing to overwrite input {}", input.display())).into());
    }
    Ok(())
}

pub fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Synth {
            common,
            seed,
            out,
            scenes,
            points,
            anomalies,
        } => {
            let mut cfg = load_config(&common)?;
            set(&mut cfg, "scene.seed", seed)?;
            set(&mut cfg, "scene.count", scenes)?;
            set(&mut cfg, "scene.points", points)?;
            set(&mut cfg, "scene.anomalies", anomalies)?;
            cmd_synth(&cfg, &out)
        }
        Command::Raise { common, data, out, seed } => {
            let mut cfg = load_config(&common)?;
            set(&mut cfg, "raise.seed", seed)?;
            cmd_raise(&cfg, &data, &out)
        }
        Command::Train {
            common,
            data,
            out,
            method,
            epochs,
            lr,
            seed,
            ndp,
        } => {
            let mut cfg = load_config(&common)?;
            set(&mut cfg, "train.method", method.map(|m| ScoreMethod::from(m).name()))?;
            set(&mut cfg, "train.epochs", epochs)?;
            set(&mut cfg, "train.lr", lr)?;
            set(&mut cfg, "train.seed", seed)?;
            set(&mut cfg, "train.ndp", ndp.map(|s| s.enabled()))?;
            cmd_train(&cfg, &data, &out)
        }
        Command::Score {
            common,
            data,
            model,
            out,
            method,
            ndp,
        } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            cmd_score(&cfg, &data, &model, &out, method.map(Into::into), ndp.map(|s| s.enabled()))
        }
        Command::Eval {
            common,
            labels,
            scores,
            out,
            gamma,
            gamma_from_tpr,
            calib_labels,
            calib_scores,
        } => {
            let mut cfg = load_config(&common)?;
            if gamma.is_some() || gamma_from_tpr.is_some() {
                cfg.eval_gamma = None;
                cfg.eval_gamma_from_tpr = None;
            }
            set(&mut cfg, "eval.gamma", gamma)?;
            set(&mut cfg, "eval.gamma_from_tpr", gamma_from_tpr)?;
            if cfg.eval_gamma.is_some() && cfg.eval_gamma_from_tpr.is_some() {
                return Err(CliError::Usage("config sets both eval.gamma and eval.gamma_from_tpr".into()));
            }
            if cfg.eval_gamma.is_none() && cfg.eval_gamma_from_tpr.is_none() {
                return Err(CliError::Usage("eval needs --gamma or --gamma-from-tpr".into()));
            }
            let calib = calib_labels.zip(calib_scores);
            cmd_eval(&cfg, &labels, &scores, &out, calib.as_ref().map(|(l, s)| (l.as_path(), s.as_path())))
        }
        Command::ExportMap {
            scores,
            cloud,
            out,
            resolution,
        } => cmd_export_map(&scores, &cloud, &out, resolution),
    }
}

pub fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> CmdResult {
    cfg.validate()?;
    let spec = pipeline_spec();
    fs::create_dir_all(out)?;
    let mut prov = Provenance::with_config("synth", cfg, Some(cfg.scene_seed));
    let mut anomaly_points = 0;
    for i in 0..cfg.scene_count {
        let scene = cfg.scene_config(derive_seed(cfg.scene_seed, i));
        let (cloud, labels) = generate_scene(&scene, &spec)?;
        let (cloud, labels, injected) =
            inject_eval_anomalies(&cloud, &labels, &spec, &scene, cfg.scene_anomalies, scene.seed ^ 0xA11CE)?;
        anomaly_points += injected.iter().map(|a| a.num_points).sum::<usize>();
        save_scan(out, &scan_name(i), &cloud, &labels)?;
    }
    prov.set("output.scans", cfg.scene_count);
    prov.set("output.anomaly_points", anomaly_points);
    prov.write_for(out)?;
    info!("wrote {} scenes to {}", cfg.scene_count, out.display());
    Ok(())
}

pub fn cmd_raise(cfg: &PipelineConfig, data: &Path, out: &Path) -> CmdResult {
    cfg.validate()?;
    distinct(data, out)?;
    let spec = pipeline_spec();
    let scans = load_dataset(data, &spec)?;
    fs::create_dir_all(out)?;
    let mut prov = Provenance::with_config("raise", cfg, Some(cfg.raise.seed));
    prov.input("data", data)?;
    for (i, (stem, cloud, labels)) in scans.iter().enumerate() {
        let raise = RaiseConfig {
            seed: derive_seed(cfg.raise.seed, i),
            ..cfg.raise.clone()
        };
        let (cloud, labels, report) = perlin_raise(cloud, labels, &spec, &raise)?;
        save_scan(out, stem, &cloud, &labels)?;
        prov.set(&format!("scan.{stem}.raised"), report.raised.len());
    }
    prov.write_for(out)?;
    Ok(())
}

pub fn cmd_train(cfg: &PipelineConfig, data: &Path, out: &Path) -> CmdResult {
    cfg.validate()?;
    let spec = pipeline_spec();
    let scenes: Vec<_> = load_dataset(data, &spec)?.into_iter().map(|(_, c, l)| (c, l)).collect();
    let (model, log) = train(&scenes, &spec, &cfg.train)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    model.save(out)?;
    let mut prov = Provenance::with_config("train", cfg, Some(cfg.train.seed));
    prov.input("data", data)?;
    for (e, epoch) in log.epochs.iter().enumerate() {
        let key = |k: &str| format!("log.epoch.{:03}.{k}", e + 1);
        prov.set(&key("ce"), epoch.loss.ce);
        prov.set(&key("std"), epoch.loss.std);
        prov.set(&key("soe"), epoch.loss.soe);
        prov.set(&key("total"), epoch.loss.total);
        prov.set(&key("scans"), epoch.scans);
        prov.set(&key("skipped"), epoch.skipped);
    }
    prov.write_for(out)?;
    Ok(())
}

pub fn cmd_score(
    cfg: &PipelineConfig,
    data: &Path,
    model_path: &Path,
    out: &Path,
    method: Option<ScoreMethod>,
    ndp: Option<bool>,
) -> CmdResult {
    distinct(data, out)?;
    let model = TrainedModel::load(model_path)?;
    let method = method.unwrap_or(model.method);
    let use_ndp = ndp.unwrap_or(model.ndp_enabled);
    if method.requires_extended() && !model.spec.extended {
        return Err(Error::Contract("model has no extended head for extended energy".into()).into());
    }
    fs::create_dir_all(out)?;
    for stem in list_scans(data)? {
        let (cloud, _) = load_scan(data, &stem, &model.spec)?;
        let scores = model.scores_with(&cloud, method, use_ndp)?;
        save_scores(score_path(out, &stem), &scores)?;
    }
    let mut prov = Provenance::with_config("score", cfg, None);
    prov.input("data", data)?;
    prov.input("model", model_path)?;
    prov.set("model.seed", upstream_field(model_path, "seed").unwrap_or_else(|| "unknown".into()));
    prov.set("score.method", method.name());
    prov.set("score.ndp", use_ndp);
    prov.write_for(out)?;
    Ok(())
}

/// Scores, OOD flags and ignore mask, pooled over a dataset.
type Pooled = (Vec<f64>, Vec<bool>, Vec<bool>);

fn pooled(labels_dir: &Path, scores_dir: &Path) -> Result<Pooled, CliError> {
    let spec = pipeline_spec();
    let (mut s, mut o, mut ig) = (Vec::new(), Vec::new(), Vec::new());
    for (stem, cloud, labels) in load_dataset(labels_dir, &spec)? {
        s.extend(load_score_file(scores_dir, &stem, cloud.len())?.into_vec());
        o.extend(ood_mask(&labels));
        ig.extend(ignore_mask(&labels));
    }
    Ok((s, o, ig))
}

pub fn cmd_eval(
    cfg: &PipelineConfig,
    labels_dir: &Path,
    scores_dir: &Path,
    out: &Path,
    calib: Option<(&Path, &Path)>,
) -> CmdResult {
    cfg.validate()?;
    let (gamma, source) = match (cfg.eval_gamma, cfg.eval_gamma_from_tpr) {
        (Some(g), _) => (g, "fixed".to_string()),
        (None, Some(tpr)) => {
            let (dir_l, dir_s, source) = match calib {
                Some((l, s)) => (l, s, "calibration-set"),
                None => (labels_dir, scores_dir, "evaluation-set"),
            };
            let (s, o, ig) = pooled(dir_l, dir_s)?;
            (gamma_at_tpr(&s, &o, &ig, tpr)?, format!("tpr-{tpr}-{source}"))
        }
        (None, None) => return Err(CliError::Usage("eval needs --gamma or --gamma-from-tpr".into())),
    };

    let spec = pipeline_spec();
    let mut evaluator = Evaluator::new(cfg.eval_config(gamma))?;
    let mut points = 0;
    let scans = load_dataset(labels_dir, &spec)?;
    for (stem, cloud, labels) in &scans {
        let scores = load_score_file(scores_dir, stem, cloud.len())?;
        evaluator.add_scan(&scores, cloud, labels)?;
        points += cloud.len();
    }
    let metrics = evaluator.finish()?;
    let pan = evaluator.panoptic();

    let mut report = Report::with_metrics(&metrics);
    for (k, v) in cfg.entries() {
        report.set(&format!("config.{k}"), v);
    }
    report.set("config_sha256", cfg.hash());
    report.set("eval.gamma_used", gamma);
    report.set("eval.gamma_source", source);
    report.set("count.scans", scans.len());
    report.set("count.points", points);
    report.set("count.tp", pan.tp);
    report.set("count.fp", pan.fp);
    report.set("count.fn", pan.fn_);
    let unknown = || "unknown".to_string();
    report.set("seed.data", upstream_field(labels_dir, "seed").unwrap_or_else(unknown));
    report.set("seed.train", upstream_field(scores_dir, "model.seed").unwrap_or_else(unknown));
    let mut prov = Provenance::new("eval");
    prov.input("labels", labels_dir)?;
    prov.input("scores", scores_dir)?;
    for key in prov.report().keys().filter(|k| k.starts_with("input.")) {
        report.set(key, prov.report().get(key).unwrap_or_default());
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    report.write(out)?;
    let mut prov = Provenance::with_config("eval", cfg, None);
    prov.input("labels", labels_dir)?;
    prov.input("scores", scores_dir)?;
    prov.set("eval.gamma_used", gamma);
    prov.write_for(out)?;
    Ok(())
}

pub fn cmd_export_map(scores_path: &Path, cloud_path: &Path, out: &Path, resolution: f64) -> CmdResult {
    let cloud = load_point_cloud(cloud_path)?;
    let scores = load_scores(scores_path)?;
    let with_ext = |ext: &str| {
        let mut s = out.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    let (png, ply) = (with_ext(".png"), with_ext(".ply"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    export_map(&cloud, &scores, resolution, &png, &ply)?;
    let mut prov = Provenance::new("export-map");
    prov.input("scores", scores_path)?;
    prov.input("cloud", cloud_path)?;
    prov.set("export.resolution", resolution);
    prov.write_for(&png)?;
    prov.write_for(&ply)?;
    Ok(())
}
