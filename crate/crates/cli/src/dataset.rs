//! Directory layout shared by all subcommands:
//! `velodyne/NNNNNN.bin` and `labels/NNNNNN.label`, plus flat
//! `NNNNNN.score` files in score directories.

use std::fs;
use std::path::{Path, PathBuf};

use ndp_core::io::{load_labels, load_point_cloud, load_scores, save_labels, save_point_cloud};
use ndp_core::{ClassSpec, Error, LabelMap, PointCloud, Result, ScoreField};

pub const CLOUD_DIR: &str = "velodyne";
pub const LABEL_DIR: &str = "labels";

pub fn scan_name(index: usize) -> String {
    format!("{index:06}")
}

/// Sorted scan stems found under `dir/velodyne`.
pub fn list_scans(dir: &Path) -> Result<Vec<String>> {
    let clouds = dir.join(CLOUD_DIR);
    let mut stems: Vec<String> = fs::read_dir(&clouds)
        .map_err(|e| Error::Contract(format!("cannot read {}: {e}", clouds.display())))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension()? == "bin").then(|| path.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Contract(format!("no scans under {}", clouds.display())));
    }
    Ok(stems)
}

pub fn cloud_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(CLOUD_DIR).join(format!("{stem}.bin"))
}

pub fn label_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(LABEL_DIR).join(format!("{stem}.label"))
}

pub fn score_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.score"))
}

pub fn load_scan(dir: &Path, stem: &str, spec: &ClassSpec) -> Result<(PointCloud, LabelMap)> {
    let cloud = load_point_cloud(cloud_path(dir, stem))?;
    let labels = load_labels(label_path(dir, stem), spec)?;
    labels.check_matches(&cloud)?;
    Ok((cloud, labels))
}

pub fn load_dataset(dir: &Path, spec: &ClassSpec) -> Result<Vec<(String, PointCloud, LabelMap)>> {
    list_scans(dir)?
        .into_iter()
        .map(|stem| {
            let (c, l) = load_scan(dir, &stem, spec)?;
            Ok((stem, c, l))
        })
        .collect()
}

pub fn save_scan(dir: &Path, stem: &str, cloud: &PointCloud, labels: &LabelMap) -> Result<()> {
    fs::create_dir_all(dir.join(CLOUD_DIR))?;
    fs::create_dir_all(dir.join(LABEL_DIR))?;
    save_point_cloud(cloud_path(dir, stem), cloud)?;
    save_labels(label_path(dir, stem), labels)
}

pub fn load_score_file(dir: &Path, stem: &str, expected: usize) -> Result<ScoreField> {
    let scores = load_scores(score_path(dir, stem))?;
    if scores.len() != expected {
        return Err(Error::Contract(format!(
            "{stem}: {} scores for {expected} points",
            scores.len()
        )));
    }
    Ok(scores)
}
