//! Independent reference implementations used as test oracles. They favor
//! obviousness over speed; gradient checks call only the functions under test.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use ndp_core::losses::{total_loss, LossConfig};
use ndp_core::ndp::{ndp_backward, ndp_weight, NdpParams};
use ndp_core::cluster::{dbscan, largest_cluster};
use ndp_core::scenegen::generate_scene;
use ndp_core::{perlin_raise, ClassSpec, LabelMap, LogitField, RaiseConfig, Role, SceneConfig, ScoreMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// DBSCAN by definition: core points, their connected components, clusters
/// numbered by lowest core index, border points to the earliest cluster
/// among their core neighbors.
pub fn dbscan_oracle(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let eps2 = eps * eps;
    let near = |i: usize, j: usize| dist2(&points[i], &points[j]) <= eps2;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = x;
        while parent[c] != r {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut ids = vec![-1i32; n];
    let mut label_of_root = std::collections::HashMap::new();
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let next = label_of_root.len() as i32;
            ids[i] = *label_of_root.entry(r).or_insert(next);
        }
    }
    for i in 0..n {
        if !core[i] {
            ids[i] = (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| ids[j])
                .min()
                .unwrap_or(-1);
        }
    }
    ids
}

/// Fraction of (OOD, ID) pairs ordered correctly, ties counting one half.
pub fn auroc_pairs(scores: &[f64], ood: &[bool], ignore: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if ignore[i] || ignore[j] || !ood[i] || ood[j] {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

fn kept(scores: &[f64], ood: &[bool], ignore: &[bool]) -> Vec<(f64, bool)> {
    (0..scores.len()).filter(|&i| !ignore[i]).map(|i| (scores[i], ood[i])).collect()
}

fn thresholds_desc(points: &[(f64, bool)]) -> Vec<f64> {
    let mut t: Vec<f64> = points.iter().map(|p| p.0).collect();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// `(tp, fp)` counts of `score >= t` for each distinct threshold, descending.
fn threshold_table(points: &[(f64, bool)]) -> Vec<(f64, usize, usize)> {
    thresholds_desc(points)
        .into_iter()
        .map(|t| {
            let tp = points.iter().filter(|p| p.0 >= t && p.1).count();
            let fp = points.iter().filter(|p| p.0 >= t && !p.1).count();
            (t, tp, fp)
        })
        .collect()
}

pub fn ap_table(scores: &[f64], ood: &[bool], ignore: &[bool]) -> f64 {
    let pts = kept(scores, ood, ignore);
    let pos = pts.iter().filter(|p| p.1).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (_, tp, fp) in threshold_table(&pts) {
        let recall = tp as f64 / pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// FPR at the largest threshold whose TPR reaches 0.95.
pub fn fpr95_sweep(scores: &[f64], ood: &[bool], ignore: &[bool]) -> f64 {
    let pts = kept(scores, ood, ignore);
    let pos = pts.iter().filter(|p| p.1).count();
    let neg = pts.len() - pos;
    let qualifying = threshold_table(&pts)
        .into_iter()
        .filter(|&(_, tp, _)| tp as f64 / pos as f64 >= 0.95 - 1e-12)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("lowest threshold has full recall");
    qualifying.2 as f64 / neg as f64
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid(curve: &[(f64, f64)]) -> f64 {
    curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Scores drawn from a few coarse levels so ties are common.
pub fn tied_scores(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| (r.random_range(0..12) as f64) * 0.25).collect()
}

pub fn random_points(r: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                r.random_range(0.0..extent),
                r.random_range(0.0..extent),
                r.random_range(0.0..extent * 0.2),
            ]
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-scale..scale))
}

/// Random prior module with a non-zero weight head.
pub fn random_ndp(r: &mut ChaCha8Rng, c: usize, d: usize) -> NdpParams {
    let mut p = NdpParams::init(c, d, r.random()).unwrap();
    p.set_ws(Array1::from_shape_simple_fn(2 * d, || r.random_range(-1.0..1.0))).unwrap();
    p.set_bias(r.random_range(-0.5..0.5));
    p
}

fn perturbed(params: &NdpParams, tensor: usize, index: usize, delta: f64) -> NdpParams {
    let mut p = params.clone();
    p.tensors_mut()[tensor][index] += delta;
    p
}

/// Largest relative error between the analytic prior gradients and central
/// differences with step `h`, on one random instance with `n` points.
/// Instances with a weight-head pre-activation near the ReLU kink are redrawn.
pub fn ndp_fd_max_error(seed: u64, c: usize, d: usize, n: usize, h: f64) -> f64 {
    let mut r = rng(seed);
    let (params, logits) = loop {
        let params = random_ndp(&mut r, c, d);
        let logits = LogitField::new(random_matrix(&mut r, n, c, 3.0), c, false).unwrap();
        let (_, tape) = ndp_weight(&logits, &params).unwrap();
        if tape.pre_activation().iter().all(|p| p.abs() > 1e-2) {
            break (params, logits);
        }
    };
    let upstream: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let objective = |p: &NdpParams, l: &LogitField| -> f64 {
        let (w, _) = ndp_weight(l, p).unwrap();
        w.iter().zip(&upstream).map(|(w, g)| w * g).sum()
    };
    let (_, tape) = ndp_weight(&logits, &params).unwrap();
    let (grads, glogits) = ndp_backward(tape, &params, &upstream).unwrap();

    let mut worst: f64 = 0.0;
    for (t, g) in grads.tensors().iter().enumerate() {
        for j in 0..g.len() {
            let fd = (objective(&perturbed(&params, t, j, h), &logits)
                - objective(&perturbed(&params, t, j, -h), &logits))
                / (2.0 * h);
            worst = worst.max(rel_err(fd, g[j], 1e-6));
        }
    }
    for i in 0..n {
        for j in 0..c {
            let shift = |delta: f64| {
                let mut v = logits.values().clone();
                v[[i, j]] += delta;
                LogitField::new(v, c, false).unwrap()
            };
            let fd = (objective(&params, &shift(h)) - objective(&params, &shift(-h))) / (2.0 * h);
            worst = worst.max(rel_err(fd, glogits[[i, j]], 1e-6));
        }
    }
    worst
}

/// Five-point scan with two inliers, two synthetic anomalies and one void
/// point, scored by prior-reweighted extended energy. Returns the largest
/// relative error of the total-loss gradient against central differences.
/// The anomaly weight inflates the loss, so steps below 1e-5 lose precision.
pub fn total_loss_fd_max_error(seed: u64, h: f64) -> f64 {
    let spec = ClassSpec::synthetic(true);
    let c = spec.channels();
    let cfg = LossConfig::default();
    let ids = vec![spec.inlier_classes[0], spec.inlier_classes[3], spec.aux_ood_id, spec.aux_ood_id, spec.void_id];
    let labels = LabelMap::from_ids(ids, vec![0; 5], &spec).unwrap();
    let mut r = rng(seed);
    let method = ScoreMethod::ExtendedEnergy;
    let loss = |l: &LogitField, p: &NdpParams| total_loss(l, &labels, &spec, method, p, &cfg).unwrap().0.total;
    let (params, logits) = loop {
        let params = random_ndp(&mut r, c, 5);
        let logits = LogitField::new(random_matrix(&mut r, 5, c, 2.0), spec.k(), true).unwrap();
        let (_, tape) = ndp_weight(&logits, &params).unwrap();
        let scores = ndp_core::scoring::ndp_score(&logits, method, &params).unwrap();
        let void_sigma = 1.0 / (1.0 + (-(scores.as_slice()[4] + params.bias())).exp());
        if tape.pre_activation().iter().all(|p| p.abs() > 1e-2) && (void_sigma - cfg.beta).abs() > 1e-2 {
            break (params, logits);
        }
    };
    let (_, grads) = total_loss(&logits, &labels, &spec, method, &params, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for (t, g) in grads.ndp.tensors().iter().enumerate() {
        for j in 0..g.len() {
            let fd = (loss(&logits, &perturbed(&params, t, j, h)) - loss(&logits, &perturbed(&params, t, j, -h))) / (2.0 * h);
            worst = worst.max(rel_err(fd, g[j], 1e-4));
        }
    }
    for i in 0..5 {
        for j in 0..c {
            let shift = |delta: f64| {
                let mut v = logits.values().clone();
                v[[i, j]] += delta;
                LogitField::new(v, spec.k(), true).unwrap()
            };
            let fd = (loss(&shift(h), &params) - loss(&shift(-h), &params)) / (2.0 * h);
            worst = worst.max(rel_err(fd, grads.logits[[i, j]], 1e-4));
        }
    }
    worst
}

/// One raise on a 4000-point scene with a unit radius, checked point by
/// point. Returns the selected fraction of the neighborhood.
pub fn check_unit_raise(seed: u64) -> Result<f64, String> {
    let spec = ClassSpec::synthetic(true);
    let (cloud, labels) = generate_scene(&SceneConfig { seed, ..SceneConfig::with_total(4000) }, &spec).unwrap();
    let cfg = RaiseConfig { r_min: 1.0, r_max: 1.0, alpha: 0.4, rho: 0.3, seed, ..RaiseConfig::default() };
    let (out, out_labels, rep) = perlin_raise(&cloud, &labels, &spec, &cfg).map_err(|e| e.to_string())?;
    let fail = |msg: String| Err(format!("seed {seed}: {msg}"));
    if out.len() != cloud.len() || rep.raised.is_empty() {
        return fail("nothing raised or point count changed".into());
    }
    let raised: std::collections::BTreeSet<usize> = rep.raised.iter().copied().collect();
    let (before, after) = (cloud.positions(), out.positions());
    for i in 0..cloud.len() {
        let changed = cloud.points()[i] != out.points()[i] || labels.semantic()[i] != out_labels.semantic()[i];
        if changed && !raised.contains(&i) {
            return fail(format!("point {i} changed outside the raised set"));
        }
    }
    for (&i, &dz) in rep.raised.iter().zip(&rep.delta_z) {
        if !(0.0..=cfg.alpha).contains(&dz) {
            return fail(format!("delta z {dz} outside [0, alpha]"));
        }
        if labels.semantic()[i] != spec.road_id || labels.role()[i] != Role::Inlier {
            return fail(format!("raised point {i} was not road"));
        }
        if out_labels.semantic()[i] != spec.aux_ood_id || out_labels.role()[i] != Role::AuxOod {
            return fail(format!("raised point {i} not relabeled"));
        }
        if dist2(&before[i], &rep.center).sqrt() > cfg.r_max + 1e-9 {
            return fail(format!("raised point {i} outside the radius"));
        }
        if (after[i][2] - before[i][2] - dz).abs() > 1e-5 {
            return fail(format!("point {i} moved by a different offset than reported"));
        }
    }
    // The raised set is exactly the largest cluster of the selected points.
    let sel: Vec<[f64; 3]> = rep.selected.iter().map(|&i| before[i]).collect();
    let ids = dbscan(&sel, cfg.dbscan_eps, cfg.dbscan_min_pts).map_err(|e| e.to_string())?;
    let k = largest_cluster(&ids).map_err(|e| e.to_string())? as i32;
    let expected: std::collections::BTreeSet<usize> =
        (0..sel.len()).filter(|&j| ids.ids()[j] == k).map(|j| rep.selected[j]).collect();
    if raised != expected {
        return fail("raised set is not one DBSCAN cluster of the selection".into());
    }
    Ok(rep.selected.len() as f64 / rep.neighborhood as f64)
}
