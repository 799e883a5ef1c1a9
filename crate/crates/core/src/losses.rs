//! Training objective: closed-set cross-entropy, a logistic separation term
//! on synthetic anomalies, soft outlier exposure on void points, and their
//! weighted sum with gradients chained through the score and the prior.

use ndarray::Array2;

use crate::error::{contract, Result};
use crate::ndp::{ndp_backward, ndp_weight, NdpGrads, NdpParams};
use crate::scoring::{score_with_grad, sigmoid, softplus, ScoreMethod};
use crate::types::{ClassSpec, LabelMap, LogitField, Role};

/// Which way the logistic separation term pushes scores.
///
/// `Consistent` drives inlier scores down and synthetic-anomaly scores up,
/// agreeing with the threshold rule and the void term. `Swapped` exchanges
/// the two terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StdOrientation {
    Consistent,
    Swapped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Soft target for void points.
    pub beta: f64,
    /// Per-point multiplier for synthetic-anomaly and void terms.
    pub ood_weight: f64,
    pub std_orientation: StdOrientation,
    /// Cross-entropy over the K positive channels only, instead of all 2K.
    pub ce_positive_only: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.9,
            ood_weight: 10_000.0,
            std_orientation: StdOrientation::Consistent,
            ce_positive_only: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(contract("beta must lie in [0, 1]"));
        }
        if !(self.ood_weight > 0.0 && self.ood_weight.is_finite()) {
            return Err(contract("ood weight must be positive"));
        }
        Ok(())
    }
}

/// A two-population score loss: value plus gradients for each population's
/// scores and for the shared bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLoss {
    pub value: f64,
    pub grad_in: Vec<f64>,
    pub grad_out: Vec<f64>,
    pub grad_b: f64,
}

/// Mean over inlier points of `-ln softmax(f)[target]`, with its gradient.
pub fn ce_loss(
    logits: &LogitField,
    labels: &LabelMap,
    spec: &ClassSpec,
    positive_only: bool,
) -> Result<(f64, Array2<f64>)> {
    if labels.len() != logits.len() {
        return Err(contract("label count does not match logit rows"));
    }
    let k = logits.k();
    let width = if positive_only { k } else { logits.channels() };
    let inliers: Vec<usize> = (0..labels.len()).filter(|&i| labels.role()[i] == Role::Inlier).collect();
    let mut grad = Array2::zeros(logits.values().dim());
    if inliers.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / inliers.len() as f64;
    let mut total = 0.0;
    for &i in &inliers {
        let target = spec.inlier_index(labels.semantic()[i]).ok_or_else(|| {
            contract(format!(
                "inlier point {i} has class {} outside the closed set",
                labels.semantic()[i]
            ))
        })?;
        let row = logits.row(i);
        let row = &row.as_slice().expect("contiguous logit rows")[..width];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| (x - m).exp()).sum();
        let log_z = m + sum.ln();
        total += log_z - row[target];
        let mut g = grad.row_mut(i);
        for (j, &x) in row.iter().enumerate() {
            g[j] = ((x - log_z).exp() - f64::from(u8::from(j == target))) * inv;
        }
    }
    Ok((total * inv, grad))
}

/// Logistic separation between inlier and synthetic-anomaly scores.
///
/// Consistent orientation: `mean_in softplus(S+b) + w·mean_aux softplus(-(S+b))`,
/// i.e. `-ln(1-σ)` on inliers and `-ln σ` on anomalies. Empty sets contribute 0.
pub fn std_loss(
    scores_in: &[f64],
    scores_aux: &[f64],
    b: f64,
    orientation: StdOrientation,
    aux_weight: f64,
) -> ScoreLoss {
    // sign = +1 penalizes high scores, -1 penalizes low scores.
    let (sign_in, sign_aux) = match orientation {
        StdOrientation::Consistent => (1.0, -1.0),
        StdOrientation::Swapped => (-1.0, 1.0),
    };
    let mut out = ScoreLoss {
        value: 0.0,
        grad_in: vec![0.0; scores_in.len()],
        grad_out: vec![0.0; scores_aux.len()],
        grad_b: 0.0,
    };
    for (scores, grads, sign, weight) in [
        (scores_in, &mut out.grad_in, sign_in, 1.0),
        (scores_aux, &mut out.grad_out, sign_aux, aux_weight),
    ] {
        if scores.is_empty() {
            continue;
        }
        let scale = weight / scores.len() as f64;
        let mut sum = 0.0;
        for (g, &s) in grads.iter_mut().zip(scores) {
            let x = sign * (s + b);
            sum += softplus(x);
            *g = scale * sign * sigmoid(x);
            out.grad_b += *g;
        }
        out.value += scale * sum;
    }
    out
}

/// Soft outlier exposure: `mean_in σ(S+b) + w·mean_void max(0, β - σ(S+b))`.
/// The hinge has zero subgradient at its kink.
pub fn soe_loss(scores_in: &[f64], scores_void: &[f64], b: f64, beta: f64, void_weight: f64) -> ScoreLoss {
    let mut out = ScoreLoss {
        value: 0.0,
        grad_in: vec![0.0; scores_in.len()],
        grad_out: vec![0.0; scores_void.len()],
        grad_b: 0.0,
    };
    if !scores_in.is_empty() {
        let scale = 1.0 / scores_in.len() as f64;
        let mut sum = 0.0;
        for (g, &s) in out.grad_in.iter_mut().zip(scores_in) {
            let p = sigmoid(s + b);
            sum += p;
            *g = scale * p * (1.0 - p);
            out.grad_b += *g;
        }
        out.value += scale * sum;
    }
    if !scores_void.is_empty() {
        let scale = void_weight / scores_void.len() as f64;
        let mut sum = 0.0;
        for (g, &s) in out.grad_out.iter_mut().zip(scores_void) {
            let p = sigmoid(s + b);
            if beta - p > 0.0 {
                sum += beta - p;
                *g = -scale * p * (1.0 - p);
                out.grad_b += *g;
            }
        }
        out.value += scale * sum;
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub std: f64,
    pub soe: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.ce, self.std, self.soe, self.total].iter().all(|v| v.is_finite())
    }
}

/// Gradients of the total loss. `ndp.b` carries the bias gradient.
#[derive(Debug, Clone)]
pub struct TotalGrads {
    pub logits: Array2<f64>,
    pub ndp: NdpGrads,
}

/// Total objective `CE + STD + SOE` on one scan.
///
/// Inlier points feed all three terms, synthetic anomalies the separation
/// term and void points the exposure term; real anomalies and ignored points
/// are excluded. Scores are `S_method · w` with `w` from the prior module.
pub fn total_loss(
    logits: &LogitField,
    labels: &LabelMap,
    spec: &ClassSpec,
    method: ScoreMethod,
    params: &NdpParams,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, TotalGrads)> {
    cfg.validate()?;
    let (ce, mut glogits) = ce_loss(logits, labels, spec, cfg.ce_positive_only)?;

    let n = logits.len();
    let k = logits.k();
    let mut base = vec![0.0; n];
    let mut dbase = Array2::zeros(logits.values().dim());
    for (i, b) in base.iter_mut().enumerate() {
        let row = logits.row(i);
        let mut g = dbase.row_mut(i);
        *b = score_with_grad(
            method,
            row.as_slice().expect("contiguous logit rows"),
            k,
            g.as_slice_mut().expect("contiguous gradient rows"),
        )?;
    }
    let (w, tape) = ndp_weight(logits, params)?;
    let scores: Vec<f64> = base.iter().zip(&w).map(|(s, w)| s * w).collect();

    let pick = |role: Role| -> Vec<usize> { (0..n).filter(|&i| labels.role()[i] == role).collect() };
    let (inl, aux, void) = (pick(Role::Inlier), pick(Role::AuxOod), pick(Role::Void));
    let gather = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| scores[i]).collect() };
    let (s_in, s_aux, s_void) = (gather(&inl), gather(&aux), gather(&void));
    let b = params.bias();

    let std = std_loss(&s_in, &s_aux, b, cfg.std_orientation, cfg.ood_weight);
    let soe = soe_loss(&s_in, &s_void, b, cfg.beta, cfg.ood_weight);

    let mut gscore = vec![0.0; n];
    for (j, &i) in inl.iter().enumerate() {
        gscore[i] += std.grad_in[j] + soe.grad_in[j];
    }
    for (j, &i) in aux.iter().enumerate() {
        gscore[i] += std.grad_out[j];
    }
    for (j, &i) in void.iter().enumerate() {
        gscore[i] += soe.grad_out[j];
    }

    // S = base · w
    let gw: Vec<f64> = gscore.iter().zip(&base).map(|(g, s)| g * s).collect();
    for i in 0..n {
        let scale = gscore[i] * w[i];
        if scale != 0.0 {
            let mut row = glogits.row_mut(i);
            row.scaled_add(scale, &dbase.row(i));
        }
    }
    let (mut ndp, gl_ndp) = ndp_backward(tape, params, &gw)?;
    glogits += &gl_ndp;
    ndp.b = std.grad_b + soe.grad_b;

    let breakdown = LossBreakdown {
        ce,
        std: std.value,
        soe: soe.value,
        total: ce + std.value + soe.value,
    };
    Ok((breakdown, TotalGrads { logits: glogits, ndp }))
}
