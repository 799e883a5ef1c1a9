//! Threshold-free point-level metrics.
//!
//! All functions take parallel slices of scores, OOD flags and an ignore mask.
//! Ignored points are dropped before anything else; ties in score are always
//! handled as one block.

use crate::error::{contract, Error, Result};

/// A run of equal scores, counted by class.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    score: f64,
    pos: usize,
    neg: usize,
}

/// Groups kept points into tie blocks sorted by descending score.
fn blocks(scores: &[f64], is_ood: &[bool], ignore: &[bool]) -> Result<(Vec<Block>, usize, usize)> {
    if scores.len() != is_ood.len() || scores.len() != ignore.len() {
        return Err(contract("scores, labels and ignore mask differ in length"));
    }
    let mut kept: Vec<(f64, bool)> = scores
        .iter()
        .zip(is_ood)
        .zip(ignore)
        .filter(|(_, &ign)| !ign)
        .map(|((&s, &o), _)| (s, o))
        .collect();
    if kept.iter().any(|(s, _)| s.is_nan()) {
        return Err(contract("scores contain NaN"));
    }
    kept.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<Block> = Vec::new();
    for (s, o) in kept {
        match out.last_mut() {
            Some(b) if b.score == s => {
                if o {
                    b.pos += 1
                } else {
                    b.neg += 1
                }
            }
            _ => out.push(Block {
                score: s,
                pos: usize::from(o),
                neg: usize::from(!o),
            }),
        }
    }
    let p = out.iter().map(|b| b.pos).sum();
    let n = out.iter().map(|b| b.neg).sum();
    Ok((out, p, n))
}

fn require_both(p: usize, n: usize, what: &str) -> Result<()> {
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!("undefined {what}: need OOD and ID points")));
    }
    Ok(())
}

/// Mann-Whitney estimate of P(score_ood > score_id), ties counting one half.
pub fn auroc(scores: &[f64], is_ood: &[bool], ignore: &[bool]) -> Result<f64> {
    let (blocks, p, n) = blocks(scores, is_ood, ignore)?;
    require_both(p, n, "AUROC")?;
    // Walk from the bottom so `below` counts negatives strictly lower.
    let mut below = 0usize;
    let mut wins = 0.0f64;
    for b in blocks.iter().rev() {
        wins += b.pos as f64 * (below as f64 + 0.5 * b.neg as f64);
        below += b.neg;
    }
    Ok(wins / (p as f64 * n as f64))
}

/// ROC polyline `(fpr, tpr)` from (0, 0) to (1, 1), one vertex per distinct score.
pub fn roc_curve(scores: &[f64], is_ood: &[bool], ignore: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (blocks, p, n) = blocks(scores, is_ood, ignore)?;
    require_both(p, n, "ROC")?;
    let (mut tp, mut fp) = (0, 0);
    let mut curve = vec![(0.0, 0.0)];
    for b in &blocks {
        tp += b.pos;
        fp += b.neg;
        curve.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(curve)
}

/// False-positive rate at the highest threshold whose true-positive rate
/// reaches 95 %. A point counts as detected when its score is at least the
/// threshold.
pub fn fpr_at_95_tpr(scores: &[f64], is_ood: &[bool], ignore: &[bool]) -> Result<f64> {
    let (blocks, p, n) = blocks(scores, is_ood, ignore)?;
    require_both(p, n, "FPR@95")?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for b in &blocks {
        tp += b.pos;
        fp += b.neg;
        // tp / p >= 0.95 in exact integer arithmetic.
        if 20 * tp >= 19 * p {
            return Ok(fp as f64 / n as f64);
        }
    }
    unreachable!("the last block always reaches full recall")
}

/// Step-interpolated area under the precision-recall curve.
pub fn average_precision(scores: &[f64], is_ood: &[bool], ignore: &[bool]) -> Result<f64> {
    let (blocks, p, _) = blocks(scores, is_ood, ignore)?;
    if p == 0 {
        return Err(Error::UndefinedMetric("undefined AP: no OOD points".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for b in &blocks {
        tp += b.pos;
        fp += b.neg;
        if b.pos > 0 {
            ap += (b.pos as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Largest decision threshold `γ` such that `score > γ` still flags at least
/// `target` of the OOD points.
///
/// The threshold is placed halfway between the qualifying score and the next
/// lower distinct score, so it survives storing scores at reduced precision.
pub fn gamma_at_tpr(scores: &[f64], is_ood: &[bool], ignore: &[bool], target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(contract("target TPR must be in (0, 1]"));
    }
    let (blocks, p, _) = blocks(scores, is_ood, ignore)?;
    if p == 0 {
        return Err(Error::UndefinedMetric("undefined threshold: no OOD points".into()));
    }
    let mut tp = 0usize;
    for (i, b) in blocks.iter().enumerate() {
        tp += b.pos;
        if tp as f64 >= target * p as f64 - 1e-9 {
            return Ok(match blocks.get(i + 1) {
                Some(next) => b.score + 0.5 * (next.score - b.score),
                None => b.score - 1e-6 * b.score.abs().max(1.0),
            });
        }
    }
    unreachable!("the last block always reaches full recall")
}
