//! Static OOD scores, their prior-reweighted forms and the threshold rule.
//!
//! Every score is oriented so that larger means more anomalous. On extended
//! (2K) logit fields, entropy, energy and max-logit read the first K
//! channels only; extended energy uses all of them.

use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Error, Result};
use crate::ndp::{ndp_weight, NdpParams};
use crate::types::{LogitField, ScoreField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMethod {
    Entropy,
    Energy,
    ExtendedEnergy,
    MaxLogit,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 4] = [
        ScoreMethod::Entropy,
        ScoreMethod::Energy,
        ScoreMethod::ExtendedEnergy,
        ScoreMethod::MaxLogit,
    ];

    pub fn requires_extended(self) -> bool {
        self == ScoreMethod::ExtendedEnergy
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Entropy => "entropy",
            ScoreMethod::Energy => "energy",
            ScoreMethod::ExtendedEnergy => "ee",
            ScoreMethod::MaxLogit => "maxlogit",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(ScoreMethod::Entropy),
            "energy" => Ok(ScoreMethod::Energy),
            "ee" | "extended-energy" => Ok(ScoreMethod::ExtendedEnergy),
            "maxlogit" => Ok(ScoreMethod::MaxLogit),
            other => Err(contract(format!("unknown score method `{other}`"))),
        }
    }
}

/// `ln Σ exp(x)`, stabilized by the maximum.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shannon entropy (natural log) of `softmax(logits)`.
pub fn entropy_score(logits: &[f64]) -> f64 {
    entropy_with_grad(logits, None)
}

fn entropy_with_grad(logits: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
    let log_sum = sum.ln();
    let mut h = 0.0;
    for &x in logits {
        let log_p = (x - m) - log_sum;
        h -= log_p.exp() * log_p;
    }
    if let Some(grad) = grad {
        // dH/df_j = -p_j (ln p_j + H)
        for (g, &x) in grad.iter_mut().zip(logits) {
            let log_p = (x - m) - log_sum;
            *g = -log_p.exp() * (log_p + h);
        }
    }
    h
}

/// Negative log-sum-exp.
pub fn energy_score(logits: &[f64]) -> f64 {
    -logsumexp(logits)
}

/// `ln(Σ_all e^f / Σ_{y⁺} e^f)` on a 2K row, computed as
/// `softplus(lse(y⁻) - lse(y⁺))`.
pub fn extended_energy_score(logits: &[f64]) -> Result<f64> {
    if !logits.len().is_multiple_of(2) || logits.len() < 4 {
        return Err(contract("extended energy needs a 2K-wide logit row"));
    }
    let k = logits.len() / 2;
    Ok(softplus(logsumexp(&logits[k..]) - logsumexp(&logits[..k])))
}

pub fn maxlogit_score(logits: &[f64]) -> f64 {
    -logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Score of one logit row of width `K` or `2K` (`k` = K) together with its
/// gradient with respect to the full row.
pub fn score_with_grad(method: ScoreMethod, row: &[f64], k: usize, grad: &mut [f64]) -> Result<f64> {
    let extended = row.len() == 2 * k;
    if !(row.len() == k || extended) || grad.len() != row.len() {
        return Err(contract("logit row width does not match K"));
    }
    grad.fill(0.0);
    let pos = &row[..k];
    let score = match method {
        ScoreMethod::Entropy => entropy_with_grad(pos, Some(&mut grad[..k])),
        ScoreMethod::Energy => {
            softmax_into(pos, &mut grad[..k]);
            grad[..k].iter_mut().for_each(|g| *g = -*g);
            -logsumexp(pos)
        }
        ScoreMethod::MaxLogit => {
            let (arg, max) = pos
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            grad[arg] = -1.0;
            -max
        }
        ScoreMethod::ExtendedEnergy => {
            if !extended {
                return Err(contract("extended energy requires a 2K-channel logit field"));
            }
            let gap = logsumexp(&row[k..]) - logsumexp(pos);
            let s = sigmoid(gap);
            let (gpos, gneg) = grad.split_at_mut(k);
            softmax_into(pos, gpos);
            softmax_into(&row[k..], gneg);
            gpos.iter_mut().for_each(|g| *g *= -s);
            gneg.iter_mut().for_each(|g| *g *= s);
            softplus(gap)
        }
    };
    Ok(score)
}

/// Score of one row, dispatching on the method.
pub fn method_score(method: ScoreMethod, row: &[f64], k: usize) -> Result<f64> {
    let extended = row.len() == 2 * k;
    if !(row.len() == k || extended) {
        return Err(contract("logit row width does not match K"));
    }
    match method {
        ScoreMethod::Entropy => Ok(entropy_score(&row[..k])),
        ScoreMethod::Energy => Ok(energy_score(&row[..k])),
        ScoreMethod::MaxLogit => Ok(maxlogit_score(&row[..k])),
        ScoreMethod::ExtendedEnergy if extended => extended_energy_score(row),
        ScoreMethod::ExtendedEnergy => Err(contract("extended energy requires a 2K-channel logit field")),
    }
}

fn check_method(logits: &LogitField, method: ScoreMethod) -> Result<()> {
    if method.requires_extended() && !logits.is_extended() {
        return Err(contract("extended energy requires a 2K-channel logit field"));
    }
    Ok(())
}

/// Per-point static score of a whole field.
pub fn static_scores(logits: &LogitField, method: ScoreMethod) -> Result<ScoreField> {
    check_method(logits, method)?;
    let k = logits.k();
    let scores = logits
        .values()
        .rows()
        .into_iter()
        .map(|row| method_score(method, row.as_slice().expect("contiguous logit rows"), k))
        .collect::<Result<Vec<_>>>()?;
    ScoreField::new(scores)
}

/// Static score multiplied by the learned prior weight.
pub fn ndp_score(logits: &LogitField, method: ScoreMethod, params: &NdpParams) -> Result<ScoreField> {
    let base = static_scores(logits, method)?;
    let (w, _) = ndp_weight(logits, params)?;
    ScoreField::new(base.as_slice().iter().zip(&w).map(|(s, w)| s * w).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Id,
    Ood,
}

/// OOD iff score > gamma.
pub fn classify(scores: &ScoreField, gamma: f64) -> Vec<Decision> {
    scores
        .as_slice()
        .iter()
        .map(|&s| if s > gamma { Decision::Ood } else { Decision::Id })
        .collect()
}
