//! Two-layer perceptron mapping point features to logits.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::features::NUM_FEATURES;
use crate::error::{contract, Result};

/// `logits = W₂ᵀ ReLU(W₁ᵀ x̂ + b₁) + b₂` with `x̂` the standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackbone {
    mean: [f64; NUM_FEATURES],
    inv_std: [f64; NUM_FEATURES],
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    x: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl BackboneGrads {
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }
}

impl ToyBackbone {
    /// Glorot-uniform weights, zero biases, identity standardization.
    pub fn init(hidden: usize, outputs: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || outputs < 2 {
            return Err(contract("backbone needs a hidden layer and at least two outputs"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |r: usize, c: usize| {
            let a = (6.0 / (r + c) as f64).sqrt();
            Array2::from_shape_simple_fn((r, c), || rng.random_range(-a..=a))
        };
        Ok(Self {
            mean: [0.0; NUM_FEATURES],
            inv_std: [1.0; NUM_FEATURES],
            w1: glorot(NUM_FEATURES, hidden),
            b1: Array1::zeros(hidden),
            w2: glorot(hidden, outputs),
            b2: Array1::zeros(outputs),
        })
    }

    pub fn from_parts(
        mean: [f64; NUM_FEATURES],
        inv_std: [f64; NUM_FEATURES],
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self> {
        let h = w1.ncols();
        if w1.nrows() != NUM_FEATURES || b1.len() != h || w2.nrows() != h || b2.len() != w2.ncols() {
            return Err(contract("backbone parameter shapes are inconsistent"));
        }
        Ok(Self {
            mean,
            inv_std,
            w1: w1.as_standard_layout().into_owned(),
            b1,
            w2: w2.as_standard_layout().into_owned(),
            b2,
        })
    }

    /// Sets the input standardization from feature statistics.
    pub fn fit_standardization(&mut self, features: &[[f64; NUM_FEATURES]]) {
        if features.is_empty() {
            return;
        }
        let n = features.len() as f64;
        for d in 0..NUM_FEATURES {
            let mean = features.iter().map(|f| f[d]).sum::<f64>() / n;
            let var = features.iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n;
            self.mean[d] = mean;
            self.inv_std[d] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
    }

    pub fn standardization(&self) -> ([f64; NUM_FEATURES], [f64; NUM_FEATURES]) {
        (self.mean, self.inv_std)
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w2.ncols()
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }
    pub fn b1(&self) -> &Array1<f64> {
        &self.b1
    }
    pub fn w2(&self) -> &Array2<f64> {
        &self.w2
    }
    pub fn b2(&self) -> &Array1<f64> {
        &self.b2
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, features: &[[f64; NUM_FEATURES]]) -> (Array2<f64>, BackboneCache) {
        let x = Array2::from_shape_fn((features.len(), NUM_FEATURES), |(i, d)| {
            (features[i][d] - self.mean[d]) * self.inv_std[d]
        });
        let hidden_pre = x.dot(&self.w1) + &self.b1;
        let hidden = hidden_pre.mapv(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2) + &self.b2;
        (
            logits,
            BackboneCache {
                x,
                hidden_pre,
                hidden,
            },
        )
    }

    pub fn backward(&self, cache: &BackboneCache, glogits: &Array2<f64>) -> BackboneGrads {
        let gw2 = cache.hidden.t().dot(glogits);
        let gb2 = glogits.sum_axis(Axis(0));
        let mut ghidden = glogits.dot(&self.w2.t());
        ghidden.zip_mut_with(&cache.hidden_pre, |g, &pre| {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });
        let gw1 = cache.x.t().dot(&ghidden);
        let gb1 = ghidden.sum_axis(Axis(0));
        BackboneGrads {
            w1: gw1.as_standard_layout().into_owned(),
            b1: gb1,
            w2: gw2.as_standard_layout().into_owned(),
            b2: gb2,
        }
    }
}
