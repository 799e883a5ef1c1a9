//! Learned distribution prior: a per-point multiplicative weight `w >= 1`
//! computed by cross-attention between the projected logits and a learnable
//! prior table.
//!
//! For one point with logits `f` (width C):
//!
//! ```text
//! e   = W_pᵀ f                        (d)
//! q   = W_qᵀ e,   K = ψ W_k,  V = ψ W_v
//! a   = softmax(K q / √d)             (C prior rows)
//! z   = Vᵀ a                          (d)
//! w   = ReLU(W_s · [e; z]) + 1
//! ```
//!
//! The backward pass is derived by hand; see the finite-difference checks in
//! the tests. The ReLU derivative at exactly zero is taken as 1 (the right
//! derivative), which lets a zero-initialized head receive gradient.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::types::LogitField;

pub const DEFAULT_LATENT_DIM: usize = 16;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Trainable state of the prior module, including the loss bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NdpParams {
    wp: Array2<f64>,
    psi: Array2<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    ws: Array1<f64>,
    b: f64,
    generation: u64,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..=a))
}

impl NdpParams {
    /// Glorot-uniform projections and prior table, zero head and bias, so a
    /// fresh module has `w ≡ 1`.
    pub fn init(channels: usize, d: usize, seed: u64) -> Result<Self> {
        if channels < 2 || d < 1 {
            return Err(contract(format!("invalid NDP shape C = {channels}, d = {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wp = glorot(&mut rng, channels, d);
        let psi = glorot(&mut rng, channels, d);
        let wq = glorot(&mut rng, d, d);
        let wk = glorot(&mut rng, d, d);
        let wv = glorot(&mut rng, d, d);
        Ok(Self {
            wp,
            psi,
            wq,
            wk,
            wv,
            ws: Array1::zeros(2 * d),
            b: 0.0,
            generation: next_generation(),
        })
    }

    pub fn from_parts(
        wp: Array2<f64>,
        psi: Array2<f64>,
        wq: Array2<f64>,
        wk: Array2<f64>,
        wv: Array2<f64>,
        ws: Array1<f64>,
        b: f64,
    ) -> Result<Self> {
        let (c, d) = wp.dim();
        if c < 2 || d < 1 {
            return Err(contract(format!("invalid NDP shape C = {c}, d = {d}")));
        }
        if psi.dim() != (c, d) || wq.dim() != (d, d) || wk.dim() != (d, d) || wv.dim() != (d, d) || ws.len() != 2 * d {
            return Err(contract("NDP parameter shapes are inconsistent"));
        }
        let finite = [&wp, &psi, &wq, &wk, &wv]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && ws.iter().all(|v| v.is_finite())
            && b.is_finite();
        if !finite {
            return Err(contract("NDP parameters contain non-finite values"));
        }
        // Owned standard-layout copies keep the flat slice views valid.
        Ok(Self {
            wp: wp.as_standard_layout().into_owned(),
            psi: psi.as_standard_layout().into_owned(),
            wq: wq.as_standard_layout().into_owned(),
            wk: wk.as_standard_layout().into_owned(),
            wv: wv.as_standard_layout().into_owned(),
            ws,
            b,
            generation: next_generation(),
        })
    }

    pub fn channels(&self) -> usize {
        self.wp.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.wp.ncols()
    }

    pub fn wp(&self) -> &Array2<f64> {
        &self.wp
    }
    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }
    pub fn wq(&self) -> &Array2<f64> {
        &self.wq
    }
    pub fn wk(&self) -> &Array2<f64> {
        &self.wk
    }
    pub fn wv(&self) -> &Array2<f64> {
        &self.wv
    }
    pub fn ws(&self) -> &Array1<f64> {
        &self.ws
    }
    pub fn bias(&self) -> f64 {
        self.b
    }

    /// Identifies the parameter values a tape was recorded against.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn set_ws(&mut self, ws: Array1<f64>) -> Result<()> {
        if ws.len() != 2 * self.latent_dim() {
            return Err(contract("weight head length must be 2d"));
        }
        self.ws = ws;
        self.generation = next_generation();
        Ok(())
    }

    pub fn set_bias(&mut self, b: f64) {
        self.b = b;
        self.generation = next_generation();
    }

    /// Flat mutable views in checkpoint order (W_p, ψ, W_q, W_k, W_v, W_s, b).
    /// Any tape recorded before this call becomes stale.
    pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        self.generation = next_generation();
        [
            self.wp.as_slice_mut().unwrap(),
            self.psi.as_slice_mut().unwrap(),
            self.wq.as_slice_mut().unwrap(),
            self.wk.as_slice_mut().unwrap(),
            self.wv.as_slice_mut().unwrap(),
            self.ws.as_slice_mut().unwrap(),
            std::slice::from_mut(&mut self.b),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            self.wp.as_slice().unwrap(),
            self.psi.as_slice().unwrap(),
            self.wq.as_slice().unwrap(),
            self.wk.as_slice().unwrap(),
            self.wv.as_slice().unwrap(),
            self.ws.as_slice().unwrap(),
            std::slice::from_ref(&self.b),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Appends the versioned little-endian container: magic `NDPW`, version,
    /// C, d (all `u32`), then `f32` row-major W_p, ψ, W_q, W_k, W_v, W_s, b.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, self.channels() as u32, self.latent_dim() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for t in self.tensors() {
            for &v in t {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }

    /// Decodes a container produced by [`NdpParams::encode_into`], returning
    /// the parameters and the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let header = 16;
        if bytes.len() < header || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an NDP parameter container".into()));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if word(4) != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported NDP container version {}", word(4))));
        }
        let (c, d) = (word(8) as usize, word(12) as usize);
        let total = 2 * c * d + 3 * d * d + 2 * d + 1;
        let end = header + 4 * total;
        if c < 2 || d < 1 || bytes.len() < end {
            return Err(Error::Format("truncated NDP parameter container".into()));
        }
        let mut vals = bytes[header..end]
            .chunks_exact(4)
            .map(|w| f32::from_le_bytes(w.try_into().unwrap()) as f64);
        let mut take = |rows: usize, cols: usize| {
            Array2::from_shape_vec((rows, cols), vals.by_ref().take(rows * cols).collect()).unwrap()
        };
        let wp = take(c, d);
        let psi = take(c, d);
        let wq = take(d, d);
        let wk = take(d, d);
        let wv = take(d, d);
        let ws = take(1, 2 * d).into_shape_with_order(2 * d).unwrap();
        let b = take(1, 1)[[0, 0]];
        let params = Self::from_parts(wp, psi, wq, wk, wv, ws, b).map_err(|e| Error::Format(e.to_string()))?;
        Ok((params, end))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NDPW";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Gradients with the same layout as [`NdpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct NdpGrads {
    pub wp: Array2<f64>,
    pub psi: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub ws: Array1<f64>,
    pub b: f64,
}

impl NdpGrads {
    pub fn zeros_like(params: &NdpParams) -> Self {
        let (c, d) = (params.channels(), params.latent_dim());
        Self {
            wp: Array2::zeros((c, d)),
            psi: Array2::zeros((c, d)),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            ws: Array1::zeros(2 * d),
            b: 0.0,
        }
    }

    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            self.wp.as_slice().unwrap(),
            self.psi.as_slice().unwrap(),
            self.wq.as_slice().unwrap(),
            self.wk.as_slice().unwrap(),
            self.wv.as_slice().unwrap(),
            self.ws.as_slice().unwrap(),
            std::slice::from_ref(&self.b),
        ]
    }
}

/// Forward intermediates for one [`ndp_weight`] call.
#[derive(Debug, Clone)]
pub struct NdpTape {
    logits: Array2<f64>,
    e: Array2<f64>,
    q: Array2<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    attn: Array2<f64>,
    z: Array2<f64>,
    pre: Array1<f64>,
    generation: u64,
}

impl NdpTape {
    /// Attention distribution of each point over the prior rows.
    pub fn attention(&self) -> &Array2<f64> {
        &self.attn
    }

    pub fn embedding(&self) -> &Array2<f64> {
        &self.e
    }

    pub fn context(&self) -> &Array2<f64> {
        &self.z
    }

    /// Weight-head pre-activations `W_s · [e; z]`.
    pub fn pre_activation(&self) -> &Array1<f64> {
        &self.pre
    }
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Per-point weights `w >= 1` and the tape needed for [`ndp_backward`].
pub fn ndp_weight(logits: &LogitField, params: &NdpParams) -> Result<(Vec<f64>, NdpTape)> {
    if logits.channels() != params.channels() {
        return Err(contract(format!(
            "logit width {} does not match NDP width {}",
            logits.channels(),
            params.channels()
        )));
    }
    let d = params.latent_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let f = logits.values();
    let e = f.dot(&params.wp);
    let q = e.dot(&params.wq);
    let keys = params.psi.dot(&params.wk);
    let values = params.psi.dot(&params.wv);
    let mut attn = q.dot(&keys.t()) * scale;
    softmax_rows(&mut attn);
    let z = attn.dot(&values);
    let pre = e.dot(&params.ws.slice(s![..d])) + z.dot(&params.ws.slice(s![d..]));
    let w = pre.iter().map(|&p| p.max(0.0) + 1.0).collect();
    let tape = NdpTape {
        logits: f.clone(),
        e,
        q,
        keys,
        values,
        attn,
        z,
        pre,
        generation: params.generation,
    };
    Ok((w, tape))
}

/// Exact gradients of `Σ_i grad_w[i] · w_i` with respect to every parameter
/// (the bias gradient is left at zero) and to the input logits.
pub fn ndp_backward(tape: NdpTape, params: &NdpParams, grad_w: &[f64]) -> Result<(NdpGrads, Array2<f64>)> {
    if tape.generation != params.generation {
        return Err(contract("NDP tape is stale: parameters changed since the forward pass"));
    }
    if grad_w.len() != tape.pre.len() {
        return Err(contract("weight gradient length does not match the tape"));
    }
    let d = params.latent_dim();
    let scale = 1.0 / (d as f64).sqrt();

    let gpre: Array1<f64> = tape
        .pre
        .iter()
        .zip(grad_w)
        .map(|(&p, &g)| if p >= 0.0 { g } else { 0.0 })
        .collect();
    let gcol = gpre.view().insert_axis(Axis(1));

    let mut gws = Array1::zeros(2 * d);
    gws.slice_mut(s![..d]).assign(&tape.e.t().dot(&gpre));
    gws.slice_mut(s![d..]).assign(&tape.z.t().dot(&gpre));

    let ws_e = params.ws.slice(s![..d]).insert_axis(Axis(0));
    let ws_z = params.ws.slice(s![d..]).insert_axis(Axis(0));
    let mut ge = gcol.dot(&ws_e);
    let gz = gcol.dot(&ws_z);

    // z = A V
    let gattn = gz.dot(&tape.values.t());
    let gvalues = tape.attn.t().dot(&gz);
    // Row-wise softmax Jacobian, then the 1/√d scale.
    let mut gscores = &tape.attn * &gattn;
    let dots = gscores.sum_axis(Axis(1));
    gscores -= &(&tape.attn * &dots.insert_axis(Axis(1)));
    gscores *= scale;
    // scores = Q Kᵀ
    let gq = gscores.dot(&tape.keys);
    let gkeys = gscores.t().dot(&tape.q);

    let gwq = tape.e.t().dot(&gq);
    ge += &gq.dot(&params.wq.t());
    let gwk = params.psi.t().dot(&gkeys);
    let gwv = params.psi.t().dot(&gvalues);
    let gpsi = gkeys.dot(&params.wk.t()) + gvalues.dot(&params.wv.t());
    let gwp = tape.logits.t().dot(&ge);
    let glogits = ge.dot(&params.wp.t());

    let standard = |a: Array2<f64>| a.as_standard_layout().into_owned();
    Ok((
        NdpGrads {
            wp: standard(gwp),
            psi: standard(gpsi),
            wq: standard(gwq),
            wk: standard(gwk),
            wv: standard(gwv),
            ws: gws,
            b: 0.0,
        },
        standard(glogits),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(c: usize, d: usize, seed: u64) -> NdpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r: usize, k: usize| Array2::from_shape_simple_fn((r, k), || rng.random_range(-1.0..1.0));
        let (wp, psi, wq, wk, wv) = (m(c, d), m(c, d), m(d, d), m(d, d), m(d, d));
        let ws = m(1, 2 * d).into_shape_with_order(2 * d).unwrap();
        NdpParams::from_parts(wp, psi, wq, wk, wv, ws, 0.3).unwrap()
    }

    fn random_logits(n: usize, k: usize, seed: u64) -> LogitField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Array2::from_shape_simple_fn((n, 2 * k), || rng.random_range(-3.0..3.0));
        LogitField::new(v, k, true).unwrap()
    }

    #[test]
    fn fresh_params_give_unit_weight() {
        let params = NdpParams::init(8, DEFAULT_LATENT_DIM, 1).unwrap();
        assert_eq!(params.latent_dim(), 16);
        assert!(params.ws().iter().all(|&v| v == 0.0));
        assert_eq!(params.bias(), 0.0);
        let (w, _) = ndp_weight(&random_logits(20, 4, 2), &params).unwrap();
        assert!(w.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = NdpParams::init(6, 5, 42).unwrap();
        let b = NdpParams::init(6, 5, 42).unwrap();
        assert_eq!(a.tensors(), b.tensors());
        let bound = (6.0f64 / 11.0).sqrt();
        assert!(a.wp().iter().all(|v| v.abs() <= bound));
        assert!(NdpParams::init(1, 5, 0).is_err());
        assert!(NdpParams::init(4, 0, 0).is_err());
    }

    #[test]
    fn weights_at_least_one_and_attention_normalized() {
        for seed in 0..20 {
            let params = random_params(8, 5, seed);
            let (w, tape) = ndp_weight(&random_logits(15, 4, seed + 100), &params).unwrap();
            assert!(w.iter().all(|&w| w >= 1.0));
            for row in tape.attention().rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let params = random_params(6, 4, 0);
        assert!(ndp_weight(&random_logits(3, 4, 0), &params).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let params = random_params(8, 5, 3);
        let (_, tape) = ndp_weight(&random_logits(4, 4, 1), &params).unwrap();
        let (g, gl) = ndp_backward(tape, &params, &[0.0; 4]).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(gl.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_gradient_is_concatenated_embedding() {
        let mut params = random_params(8, 5, 7);
        params.set_ws(Array1::from_elem(10, 0.5)).unwrap();
        let logits = random_logits(1, 4, 9);
        let (_, tape) = ndp_weight(&logits, &params).unwrap();
        assert!(tape.pre_activation()[0] > 0.0);
        let (e, z) = (tape.embedding().row(0).to_owned(), tape.context().row(0).to_owned());
        let (g, _) = ndp_backward(tape, &params, &[1.0]).unwrap();
        for j in 0..5 {
            assert!((g.ws[j] - e[j]).abs() < 1e-15);
            assert!((g.ws[5 + j] - z[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut params = random_params(8, 5, 1);
        let (_, tape) = ndp_weight(&random_logits(2, 4, 1), &params).unwrap();
        params.tensors_mut()[0][0] += 1.0;
        assert!(matches!(ndp_backward(tape, &params, &[1.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn container_round_trip() {
        let params = random_params(8, 5, 11);
        let mut bytes = Vec::new();
        params.encode_into(&mut bytes);
        let (back, used) = NdpParams::decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        for (a, b) in params.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let mut again = Vec::new();
        back.encode_into(&mut again);
        assert_eq!(again, bytes);
        assert!(NdpParams::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(NdpParams::decode(b"XXXX").is_err());
    }
}
