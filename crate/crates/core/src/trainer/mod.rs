//! Training loop: raise augmentation, feature extraction, toy backbone,
//! score with prior weighting, total loss, Adam.

pub mod adam;
pub mod backbone;
pub mod features;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::losses::{total_loss, LossBreakdown, LossConfig};
use crate::ndp::{NdpParams, DEFAULT_LATENT_DIM};
use crate::perlin::{perlin_raise, RaiseConfig};
use crate::scoring::{ndp_score, static_scores, ScoreMethod};
use crate::types::{ClassSpec, LabelMap, LogitField, PointCloud, ScoreField};

pub use adam::Adam;
pub use backbone::{BackboneGrads, ToyBackbone};
pub use features::{extract_features, NUM_FEATURES};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Scans whose gradients are averaged into one optimizer step.
    pub batch_scans: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub raise_per_scan: usize,
    pub raise: RaiseConfig,
    pub loss: LossConfig,
    pub method: ScoreMethod,
    /// Train the prior weight head. When false the head stays at zero and the
    /// objective reduces to the static score.
    pub ndp: bool,
    pub hidden: usize,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            epochs: 10,
            batch_scans: 1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            raise_per_scan: 1,
            raise: RaiseConfig::default(),
            loss: LossConfig::default(),
            method: ScoreMethod::ExtendedEnergy,
            ndp: true,
            hidden: 32,
            latent_dim: DEFAULT_LATENT_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(contract("learning rate must be non-negative"));
        }
        if self.epochs < 1 || self.batch_scans < 1 {
            return Err(contract("epochs and batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(contract("invalid Adam hyperparameters"));
        }
        if self.hidden == 0 || self.latent_dim == 0 {
            return Err(contract("hidden width and latent dimension must be positive"));
        }
        self.raise.validate()?;
        self.loss.validate()
    }
}

/// Everything needed to score a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ClassSpec,
    pub method: ScoreMethod,
    pub ndp_enabled: bool,
    pub backbone: ToyBackbone,
    pub ndp: NdpParams,
}

impl TrainedModel {
    pub fn init(spec: &ClassSpec, cfg: &TrainConfig) -> Result<Self> {
        spec.validate()?;
        if cfg.method.requires_extended() && !spec.extended {
            return Err(contract("extended energy needs an extended (2K) class spec"));
        }
        let channels = spec.channels();
        Ok(Self {
            spec: spec.clone(),
            method: cfg.method,
            ndp_enabled: cfg.ndp,
            backbone: ToyBackbone::init(cfg.hidden, channels, cfg.seed)?,
            ndp: NdpParams::init(channels, cfg.latent_dim, cfg.seed ^ 0x0005_EED0_F9D9)?,
        })
    }

    pub fn logits(&self, cloud: &PointCloud) -> Result<LogitField> {
        let (values, _) = self.backbone.forward(&extract_features(cloud));
        LogitField::for_spec(values, &self.spec)
    }

    /// Scores with the model's own method, reweighted when the prior is enabled.
    pub fn scores(&self, cloud: &PointCloud) -> Result<ScoreField> {
        self.scores_with(cloud, self.method, self.ndp_enabled)
    }

    pub fn scores_with(&self, cloud: &PointCloud, method: ScoreMethod, use_ndp: bool) -> Result<ScoreField> {
        let logits = self.logits(cloud)?;
        if use_ndp {
            ndp_score(&logits, method, &self.ndp)
        } else {
            static_scores(&logits, method)
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        let spec = &self.spec;
        let mut words = vec![
            MODEL_VERSION,
            method_code(self.method),
            u32::from(self.ndp_enabled),
            u32::from(spec.extended),
            spec.road_id as u32,
            spec.void_id as u32,
            spec.ood_id as u32,
            spec.aux_ood_id as u32,
            spec.ignore_id as u32,
            spec.k() as u32,
        ];
        words.extend(spec.inlier_classes.iter().map(|&c| c as u32));
        words.extend([self.backbone.hidden() as u32, self.backbone.outputs() as u32]);
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let (mean, inv_std) = self.backbone.standardization();
        let tensors = self.backbone.tensors();
        let floats = mean.iter().chain(&inv_std).chain(tensors.iter().flat_map(|t| t.iter()));
        for &v in floats {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.ndp.encode_into(&mut out);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let mut reader = Reader { bytes, pos: 4 };
        let version = reader.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let method = method_from_code(reader.u32()?)?;
        let ndp_enabled = reader.u32()? != 0;
        let extended = reader.u32()? != 0;
        let mut id = || -> Result<u16> {
            u16::try_from(reader.u32()?).map_err(|_| Error::Format("class id out of range".into()))
        };
        let (road_id, void_id, ood_id, aux_ood_id, ignore_id) = (id()?, id()?, id()?, id()?, id()?);
        let k = reader.u32()? as usize;
        if k > 1 << 16 {
            return Err(Error::Format("implausible class count".into()));
        }
        let inlier_classes = (0..k)
            .map(|_| u16::try_from(reader.u32()?).map_err(|_| Error::Format("class id out of range".into())))
            .collect::<Result<Vec<_>>>()?;
        let spec = ClassSpec {
            inlier_classes,
            road_id,
            void_id,
            ood_id,
            aux_ood_id,
            ignore_id,
            extended,
        };
        spec.validate().map_err(|e| Error::Format(e.to_string()))?;
        let hidden = reader.u32()? as usize;
        let outputs = reader.u32()? as usize;
        if outputs != spec.channels() || hidden == 0 || hidden > 1 << 16 {
            return Err(Error::Format("backbone shape does not match the class spec".into()));
        }
        let mut mean = [0.0; NUM_FEATURES];
        let mut inv_std = [0.0; NUM_FEATURES];
        for v in mean.iter_mut().chain(inv_std.iter_mut()) {
            *v = reader.f32()?;
        }
        let w1 = Array2::from_shape_vec((NUM_FEATURES, hidden), reader.f32s(NUM_FEATURES * hidden)?).unwrap();
        let b1 = Array1::from(reader.f32s(hidden)?);
        let w2 = Array2::from_shape_vec((hidden, outputs), reader.f32s(hidden * outputs)?).unwrap();
        let b2 = Array1::from(reader.f32s(outputs)?);
        let backbone = ToyBackbone::from_parts(mean, inv_std, w1, b1, w2, b2)?;
        let (ndp, used) = NdpParams::decode(&bytes[reader.pos..])?;
        if reader.pos + used != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        if ndp.channels() != outputs {
            return Err(Error::Format("prior width does not match the backbone".into()));
        }
        Ok(Self {
            spec,
            method,
            ndp_enabled,
            backbone,
            ndp,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"NDPM";
pub const MODEL_VERSION: u32 = 1;

fn method_code(m: ScoreMethod) -> u32 {
    match m {
        ScoreMethod::Entropy => 0,
        ScoreMethod::Energy => 1,
        ScoreMethod::ExtendedEnergy => 2,
        ScoreMethod::MaxLogit => 3,
    }
}

fn method_from_code(code: u32) -> Result<ScoreMethod> {
    ScoreMethod::ALL
        .into_iter()
        .find(|&m| method_code(m) == code)
        .ok_or_else(|| Error::Format(format!("unknown method code {code}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f32()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochLog {
    /// Mean loss components over the scans trained this epoch.
    pub loss: LossBreakdown,
    pub scans: usize,
    pub skipped: usize,
    pub raised_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedScan {
    pub epoch: usize,
    pub scan: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub skipped: Vec<SkippedScan>,
}

struct ScanOutcome {
    loss: LossBreakdown,
    backbone: BackboneGrads,
    ndp: crate::ndp::NdpGrads,
    raised: usize,
}

const RAISE_ATTEMPTS: usize = 4;

/// Applies the configured raises to a copy of the scan. Returns `None` when
/// the scan cannot be augmented (no road).
fn augment(
    cloud: &PointCloud,
    labels: &LabelMap,
    spec: &ClassSpec,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<std::result::Result<(PointCloud, LabelMap, usize), String>> {
    let mut cloud = cloud.clone();
    let mut labels = labels.clone();
    let mut raised = 0;
    for _ in 0..cfg.raise_per_scan {
        for _ in 0..RAISE_ATTEMPTS {
            let raise = RaiseConfig {
                seed: rng.next_u64(),
                ..cfg.raise.clone()
            };
            match perlin_raise(&cloud, &labels, spec, &raise) {
                Ok((c, l, report)) => {
                    if report.raised.is_empty() {
                        continue;
                    }
                    raised += report.raised.len();
                    cloud = c;
                    labels = l;
                    break;
                }
                Err(Error::Precondition(msg)) => return Ok(Err(msg)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Ok((cloud, labels, raised)))
}

fn scan_step(model: &TrainedModel, cloud: &PointCloud, labels: &LabelMap, cfg: &TrainConfig, raised: usize) -> Result<ScanOutcome> {
    let (values, cache) = model.backbone.forward(&extract_features(cloud));
    let logits = LogitField::for_spec(values, &model.spec)?;
    let (loss, grads) = total_loss(&logits, labels, &model.spec, cfg.method, &model.ndp, &cfg.loss)?;
    let backbone = model.backbone.backward(&cache, &grads.logits);
    Ok(ScanOutcome {
        loss,
        backbone,
        ndp: grads.ndp,
        raised,
    })
}

fn accumulate(acc: &mut [Vec<f64>], tensors: &[&[f64]]) {
    for (a, t) in acc.iter_mut().zip(tensors) {
        for (x, y) in a.iter_mut().zip(t.iter()) {
            *x += y;
        }
    }
}

/// Trains a backbone and prior on labeled scans.
///
/// Fully deterministic given `(scenes, spec, cfg)`: scan order, raise seeds
/// and initialization all derive from `cfg.seed`. Scans without road points
/// are skipped and logged.
pub fn train(scenes: &[(PointCloud, LabelMap)], spec: &ClassSpec, cfg: &TrainConfig) -> Result<(TrainedModel, TrainLog)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(contract("training set is empty"));
    }
    for (cloud, labels) in scenes {
        labels.check_matches(cloud)?;
    }
    let mut model = TrainedModel::init(spec, cfg)?;
    let pooled: Vec<[f64; NUM_FEATURES]> = scenes.iter().flat_map(|(c, _)| extract_features(c)).collect();
    model.backbone.fit_standardization(&pooled);

    let mut adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..scenes.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_log = EpochLog::default();
        let mut batch: Vec<ScanOutcome> = Vec::new();
        for (pos, &scan) in order.iter().enumerate() {
            let (cloud, labels) = &scenes[scan];
            match augment(cloud, labels, spec, cfg, &mut rng)? {
                Err(reason) => {
                    epoch_log.skipped += 1;
                    log.skipped.push(SkippedScan { epoch, scan, reason });
                }
                Ok((cloud, labels, raised)) => {
                    batch.push(scan_step(&model, &cloud, &labels, cfg, raised)?);
                }
            }
            if batch.len() == cfg.batch_scans || (pos + 1 == order.len() && !batch.is_empty()) {
                apply_batch(&mut model, &mut adam, &batch, cfg)?;
                for outcome in batch.drain(..) {
                    let l = &mut epoch_log.loss;
                    l.ce += outcome.loss.ce;
                    l.std += outcome.loss.std;
                    l.soe += outcome.loss.soe;
                    l.total += outcome.loss.total;
                    epoch_log.scans += 1;
                    epoch_log.raised_points += outcome.raised;
                }
            }
        }
        if epoch_log.scans > 0 {
            let n = epoch_log.scans as f64;
            let l = &mut epoch_log.loss;
            l.ce /= n;
            l.std /= n;
            l.soe /= n;
            l.total /= n;
        }
        log.epochs.push(epoch_log);
    }
    Ok((model, log))
}

fn apply_batch(model: &mut TrainedModel, adam: &mut Adam, batch: &[ScanOutcome], cfg: &TrainConfig) -> Result<()> {
    let mut gb: Vec<Vec<f64>> = model.backbone.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut gn: Vec<Vec<f64>> = model.ndp.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for outcome in batch {
        if !outcome.loss.is_finite() {
            return Err(contract("loss became non-finite"));
        }
        accumulate(&mut gb, &outcome.backbone.tensors());
        accumulate(&mut gn, &outcome.ndp.tensors());
    }
    let inv = 1.0 / batch.len() as f64;
    for g in gb.iter_mut().chain(gn.iter_mut()) {
        g.iter_mut().for_each(|v| *v *= inv);
    }

    let [w1, b1, w2, b2] = model.backbone.tensors_mut();
    let [wp, psi, wq, wk, wv, ws, b] = model.ndp.tensors_mut();
    let mut params: Vec<&mut [f64]> = vec![w1, b1, w2, b2, wp, psi, wq, wk, wv, ws, b];
    // Without the prior only the bias is trained; the rest of the module has
    // zero gradient through a zero head anyway.
    let grads: Vec<Option<&[f64]>> = gb
        .iter()
        .map(|g| Some(g.as_slice()))
        .chain(gn.iter().enumerate().map(|(t, g)| (cfg.ndp || t == 6).then_some(g.as_slice())))
        .collect();
    adam.step(&mut params, &grads);
    if !model.backbone.is_finite() || !model.ndp.is_finite() {
        return Err(contract("parameters became non-finite"));
    }
    Ok(())
}
