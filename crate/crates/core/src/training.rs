//! Training regimes: attention supervision, crossed channel/semantic
//! optimization, and mask-network training with everything else frozen.
//!
//! Every phase records a loss trace evaluated on the full training set with a
//! fixed noise realization, so traces are comparable across epochs and
//! bitwise reproducible for a given seed.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    normalize_power, normalize_power_backward, transmit_in_place, ChannelCodec, ChannelKind,
    MiEstimator,
};
use crate::codec::{binarize, CodecConfig, SemanticCodec};
use crate::error::{Error, Result};
use crate::image::stack_batch;
use crate::nn::{Adam, Params};

pub const DEFAULT_MU: f64 = 0.05;
pub const DEFAULT_MI_WEIGHT: f64 = 0.01;
pub const DEFAULT_CONVERGENCE_EPS: f64 = 1e-4;
/// Epochs without a lower path difference before mask training stops.
pub const DEFAULT_ASC_PATIENCE: usize = 1;
pub const MAX_CROSSED_ROUNDS: usize = 10;
/// Losses above this multiple of the initial loss abort the phase.
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Salt mixed into the seed of the fixed evaluation noise.
const EVAL_NOISE_SALT: u64 = 0x00e7_a1a0;
const EVAL_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Asi,
    Channel,
    Semantic,
    Crossed,
    Asc,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Asi => "asi",
            Phase::Channel => "channel",
            Phase::Semantic => "semantic",
            Phase::Crossed => "crossed",
            Phase::Asc => "asc",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "asi" => Phase::Asi,
            "channel" => Phase::Channel,
            "semantic" => Phase::Semantic,
            "crossed" => Phase::Crossed,
            "asc" => Phase::Asc,
            other => return Err(Error::Config(format!("unknown phase `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub phase: Phase,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub snr_db_train: f64,
    pub crossed_rounds: usize,
    pub convergence_eps: f64,
    pub seed: u64,
    /// Weight of the mask-ratio penalty in the mask-network loss.
    pub mu: f64,
    /// Weight of the mutual-information bonus in the channel-phase loss.
    pub mi_weight: f64,
    /// Symbol pairs drawn per step for the mutual-information bound.
    pub mi_pairs: usize,
    pub mi_lr: f64,
    /// Mask training stops after this many epochs without a new lowest
    /// path difference and keeps the best epoch's mask network. Zero runs
    /// every epoch.
    pub asc_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase: Phase::Crossed,
            lr: 1e-3,
            epochs: 8,
            batch: 16,
            snr_db_train: 10.0,
            crossed_rounds: 3,
            convergence_eps: DEFAULT_CONVERGENCE_EPS,
            seed: 0,
            mu: DEFAULT_MU,
            mi_weight: DEFAULT_MI_WEIGHT,
            mi_pairs: 512,
            mi_lr: 1e-3,
            asc_patience: DEFAULT_ASC_PATIENCE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted as a "dry run" that must leave parameters intact.
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.crossed_rounds == 0 || self.crossed_rounds > MAX_CROSSED_ROUNDS {
            return Err(Error::Config(format!("crossed_rounds must be in 1..={MAX_CROSSED_ROUNDS}")));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.snr_db_train.is_nan() || !(self.mu >= 0.0) || !(self.convergence_eps >= 0.0) {
            return Err(Error::Config("snr_db_train, mu and convergence_eps must be valid numbers".into()));
        }
        Ok(())
    }
}

/// One trace entry. `step` increases monotonically across a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub phase: String,
    pub loss: f64,
    pub mask_ratio: f64,
    pub snr_db: f64,
    pub seed: u64,
}

pub fn write_loss_csv(path: &std::path::Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: &std::path::Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Snapshot of module digests that must not change during a phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeSet {
    pub frozen_module_names: Vec<String>,
    pub parameter_digests: BTreeMap<String, String>,
}

impl FreezeSet {
    pub fn capture(params: &Params, modules: &[&str]) -> Self {
        let parameter_digests = modules.iter().map(|m| (m.to_string(), module_digest(params, m))).collect();
        Self { frozen_module_names: modules.iter().map(|m| m.to_string()).collect(), parameter_digests }
    }

    pub fn verify(&self, params: &Params, phase: &str) -> Result<()> {
        for (m, d) in &self.parameter_digests {
            if module_digest(params, m) != *d {
                return Err(Error::FreezeViolation { module: m.clone(), phase: phase.into() });
            }
        }
        Ok(())
    }
}

/// Digest of every parameter whose name starts with `module.`.
pub fn module_digest(params: &Params, module: &str) -> String {
    params.subset(&format!("{module}.")).digest()
}

/// Which training source an SC model was fit on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Semantic-aware images produced by the attention networks.
    Lamsc,
    /// Raw images.
    Baseline,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Lamsc => "lamsc",
            Variant::Baseline => "baseline",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lamsc" => Ok(Variant::Lamsc),
            "baseline" => Ok(Variant::Baseline),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Layout of a full SC model; parameters live in one [`Params`] under the
/// prefixes `encoder.`, `decoder.`, `mask.`, `channel.` and `mine.`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScLayout {
    pub codec: CodecConfig,
    pub input_shape: (usize, usize, usize),
    pub channel_hidden: usize,
    pub mine_hidden: usize,
    pub variant: Variant,
}

#[derive(Clone, Debug)]
pub struct ScModel {
    pub layout: ScLayout,
    pub codec: SemanticCodec,
    pub channel: ChannelCodec,
    pub mine: MiEstimator,
}

impl ScModel {
    pub fn new(layout: ScLayout) -> Result<Self> {
        let codec = SemanticCodec::new(layout.codec.clone(), layout.input_shape)?;
        let channel = ChannelCodec::new(codec.feature_shape().2, layout.channel_hidden);
        let mine = MiEstimator { hidden: layout.mine_hidden };
        Ok(Self { layout, codec, channel, mine })
    }

    pub fn init(&self, seed: u64) -> Params {
        let mut p = self.codec.init(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        self.channel.init(&mut p, &mut rng);
        p.extend(&self.mine.init(seed.wrapping_add(2)));
        p
    }

    pub fn check_params(&self, params: &Params) -> Result<()> {
        params.check_layout(&self.init(0))
    }
}

/// Forward state of the channel codec plus the physical channel.
pub struct ChannelPass {
    enc: crate::channel::MlpCache,
    scales: Vec<f64>,
    pub tx: Array2<f64>,
    pub rx: Array2<f64>,
    dec: crate::channel::MlpCache,
    pub zhat: Array4<f64>,
}

/// Encodes `z` row by row, normalizes each row, passes it through the channel
/// and decodes.
pub fn channel_forward(
    model: &ScModel,
    p: &Params,
    z: &Array4<f64>,
    kind: ChannelKind,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ChannelPass> {
    let dims = z.dim();
    let (mut tx, enc) = model.channel.encode_raw(p, z);
    let mut scales = Vec::with_capacity(dims.0);
    let mut rx = Array2::zeros(tx.raw_dim());
    for (mut row, mut out) in tx.axis_iter_mut(Axis(0)).zip(rx.axis_iter_mut(Axis(0))) {
        let slice = row.as_slice_mut().expect("contiguous row");
        // A fully masked vector through a bias-free encoder has no power to
        // normalize; it is sent as silence and passes no gradient.
        let scale = match normalize_power(slice) {
            Ok(s) => s,
            Err(Error::DegenerateSymbols) => 0.0,
            Err(e) => return Err(e),
        };
        scales.push(scale);
        let mut y = slice.to_vec();
        transmit_in_place(&mut y, kind, snr_db, rng)?;
        out.assign(&ndarray::ArrayView1::from(&y));
    }
    let (zhat, dec) = model.channel.decode(p, &rx, dims);
    Ok(ChannelPass { enc, scales, tx, rx, dec, zhat })
}

/// Backward through [`channel_forward`]. The equalized channel has unit
/// Jacobian, so the received-symbol gradient flows straight to the
/// transmitted symbols. `extra_dtx` adds a gradient w.r.t. the transmitted
/// symbols (the mutual-information term).
pub fn channel_backward(
    model: &ScModel,
    p: &Params,
    pass: &ChannelPass,
    dzhat: &Array4<f64>,
    extra_dtx: Option<&Array2<f64>>,
    g: &mut Params,
) -> Array4<f64> {
    let mut dtx = model.channel.decode_backward(p, &pass.dec, dzhat, g);
    if let Some(e) = extra_dtx {
        dtx += e;
    }
    let mut draw = Array2::zeros(dtx.raw_dim());
    for (i, mut out) in draw.axis_iter_mut(Axis(0)).enumerate() {
        let x = pass.tx.row(i);
        let d = dtx.row(i);
        let g = normalize_power_backward(x.as_slice().expect("row"), pass.scales[i], &d.to_vec());
        out.assign(&ndarray::ArrayView1::from(&g));
    }
    model.channel.encode_backward(p, &pass.enc, &draw, dzhat.dim(), g)
}

fn mse(a: &Array4<f64>, b: &Array4<f64>) -> (f64, Array4<f64>) {
    let d = a - b;
    let n = d.len() as f64;
    (d.mapv(|v| v * v).sum() / n, d * (2.0 / n))
}

fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

fn gather(items: &[Array3<f64>], idx: &[usize]) -> Array4<f64> {
    stack_batch(idx.iter().map(|&i| &items[i]))
}

fn update(opt: &mut Adam, p: &mut Params, g: &Params, prefixes: &[&str]) {
    let mut sel = Params::new();
    for (name, a) in g.iter() {
        if prefixes.iter().any(|pre| name.starts_with(pre)) {
            sel.insert(name, a.clone());
        }
    }
    opt.step(p, &sel);
}

fn check_progress(phase: &str, epoch: usize, loss: f64, initial: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { phase: phase.into(), step: epoch });
    }
    if initial > 0.0 && loss > DIVERGENCE_FACTOR * initial {
        return Err(Error::Diverged { phase: phase.into(), epoch, loss, initial });
    }
    Ok(())
}

/// Running step counter and trace shared by the phases of one run.
#[derive(Clone, Debug, Default)]
pub struct TraceLog {
    pub records: Vec<LossRecord>,
}

impl TraceLog {
    fn push(&mut self, phase: &str, loss: f64, mask_ratio: f64, cfg: &TrainConfig) {
        let step = self.records.len();
        self.records.push(LossRecord {
            step,
            phase: phase.into(),
            loss,
            mask_ratio,
            snr_db: cfg.snr_db_train,
            seed: cfg.seed,
        });
    }
}

/// Encoder features for every image, in dataset order.
pub fn compute_features(model: &ScModel, p: &Params, images: &[Array3<f64>]) -> Vec<Array3<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let x = stack_batch(chunk.iter());
        let (z, _) = model.codec.encode_batch(p, &x);
        out.extend(z.axis_iter(Axis(0)).map(|v| v.to_owned()));
    }
    out
}

fn eval_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ EVAL_NOISE_SALT)
}

/// Channel-phase objective on `features` with fixed evaluation noise:
/// feature MSE minus `mi_weight` times the bound on a fixed pair sample.
pub fn channel_objective(
    model: &ScModel,
    p: &Params,
    features: &[Array3<f64>],
    kind: ChannelKind,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut rng = eval_rng(cfg.seed);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for chunk in features.chunks(EVAL_BATCH) {
        let z = stack_batch(chunk.iter());
        let pass = channel_forward(model, p, &z, kind, cfg.snr_db_train, &mut rng)?;
        total += (&pass.zhat - &z).mapv(|v| v * v).sum();
        count += z.len();
        if xs.len() < 4096 {
            let stride = (pass.tx.len() / 1024).max(1);
            xs.extend(pass.tx.iter().step_by(stride).copied());
            ys.extend(pass.rx.iter().step_by(stride).copied());
        }
    }
    let mse = total / count.max(1) as f64;
    if cfg.mi_weight == 0.0 || xs.len() < 2 {
        return Ok(mse);
    }
    let mut perm: Vec<usize> = (0..xs.len()).collect();
    perm.shuffle(&mut rng);
    let bound = model.mine.bound(p, &xs, &ys, &perm);
    Ok(mse - cfg.mi_weight * bound)
}

/// Relative feature reconstruction error ‖ẑ − z‖² / ‖z‖² under the
/// evaluation noise.
pub fn relative_feature_mse(
    model: &ScModel,
    p: &Params,
    features: &[Array3<f64>],
    kind: ChannelKind,
    snr_db: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = eval_rng(seed);
    let (mut num, mut den) = (0.0, 0.0);
    for chunk in features.chunks(EVAL_BATCH) {
        let z = stack_batch(chunk.iter());
        let pass = channel_forward(model, p, &z, kind, snr_db, &mut rng)?;
        num += (&pass.zhat - &z).mapv(|v| v * v).sum();
        den += z.mapv(|v| v * v).sum();
    }
    Ok(if den > 0.0 { num / den } else { num })
}

/// End-to-end image MSE (unclipped decoder output) under the evaluation
/// noise. This is the semantic-phase objective and the crossed-training
/// convergence measure.
pub fn end_to_end_loss(
    model: &ScModel,
    p: &Params,
    images: &[Array3<f64>],
    kind: ChannelKind,
    snr_db: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = eval_rng(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in images.chunks(EVAL_BATCH) {
        let x = stack_batch(chunk.iter());
        let (z, _) = model.codec.encode_batch(p, &x);
        let pass = channel_forward(model, p, &z, kind, snr_db, &mut rng)?;
        let (y, _) = model.codec.decode_batch(p, &pass.zhat);
        total += (&y - &x).mapv(|v| v * v).sum();
        count += x.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Trains `channel.*` (and the statistics network) on frozen encoder
/// features. Returns the per-epoch objective, entry 0 being the initial one.
pub fn train_channel_phase(
    model: &ScModel,
    features: &[Array3<f64>],
    cfg: &TrainConfig,
    kind: ChannelKind,
    params: &mut Params,
    log: &mut TraceLog,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyDataset("no features for the channel phase".into()));
    }
    let freeze = FreezeSet::capture(params, &["encoder", "decoder", "mask"]);
    let phase = "channel";
    let mut opt = Adam::new(params, cfg.lr);
    let mut mine_opt = Adam::new(params, cfg.mi_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(31).wrapping_add(1));
    let initial = channel_objective(model, params, features, kind, cfg)?;
    check_progress(phase, 0, initial, initial)?;
    log.push(phase, initial, 1.0, cfg);
    let mut trace = vec![initial];
    for epoch in 1..=cfg.epochs {
        for idx in batches(features.len(), cfg.batch, &mut rng) {
            let z = gather(features, &idx);
            let pass = channel_forward(model, params, &z, kind, cfg.snr_db_train, &mut rng)?;
            let (_, dzhat) = mse(&pass.zhat, &z);
            let mut g = params.zeros_like();
            let mut extra = None;
            if cfg.mi_weight > 0.0 {
                let total = pass.tx.len();
                let m = cfg.mi_pairs.min(total);
                let mut flat: Vec<usize> = (0..total).collect();
                flat.shuffle(&mut rng);
                let pick = &flat[..m];
                let tx = pass.tx.as_slice().expect("contiguous");
                let rx = pass.rx.as_slice().expect("contiguous");
                let xs: Vec<f64> = pick.iter().map(|&i| tx[i]).collect();
                let ys: Vec<f64> = pick.iter().map(|&i| rx[i]).collect();
                let mut perm: Vec<usize> = (0..m).collect();
                perm.shuffle(&mut rng);
                let ev = model.mine.bound_and_grad(params, &xs, &ys, &perm);
                if !ev.bound.is_finite() {
                    return Err(Error::NonFiniteBound { step: epoch });
                }
                // received = transmitted + scaled noise, so both partials land
                // on the transmitted symbol.
                let mut e = Array2::zeros(pass.tx.raw_dim());
                let es = e.as_slice_mut().expect("contiguous");
                for (j, &i) in pick.iter().enumerate() {
                    es[i] -= cfg.mi_weight * (ev.dx[j] + ev.dy[j]);
                }
                extra = Some(e);
                let mut ascent = ev.grads;
                for (_, a) in ascent.iter_mut() {
                    a.mapv_inplace(|v| -v);
                }
                update(&mut mine_opt, params, &ascent, &["mine."]);
            }
            channel_backward(model, params, &pass, &dzhat, extra.as_ref(), &mut g);
            update(&mut opt, params, &g, &["channel."]);
        }
        let l = channel_objective(model, params, features, kind, cfg)?;
        check_progress(phase, epoch, l, initial)?;
        log.push(phase, l, 1.0, cfg);
        trace.push(l);
    }
    freeze.verify(params, phase)?;
    Ok(trace)
}

/// Trains `encoder.*` and `decoder.*` end to end through the frozen channel
/// codec. `images` are both the inputs and the reconstruction targets.
pub fn train_semantic_phase(
    model: &ScModel,
    images: &[Array3<f64>],
    cfg: &TrainConfig,
    kind: ChannelKind,
    params: &mut Params,
    log: &mut TraceLog,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset("no images for the semantic phase".into()));
    }
    let freeze = FreezeSet::capture(params, &["channel", "mask", "mine"]);
    let phase = "semantic";
    let mut opt = Adam::new(params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(31).wrapping_add(2));
    let initial = end_to_end_loss(model, params, images, kind, cfg.snr_db_train, cfg.seed)?;
    check_progress(phase, 0, initial, initial)?;
    log.push(phase, initial, 1.0, cfg);
    let mut trace = vec![initial];
    for epoch in 1..=cfg.epochs {
        for idx in batches(images.len(), cfg.batch, &mut rng) {
            let x = gather(images, &idx);
            let (z, ec) = model.codec.encode_batch(params, &x);
            let pass = channel_forward(model, params, &z, kind, cfg.snr_db_train, &mut rng)?;
            let (y, dc) = model.codec.decode_batch(params, &pass.zhat);
            let (_, dy) = mse(&y, &x);
            let mut g = params.zeros_like();
            let dzhat = model.codec.decode_backward(params, &dc, &dy, &mut g, true).expect("input grad");
            let dz = channel_backward(model, params, &pass, &dzhat, None, &mut g);
            model.codec.encode_backward(params, &ec, &dz, &mut g, false);
            update(&mut opt, params, &g, &["encoder.", "decoder."]);
        }
        let l = end_to_end_loss(model, params, images, kind, cfg.snr_db_train, cfg.seed)?;
        check_progress(phase, epoch, l, initial)?;
        log.push(phase, l, 1.0, cfg);
        trace.push(l);
    }
    freeze.verify(params, phase)?;
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: usize,
    pub module: String,
    /// End-to-end loss after this phase.
    pub end_to_end_loss: f64,
    pub semantic_digest: String,
    pub channel_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossedReport {
    pub initial_loss: f64,
    pub initial_semantic_digest: String,
    pub initial_channel_digest: String,
    pub entries: Vec<RoundEntry>,
    /// End-to-end loss after each completed round.
    pub round_losses: Vec<f64>,
    pub stopped_early: bool,
}

impl CrossedReport {
    pub fn modules(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.module.clone()).collect()
    }
}

fn semantic_digest(p: &Params) -> String {
    let mut s = p.subset("encoder.");
    s.extend(&p.subset("decoder."));
    s.digest()
}

/// Alternates channel and semantic phases until the round-over-round
/// end-to-end improvement drops below `convergence_eps` or
/// `crossed_rounds` is reached.
pub fn crossed_train(
    model: &ScModel,
    images: &[Array3<f64>],
    cfg: &TrainConfig,
    kind: ChannelKind,
    params: &mut Params,
    log: &mut TraceLog,
) -> Result<CrossedReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset("no images for crossed training".into()));
    }
    let initial_loss = end_to_end_loss(model, params, images, kind, cfg.snr_db_train, cfg.seed)?;
    let mut report = CrossedReport {
        initial_loss,
        initial_semantic_digest: semantic_digest(params),
        initial_channel_digest: module_digest(params, "channel"),
        entries: Vec::new(),
        round_losses: Vec::new(),
        stopped_early: false,
    };
    let mut prev = initial_loss;
    for round in 1..=cfg.crossed_rounds {
        let features = compute_features(model, params, images);
        let round_cfg = TrainConfig { seed: cfg.seed.wrapping_add(round as u64 * 1000), ..cfg.clone() };
        train_channel_phase(model, &features, &round_cfg, kind, params, log)?;
        let l = end_to_end_loss(model, params, images, kind, cfg.snr_db_train, cfg.seed)?;
        report.entries.push(RoundEntry {
            round,
            module: "channel".into(),
            end_to_end_loss: l,
            semantic_digest: semantic_digest(params),
            channel_digest: module_digest(params, "channel"),
        });
        train_semantic_phase(model, images, &round_cfg, kind, params, log)?;
        let l = end_to_end_loss(model, params, images, kind, cfg.snr_db_train, cfg.seed)?;
        report.entries.push(RoundEntry {
            round,
            module: "semantic".into(),
            end_to_end_loss: l,
            semantic_digest: semantic_digest(params),
            channel_digest: module_digest(params, "channel"),
        });
        report.round_losses.push(l);
        log::info!("crossed round {round}: end-to-end loss {l:.6}");
        if prev - l < cfg.convergence_eps {
            report.stopped_early = round < cfg.crossed_rounds;
            break;
        }
        prev = l;
    }
    Ok(report)
}

/// Masked/raw path difference plus the mean mask ratio, under evaluation
/// noise shared by both paths.
pub fn asc_objective(
    model: &ScModel,
    p: &Params,
    features: &[Array3<f64>],
    kind: ChannelKind,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut rng = eval_rng(cfg.seed);
    let (mut diff, mut count, mut kept, mut total) = (0.0, 0usize, 0.0, 0usize);
    for chunk in features.chunks(EVAL_BATCH) {
        let z = stack_batch(chunk.iter());
        let snapshot = rng.clone();
        let raw = channel_forward(model, p, &z, kind, cfg.snr_db_train, &mut rng)?;
        let (yr, _) = model.codec.decode_batch(p, &raw.zhat);
        let (_, mc) = model.codec.mask_logits_batch(p, &z);
        let bits = binarize(&mc.probs);
        let zm = &z * &bits;
        let mut rng_m = snapshot;
        let masked = channel_forward(model, p, &zm, kind, cfg.snr_db_train, &mut rng_m)?;
        let (ym, _) = model.codec.decode_batch(p, &masked.zhat);
        diff += (&ym - &yr).mapv(|v| v * v).sum();
        count += yr.len();
        kept += bits.sum();
        total += bits.len();
    }
    let ratio = kept / total.max(1) as f64;
    Ok((diff / count.max(1) as f64, ratio))
}

/// Loss `MSE(decode(channel(z ⊙ gate)), target) + mu · mean(gate)` and its
/// gradient with respect to `gate`. Channel and decoder gradients are
/// accumulated into `g`.
#[allow(clippy::too_many_arguments)]
pub fn gated_path_backward(
    model: &ScModel,
    p: &Params,
    z: &Array4<f64>,
    gate: &Array4<f64>,
    target: &Array4<f64>,
    mu: f64,
    kind: ChannelKind,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
    g: &mut Params,
) -> Result<(f64, Array4<f64>)> {
    let zm = z * gate;
    let pass = channel_forward(model, p, &zm, kind, snr_db, rng)?;
    let (y, dc) = model.codec.decode_batch(p, &pass.zhat);
    let (l, dy) = mse(&y, target);
    let dzhat = model.codec.decode_backward(p, &dc, &dy, g, true).expect("input grad");
    let dzm = channel_backward(model, p, &pass, &dzhat, None, g);
    let ratio_grad = mu / gate.len() as f64;
    let dgate = (&dzm * z).mapv(|v| v + ratio_grad);
    Ok((l + mu * gate.mean().unwrap_or(0.0), dgate))
}

/// Smooth surrogate of the mask-network objective, with the sigmoid
/// probabilities in place of the hard bits, and its gradient over every
/// parameter. Training uses the same backward pass with hard bits.
#[allow(clippy::too_many_arguments)]
pub fn mask_surrogate_loss_and_grad(
    model: &ScModel,
    p: &Params,
    z: &Array4<f64>,
    target: &Array4<f64>,
    mu: f64,
    kind: ChannelKind,
    snr_db: f64,
    noise_seed: u64,
) -> Result<(f64, Params)> {
    let (_, mc) = model.codec.mask_logits_batch(p, z);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut g = p.zeros_like();
    let (l, dprobs) = gated_path_backward(model, p, z, &mc.probs, target, mu, kind, snr_db, &mut rng, &mut g)?;
    model.codec.mask_backward(p, &mc, &dprobs, &mut g, false);
    Ok((l, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AscReport {
    /// Path-difference term per epoch (entry 0 before training).
    pub difference: Vec<f64>,
    /// Mean mask ratio per epoch.
    pub mask_ratio: Vec<f64>,
    /// Mask ratio of the kept (best) epoch.
    pub final_mask_ratio: f64,
    /// Epoch whose mask network was kept; 0 means the initial one.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains `mask.*` only; the semantic codec, channel codec and attention
/// networks stay frozen. `images` are the (semantic-aware) sources.
pub fn train_asc(
    model: &ScModel,
    images: &[Array3<f64>],
    cfg: &TrainConfig,
    kind: ChannelKind,
    params: &mut Params,
    log: &mut TraceLog,
) -> Result<AscReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset("no images for mask training".into()));
    }
    let freeze = FreezeSet::capture(params, &["encoder", "decoder", "channel", "mine"]);
    let phase = "asc";
    let features = compute_features(model, params, images);
    let mut opt = Adam::new(params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(31).wrapping_add(3));
    let (d0, r0) = asc_objective(model, params, &features, kind, cfg)?;
    if r0 == 0.0 {
        return Err(Error::MaskCollapse { epoch: 0 });
    }
    let initial = d0 + cfg.mu * r0;
    check_progress(phase, 0, initial, initial)?;
    log.push(phase, initial, r0, cfg);
    let mut report = AscReport {
        difference: vec![d0],
        mask_ratio: vec![r0],
        final_mask_ratio: r0,
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = (d0, params.subset("mask."));
    for epoch in 1..=cfg.epochs {
        let mut any_kept = false;
        for idx in batches(features.len(), cfg.batch, &mut rng) {
            let z = gather(&features, &idx);
            let snapshot = rng.clone();
            let raw = channel_forward(model, params, &z, kind, cfg.snr_db_train, &mut rng)?;
            let (yr, _) = model.codec.decode_batch(params, &raw.zhat);
            let (_, mc) = model.codec.mask_logits_batch(params, &z);
            let bits = binarize(&mc.probs);
            any_kept |= bits.iter().any(|&b| b > 0.0);
            let mut rng_m = snapshot;
            let mut g = params.zeros_like();
            // Straight-through: the hard bits take the gradient of the
            // sigmoid probabilities.
            let (_, dprobs) =
                gated_path_backward(model, params, &z, &bits, &yr, cfg.mu, kind, cfg.snr_db_train, &mut rng_m, &mut g)?;
            let mut gm = params.zeros_like();
            model.codec.mask_backward(params, &mc, &dprobs, &mut gm, false);
            update(&mut opt, params, &gm, &["mask."]);
        }
        if !any_kept {
            return Err(Error::MaskCollapse { epoch });
        }
        let (d, r) = asc_objective(model, params, &features, kind, cfg)?;
        let l = d + cfg.mu * r;
        check_progress(phase, epoch, l, initial)?;
        log.push(phase, l, r, cfg);
        report.difference.push(d);
        report.mask_ratio.push(r);
        if cfg.asc_patience == 0 || d < best.0 {
            best = (d, params.subset("mask."));
            report.best_epoch = epoch;
            report.final_mask_ratio = r;
        } else if epoch - report.best_epoch >= cfg.asc_patience {
            report.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    params.extend(&best.1);
    freeze.verify(params, phase)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Padding;
    use crate::nn::gradcheck::{max_relative_error, numerical_gradient};
    use rand::Rng;

    fn toy_layout(variant: Variant) -> ScLayout {
        ScLayout {
            codec: CodecConfig {
                filters: vec![4, 6],
                pools: vec![2, 2],
                paddings: vec![Padding::Same, Padding::Same],
                mask_hidden: 4,
                ..CodecConfig::default()
            },
            input_shape: (8, 8, 3),
            channel_hidden: 8,
            mine_hidden: 8,
            variant,
        }
    }

    fn toy_images(n: usize, seed: u64) -> Vec<Array3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base: f64 = rng.random_range(0.1..0.9);
                Array3::from_shape_fn((8, 8, 3), |(y, x, c)| {
                    (base + 0.05 * ((x + y + c) as f64).sin()).clamp(0.0, 1.0)
                })
            })
            .collect()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, batch: 4, lr: 3e-3, snr_db_train: 20.0, seed: 5, ..TrainConfig::default() }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_and_trace_constant() {
        let model = ScModel::new(toy_layout(Variant::Baseline)).unwrap();
        let mut p = model.init(1);
        let before = p.digest();
        let images = toy_images(6, 2);
        let c = TrainConfig { lr: 0.0, mi_lr: 0.0, ..cfg(3) };
        let mut log = TraceLog::default();
        let t = train_semantic_phase(&model, &images, &c, ChannelKind::Awgn, &mut p, &mut log).unwrap();
        assert!(t.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()));
        let feats = compute_features(&model, &p, &images);
        let t = train_channel_phase(&model, &feats, &c, ChannelKind::Awgn, &mut p, &mut log).unwrap();
        assert!(t.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()));
        assert_eq!(p.digest(), before);
    }

    #[test]
    fn crossed_single_round_runs_channel_then_semantic() {
        let model = ScModel::new(toy_layout(Variant::Baseline)).unwrap();
        let mut p = model.init(3);
        let images = toy_images(8, 4);
        let c = TrainConfig { crossed_rounds: 1, ..cfg(2) };
        let mut log = TraceLog::default();
        let r = crossed_train(&model, &images, &c, ChannelKind::Awgn, &mut p, &mut log).unwrap();
        assert_eq!(r.modules(), vec!["channel", "semantic"]);
        // The channel phase leaves the semantic digest alone and vice versa.
        assert_ne!(r.entries[0].channel_digest, r.entries[1].semantic_digest);
        let phases: Vec<&str> = log.records.iter().map(|r| r.phase.as_str()).collect();
        assert_eq!(phases.first(), Some(&"channel"));
        assert_eq!(phases.last(), Some(&"semantic"));
        assert!(log.records.windows(2).all(|w| w[1].step == w[0].step + 1));
    }

    #[test]
    fn huge_convergence_eps_stops_after_one_round() {
        let model = ScModel::new(toy_layout(Variant::Baseline)).unwrap();
        let mut p = model.init(3);
        let images = toy_images(4, 4);
        let c = TrainConfig { crossed_rounds: 5, convergence_eps: 1e9, ..cfg(1) };
        let r = crossed_train(&model, &images, &c, ChannelKind::Awgn, &mut p, &mut TraceLog::default()).unwrap();
        assert_eq!(r.round_losses.len(), 1);
        assert!(r.stopped_early);
    }

    #[test]
    fn training_is_reproducible() {
        let model = ScModel::new(toy_layout(Variant::Lamsc)).unwrap();
        let images = toy_images(6, 9);
        let run = || {
            let mut p = model.init(7);
            let mut log = TraceLog::default();
            crossed_train(&model, &images, &TrainConfig { crossed_rounds: 1, ..cfg(1) }, ChannelKind::Rayleigh, &mut p, &mut log)
                .unwrap();
            train_asc(&model, &images, &cfg(1), ChannelKind::Rayleigh, &mut p, &mut log).unwrap();
            (p.digest(), log.records)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn asc_updates_only_the_mask_network() {
        let model = ScModel::new(toy_layout(Variant::Lamsc)).unwrap();
        let mut p = model.init(11);
        let images = toy_images(6, 12);
        let before: Vec<String> =
            ["encoder", "decoder", "channel", "mine", "mask"].iter().map(|m| module_digest(&p, m)).collect();
        let c = TrainConfig { asc_patience: 0, ..cfg(2) };
        let r = train_asc(&model, &images, &c, ChannelKind::Awgn, &mut p, &mut TraceLog::default()).unwrap();
        let after: Vec<String> =
            ["encoder", "decoder", "channel", "mine", "mask"].iter().map(|m| module_digest(&p, m)).collect();
        assert_eq!(before[..4], after[..4]);
        assert_ne!(before[4], after[4]);
        assert_eq!(r.difference.len(), 3);
    }

    #[test]
    fn early_stopping_keeps_the_best_epoch() {
        let model = ScModel::new(toy_layout(Variant::Lamsc)).unwrap();
        let p0 = model.init(11);
        let images = toy_images(6, 12);
        let full_cfg = TrainConfig { asc_patience: 0, epochs: 8, lr: 0.05, ..cfg(2) };
        let mut p = p0.clone();
        let full = train_asc(&model, &images, &full_cfg, ChannelKind::Awgn, &mut p, &mut TraceLog::default()).unwrap();

        // Replay the stopping rule on the uninterrupted trace.
        let d = &full.difference;
        let (mut best, mut stop) = (0, d.len() - 1);
        for e in 1..d.len() {
            if d[e] < d[best] {
                best = e;
            } else {
                stop = e;
                break;
            }
        }
        let mut q = p0.clone();
        let es_cfg = TrainConfig { asc_patience: 1, ..full_cfg.clone() };
        let r = train_asc(&model, &images, &es_cfg, ChannelKind::Awgn, &mut q, &mut TraceLog::default()).unwrap();
        assert_eq!(r.best_epoch, best);
        assert_eq!(r.difference[..], d[..=stop]);
        assert_eq!(r.final_mask_ratio, full.mask_ratio[best]);

        let mut expect = p0.clone();
        if best > 0 {
            let c = TrainConfig { epochs: best, ..full_cfg };
            train_asc(&model, &images, &c, ChannelKind::Awgn, &mut expect, &mut TraceLog::default()).unwrap();
        }
        assert_eq!(module_digest(&q, "mask"), module_digest(&expect, "mask"));
    }

    #[test]
    fn mask_collapse_is_detected() {
        let model = ScModel::new(toy_layout(Variant::Lamsc)).unwrap();
        let mut p = model.init(11);
        p.get_mut("mask.head.weight").fill(0.0);
        p.get_mut("mask.head.bias").fill(-50.0);
        let images = toy_images(4, 12);
        let err = train_asc(&model, &images, &cfg(1), ChannelKind::Awgn, &mut p, &mut TraceLog::default()).unwrap_err();
        assert!(matches!(err, Error::MaskCollapse { epoch: 0 }));
    }

    /// The masked-path gradient through frozen decoder and channel, checked
    /// with a smooth surrogate where the hard bits are replaced by the
    /// sigmoid probabilities (the straight-through path).
    #[test]
    fn straight_through_path_gradient_matches_finite_differences() {
        let model = ScModel::new(toy_layout(Variant::Lamsc)).unwrap();
        let mut p = model.init(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for (name, a) in p.iter_mut() {
            if name.ends_with(".bias") {
                a.mapv_inplace(|_| rng.random_range(-0.1..0.1));
            }
        }
        let images = toy_images(2, 15);
        let x = stack_batch(images.iter());
        let (z, _) = model.codec.encode_batch(&p, &x);
        let target = Array4::from_shape_simple_fn(x.raw_dim(), || rng.random_range(0.0..1.0));
        let loss = |q: &Params| mask_surrogate_loss_and_grad(&model, q, &z, &target, 0.05, ChannelKind::Awgn, 10.0, 1).unwrap().0;
        let (_, g) = mask_surrogate_loss_and_grad(&model, &p, &z, &target, 0.05, ChannelKind::Awgn, 10.0, 1).unwrap();
        for module in ["mask.", "channel."] {
            let num = numerical_gradient(&p.subset(module), 1e-5, |q| {
                let mut full = p.clone();
                full.extend(q);
                loss(&full)
            });
            let err = max_relative_error(&g.subset(module), &num);
            assert!(err < 1e-3, "{module} {err}");
        }
    }

    #[test]
    fn loss_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = TraceLog::default();
        let c = cfg(1);
        log.push("semantic", 0.125, 1.0, &c);
        log.push("asc", 0.0625, 0.4, &c);
        let path = dir.path().join("loss.csv");
        write_loss_csv(&path, &log.records).unwrap();
        assert_eq!(read_loss_csv(&path).unwrap(), log.records);
    }
}
