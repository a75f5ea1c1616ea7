//! Attention-based semantic integration.
//!
//! Segments are stacked as channels. A channel-attention MLP, shared across
//! segments and across the max/mean pooled descriptors, weighs each segment;
//! a 7×7 spatial-attention convolution over the per-pixel max/mean across the
//! stack gates the weighted sum into one semantic-aware image.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::nn::{relu, relu_backward, sigmoid, Adam, Conv2d, Dense, Params};
use crate::skb::{extract_segment, SegmentSet};

pub const SPATIAL_KERNEL: usize = 7;

/// K×H×W×C stack of extracted segments; slots `>= valid_count` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentStack {
    pub data: Array4<f64>,
    pub valid_count: usize,
}

impl SegmentStack {
    pub fn from_segments(set: &SegmentSet, k_max: usize) -> Result<Self> {
        let (h, w, c) = set.source.shape();
        let mut data = Array4::zeros((k_max, h, w, c));
        let valid_count = set.masks.len().min(k_max);
        for (k, m) in set.masks.iter().take(k_max).enumerate() {
            let seg = extract_segment(&set.source, m)?;
            data.slice_mut(s![k, .., .., ..]).assign(&seg.pixels);
        }
        Ok(Self { data, valid_count })
    }

    pub fn k(&self) -> usize {
        self.data.dim().0
    }

    /// (H, W, C) of each slot.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.data.dim();
        (h, w, c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.valid_count > self.k() {
            return Err(Error::ShapeMismatch(format!(
                "valid_count {} exceeds stack depth {}",
                self.valid_count,
                self.k()
            )));
        }
        if self.data.slice(s![self.valid_count.., .., .., ..]).iter().any(|v| *v != 0.0) {
            return Err(Error::ShapeMismatch("padding slots must be zero".into()));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite segment values".into()));
        }
        Ok(())
    }

    /// Reorders the valid slots; `perm` is a permutation of `0..valid_count`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.valid_count);
        let mut data = self.data.clone();
        for (dst, &src) in perm.iter().enumerate() {
            data.slice_mut(s![dst, .., .., ..]).assign(&self.data.slice(s![src, .., .., ..]));
        }
        Self { data, valid_count: self.valid_count }
    }
}

/// Layout of the attention networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionLayout {
    pub k_max: usize,
    pub channels: usize,
    pub hidden: usize,
}

impl AttentionLayout {
    /// Hidden width defaults to ceil(k_max / 2).
    pub fn new(k_max: usize, channels: usize) -> Self {
        Self { k_max, channels, hidden: k_max.div_ceil(2).max(1) }
    }

    fn fc1(&self) -> Dense {
        Dense::new("channel.fc1", self.channels, self.hidden)
    }

    fn fc2(&self) -> Dense {
        Dense::new("channel.fc2", self.hidden, 1)
    }

    fn conv(&self) -> Conv2d {
        Conv2d::new("spatial.conv", SPATIAL_KERNEL, 2, 1, SPATIAL_KERNEL / 2)
    }

    pub fn init(&self, rng_seed: u64) -> AttentionParams {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut params = Params::new();
        self.fc1().init(&mut params, &mut rng, true);
        self.fc2().init(&mut params, &mut rng, false);
        self.conv().init(&mut params, &mut rng, false);
        AttentionParams { layout: *self, params, rng_seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub layout: AttentionLayout,
    pub params: Params,
    pub rng_seed: u64,
}

impl AttentionParams {
    pub fn validate(&self) -> Result<()> {
        if !self.params.all_finite() {
            return Err(Error::InvalidImage("non-finite attention parameters".into()));
        }
        self.params.check_layout(&self.layout.init(0).params)
    }
}

fn check_stack(stack: &SegmentStack, p: &AttentionParams) -> Result<()> {
    let (_, _, c) = stack.image_shape();
    if stack.k() != p.layout.k_max || c != p.layout.channels {
        return Err(Error::ShapeMismatch(format!(
            "stack has K={} C={}, attention expects K={} C={}",
            stack.k(),
            c,
            p.layout.k_max,
            p.layout.channels
        )));
    }
    Ok(())
}

/// Per-slot (max, mean) over H and W: two K×C matrices.
fn pool_segments(data: &Array4<f64>) -> (Array2<f64>, Array2<f64>) {
    let (k, h, w, c) = data.dim();
    let mut mx = Array2::from_elem((k, c), f64::NEG_INFINITY);
    let mut mn = Array2::zeros((k, c));
    for ((kk, _, _, cc), v) in data.indexed_iter() {
        if *v > mx[[kk, cc]] {
            mx[[kk, cc]] = *v;
        }
        mn[[kk, cc]] += v;
    }
    mn /= (h * w) as f64;
    (mx, mn)
}

struct ChannelCache {
    pooled: [Array2<f64>; 2],
    hidden: [Array2<f64>; 2],
    weights: Array1<f64>,
}

fn channel_forward(stack: &SegmentStack, p: &AttentionParams) -> (Array1<f64>, Array4<f64>, ChannelCache) {
    let (fc1, fc2) = (p.layout.fc1(), p.layout.fc2());
    let (mx, mn) = pool_segments(&stack.data);
    let hm = relu(&fc1.forward(&p.params, &mx));
    let ha = relu(&fc1.forward(&p.params, &mn));
    let logits = &fc2.forward(&p.params, &hm) + &fc2.forward(&p.params, &ha);
    let weights = logits.column(0).mapv(sigmoid);
    let mut low = stack.data.clone();
    for (k, mut slot) in low.outer_iter_mut().enumerate() {
        slot *= weights[k];
    }
    let cache = ChannelCache { pooled: [mx, mn], hidden: [hm, ha], weights: weights.clone() };
    (weights, low, cache)
}

/// Segment weights in (0, 1) and the weighted segments.
pub fn channel_attention(
    stack: &SegmentStack,
    params: &AttentionParams,
) -> Result<(Array1<f64>, Array4<f64>)> {
    check_stack(stack, params)?;
    let (w, low, _) = channel_forward(stack, params);
    Ok((w, low))
}

struct SpatialCache {
    argmax: Array2<usize>,
    conv: crate::nn::layers::ConvCache,
    gate: Array2<f64>,
    sum: Array3<f64>,
    raw: Array3<f64>,
}

fn spatial_forward(low: &Array4<f64>, p: &AttentionParams) -> (Array3<f64>, SpatialCache) {
    let (k, h, w, c) = low.dim();
    let mut map = Array4::zeros((1, h, w, 2));
    let mut argmax = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = f64::NEG_INFINITY;
            let mut total = 0.0;
            for kk in 0..k {
                for cc in 0..c {
                    let v = low[[kk, y, x, cc]];
                    total += v;
                    if v > best {
                        best = v;
                        argmax[[y, x]] = kk * c + cc;
                    }
                }
            }
            map[[0, y, x, 0]] = best;
            map[[0, y, x, 1]] = total / (k * c) as f64;
        }
    }
    let (logit, conv) = p.layout.conv().forward(&p.params, &map);
    let gate = logit.slice(s![0, .., .., 0]).mapv(sigmoid);
    let sum = low.sum_axis(Axis(0));
    let mut raw = sum.clone();
    for ((y, x, _), v) in raw.indexed_iter_mut() {
        *v *= gate[[y, x]];
    }
    let out = raw.mapv(|v| v.clamp(0.0, 1.0));
    (out, SpatialCache { argmax, conv, gate, sum, raw })
}

/// Merges weighted segments into one image gated per pixel.
pub fn spatial_attention(low_level: &Array4<f64>, params: &AttentionParams) -> Result<ImageSample> {
    let (_, h, w, c) = low_level.dim();
    if c != params.layout.channels {
        return Err(Error::ShapeMismatch(format!(
            "low-level semantics have {c} channels, attention expects {}",
            params.layout.channels
        )));
    }
    if h < SPATIAL_KERNEL / 2 || w < SPATIAL_KERNEL / 2 || low_level.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("low-level semantics must be finite and non-empty".into()));
    }
    let (out, _) = spatial_forward(low_level, params);
    ImageSample::new_unchecked_size(out, "integrated")
}

/// The semantic-aware image for `stack`.
pub fn integrate(stack: &SegmentStack, params: &AttentionParams) -> Result<ImageSample> {
    let (_, low) = channel_attention(stack, params)?;
    spatial_attention(&low, params)
}

/// Pixelwise sum of the selected valid segments, clipped to [0, 1].
pub fn human_select(stack: &SegmentStack, selection: &[bool]) -> Result<ImageSample> {
    if selection.len() != stack.k() {
        return Err(Error::ShapeMismatch(format!(
            "selection has {} entries, stack has {}",
            selection.len(),
            stack.k()
        )));
    }
    if !selection.iter().take(stack.valid_count).any(|&b| b) {
        return Err(Error::EmptySelection);
    }
    let (h, w, c) = stack.image_shape();
    let mut out = Array3::zeros((h, w, c));
    for (k, _) in selection.iter().enumerate().take(stack.valid_count).filter(|(_, &b)| b) {
        out += &stack.data.slice(s![k, .., .., ..]);
    }
    ImageSample::new_unchecked_size(out.mapv(|v| v.clamp(0.0, 1.0)), "selected")
}

/// Mean squared error between `integrate(stack)` and `target` together with
/// its gradient w.r.t. every attention parameter.
pub fn loss_and_grad(
    stack: &SegmentStack,
    target: &Array3<f64>,
    p: &AttentionParams,
) -> (f64, Params) {
    let (fc1, fc2, conv) = (p.layout.fc1(), p.layout.fc2(), p.layout.conv());
    let (_, low, cc) = channel_forward(stack, p);
    let (out, sc) = spatial_forward(&low, p);
    let (k, h, w, c) = low.dim();
    let n = (h * w * c) as f64;
    let diff = &out - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;

    let mut g = p.params.zeros_like();
    // Through the clip.
    let mut draw = diff.mapv(|d| 2.0 * d / n);
    ndarray::Zip::from(&mut draw).and(&sc.raw).for_each(|d, &r| {
        if !(0.0..=1.0).contains(&r) {
            *d = 0.0;
        }
    });
    // raw = gate * sum
    let mut dgate = Array2::<f64>::zeros((h, w));
    let mut dsum = draw.clone();
    for ((y, x, ch), d) in draw.indexed_iter() {
        dgate[[y, x]] += d * sc.sum[[y, x, ch]];
        dsum[[y, x, ch]] = d * sc.gate[[y, x]];
    }
    let mut dlogit = Array4::zeros((1, h, w, 1));
    for ((y, x), d) in dgate.indexed_iter() {
        let gt = sc.gate[[y, x]];
        dlogit[[0, y, x, 0]] = d * gt * (1.0 - gt);
    }
    let dmap = conv.backward(&p.params, &sc.conv, &dlogit, &mut g, true).expect("input grad");
    // Back to the low-level semantics.
    let mut dlow = Array4::zeros((k, h, w, c));
    for kk in 0..k {
        dlow.slice_mut(s![kk, .., .., ..]).assign(&dsum);
    }
    let kc = (k * c) as f64;
    for y in 0..h {
        for x in 0..w {
            let am = sc.argmax[[y, x]];
            dlow[[am / c, y, x, am % c]] += dmap[[0, y, x, 0]];
            let dm = dmap[[0, y, x, 1]] / kc;
            for kk in 0..k {
                for ch in 0..c {
                    dlow[[kk, y, x, ch]] += dm;
                }
            }
        }
    }
    // low[k] = w_k * stack[k]
    let mut dlogits = Array2::zeros((k, 1));
    for kk in 0..k {
        let dw: f64 = (&dlow.slice(s![kk, .., .., ..]) * &stack.data.slice(s![kk, .., .., ..])).sum();
        let wk = cc.weights[kk];
        dlogits[[kk, 0]] = dw * wk * (1.0 - wk);
    }
    for (pooled, hidden) in cc.pooled.iter().zip(cc.hidden.iter()) {
        let dh = fc2.backward(&p.params, hidden, &dlogits, &mut g, true).expect("input grad");
        let dh = relu_backward(hidden, &dh);
        fc1.backward(&p.params, pooled, &dh, &mut g, false);
    }
    (loss, g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Human,
    SyntheticOracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceRecord {
    pub stack: SegmentStack,
    pub selection: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceBase {
    pub records: Vec<ExperienceRecord>,
    pub provenance: Provenance,
}

const EXPERIENCE_FORMAT: &str = "lamsc-experience";
const EXPERIENCE_VERSION: u32 = 1;
const RECORD_MAGIC: &[u8; 8] = b"LAMSCEXP";

#[derive(Serialize, Deserialize)]
struct ExperienceManifest {
    format: String,
    version: u32,
    provenance: Provenance,
    records: usize,
}

impl ExperienceBase {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Builds a base from segment sets, selecting segments whose label is in
    /// `interest`. Sets without any interesting segment are skipped.
    pub fn from_interest(sets: &[SegmentSet], interest: &[String], k_max: usize) -> Result<Self> {
        let mut records = Vec::new();
        for set in sets {
            let stack = SegmentStack::from_segments(set, k_max)?;
            let mut selection = vec![false; k_max];
            for (k, m) in set.masks.iter().take(k_max).enumerate() {
                selection[k] = m.label.as_ref().is_some_and(|l| interest.contains(l));
            }
            if selection.iter().any(|&b| b) {
                records.push(ExperienceRecord { stack, selection });
            }
        }
        Ok(Self { records, provenance: Provenance::SyntheticOracle })
    }

    /// Writes `manifest.json` plus one binary file per record:
    /// magic, version (u32), K/H/W/C/valid_count (u32), the selection as an
    /// ASCII bit-string of length K, then K·H·W·C little-endian f64 values.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = ExperienceManifest {
            format: EXPERIENCE_FORMAT.into(),
            version: EXPERIENCE_VERSION,
            provenance: self.provenance,
            records: self.records.len(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for (i, r) in self.records.iter().enumerate() {
            let mut f = std::io::BufWriter::new(std::fs::File::create(record_path(dir, i))?);
            let (k, h, w, c) = r.stack.data.dim();
            f.write_all(RECORD_MAGIC)?;
            f.write_all(&EXPERIENCE_VERSION.to_le_bytes())?;
            for d in [k, h, w, c, r.stack.valid_count] {
                f.write_all(&(d as u32).to_le_bytes())?;
            }
            let bits: String = r.selection.iter().map(|&b| if b { '1' } else { '0' }).collect();
            f.write_all(bits.as_bytes())?;
            for v in r.stack.data.iter() {
                f.write_all(&v.to_le_bytes())?;
            }
            f.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let manifest: ExperienceManifest = serde_json::from_slice(&std::fs::read(&mpath)?)?;
        if manifest.format != EXPERIENCE_FORMAT || manifest.version != EXPERIENCE_VERSION {
            return Err(Error::Format {
                path: mpath,
                reason: format!("unsupported format {} v{}", manifest.format, manifest.version),
            });
        }
        let mut records = Vec::with_capacity(manifest.records);
        for i in 0..manifest.records {
            let path = record_path(dir, i);
            let bad = |reason: &str| Error::Format { path: path.clone(), reason: reason.into() };
            let mut bytes = Vec::new();
            std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
            if bytes.len() < 32 || &bytes[..8] != RECORD_MAGIC {
                return Err(bad("bad magic"));
            }
            let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
            if u32_at(8) != EXPERIENCE_VERSION as usize {
                return Err(bad("unsupported record version"));
            }
            let (k, h, w, c, valid) = (u32_at(12), u32_at(16), u32_at(20), u32_at(24), u32_at(28));
            let sel_end = 32 + k;
            let n = k * h * w * c;
            if bytes.len() != sel_end + 8 * n {
                return Err(bad("truncated record"));
            }
            let selection = bytes[32..sel_end]
                .iter()
                .map(|b| match b {
                    b'0' => Ok(false),
                    b'1' => Ok(true),
                    _ => Err(bad("selection is not a bit-string")),
                })
                .collect::<Result<Vec<_>>>()?;
            let data: Vec<f64> = bytes[sel_end..]
                .chunks_exact(8)
                .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
                .collect();
            let stack = SegmentStack {
                data: Array4::from_shape_vec((k, h, w, c), data).map_err(|e| bad(&e.to_string()))?,
                valid_count: valid,
            };
            stack.validate()?;
            if !selection.iter().any(|&b| b) {
                return Err(bad("selection has no ones"));
            }
            records.push(ExperienceRecord { stack, selection });
        }
        Ok(Self { records, provenance: manifest.provenance })
    }
}

fn record_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join(format!("record_{i:05}.bin"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsiHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for AsiHyper {
    fn default() -> Self {
        Self { lr: 1e-2, epochs: 20, batch: 16, seed: 0 }
    }
}

/// Supervised fit of the attention networks to the experience base.
///
/// Returns the updated parameters and the loss trace: entry 0 is the mean
/// loss before training, entry `e` the mean loss after epoch `e`.
pub fn train_asi(
    base: &ExperienceBase,
    params: &AttentionParams,
    hyper: &AsiHyper,
) -> Result<(AttentionParams, Vec<f64>)> {
    if base.is_empty() {
        return Err(Error::EmptyDataset("experience base has no records".into()));
    }
    for r in &base.records {
        check_stack(&r.stack, params)?;
    }
    let targets: Vec<Array3<f64>> = base
        .records
        .iter()
        .map(|r| human_select(&r.stack, &r.selection).map(|i| i.pixels))
        .collect::<Result<_>>()?;
    let mean_loss = |p: &AttentionParams| -> f64 {
        base.records
            .iter()
            .zip(&targets)
            .map(|(r, t)| {
                let (out, _) = spatial_forward(&channel_forward(&r.stack, p).1, p);
                (&out - t).mapv(|d| d * d).mean().unwrap_or(0.0)
            })
            .sum::<f64>()
            / base.records.len() as f64
    };

    let mut p = params.clone();
    let mut opt = Adam::new(&p.params, hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..base.records.len()).collect();
    let initial = mean_loss(&p);
    if !initial.is_finite() {
        return Err(Error::NonFiniteLoss { phase: "asi".into(), step: 0 });
    }
    let mut trace = vec![initial];
    let batch = hyper.batch.max(1);
    let mut step = 0;
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grads = p.params.zeros_like();
            for &i in chunk {
                let (l, g) = loss_and_grad(&base.records[i].stack, &targets[i], &p);
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { phase: "asi".into(), step });
                }
                grads.add_scaled(&g, 1.0 / chunk.len() as f64);
            }
            opt.step(&mut p.params, &grads);
            step += 1;
        }
        let l = mean_loss(&p);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { phase: "asi".into(), step });
        }
        trace.push(l);
    }
    Ok((p, trace))
}
