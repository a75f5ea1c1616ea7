//! Convolutional semantic encoder/decoder and the adaptive feature-mask
//! network.
//!
//! The encoder is a stack of `conv k×k -> ReLU -> max-pool` stages. The
//! decoder mirrors it in reverse: nearest upsampling back to the pre-pool
//! size, then a transposed convolution with the mirrored padding, ReLU on
//! every stage but the last. Decoder output is left unbounded during training
//! and clipped to [0, 1] at inference.

use ndarray::{Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clip01, ImageSample};
use crate::nn::layers::{ConvCache, DeconvCache, PoolCache};
use crate::nn::{
    relu, relu_backward, sigmoid, upsample_nearest, upsample_nearest_backward, Conv2d,
    ConvTranspose2d, MaxPool, Params,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// How a pooling stage treats a size that is not a multiple of its factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Reject indivisible sizes.
    Exact,
    /// Drop trailing rows/columns.
    Floor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub filters: Vec<usize>,
    pub pools: Vec<usize>,
    pub paddings: Vec<Padding>,
    pub pool_mode: PoolMode,
    pub kernel: usize,
    /// Width of the mask network's hidden convolutions.
    pub mask_hidden: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            filters: vec![32, 64],
            pools: vec![2, 2],
            paddings: vec![Padding::Same, Padding::Same],
            pool_mode: PoolMode::Exact,
            kernel: 3,
            mask_hidden: 32,
        }
    }
}

impl CodecConfig {
    /// Stage layout that turns a 128×128×3 image into a 13×13×128 feature
    /// tensor (21 632 elements).
    pub fn large_profile() -> Self {
        Self {
            filters: vec![32, 128],
            pools: vec![3, 3],
            paddings: vec![Padding::Same, Padding::Valid],
            pool_mode: PoolMode::Floor,
            kernel: 3,
            mask_hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::Config("codec needs at least one stage".into()));
        }
        if self.pools.len() != self.filters.len() || self.paddings.len() != self.filters.len() {
            return Err(Error::Config(format!(
                "codec stage lists disagree: {} filters, {} pools, {} paddings",
                self.filters.len(),
                self.pools.len(),
                self.paddings.len()
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.filters.contains(&0) || self.pools.contains(&0) || self.mask_hidden == 0 {
            return Err(Error::Config("codec widths and pool factors must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Stage {
    in_size: (usize, usize),
    conv_size: (usize, usize),
    pad: usize,
}

/// Encoder/decoder/mask-net layout bound to a fixed input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticCodec {
    pub config: CodecConfig,
    pub input_shape: (usize, usize, usize),
    stages: Vec<Stage>,
    feature_shape: (usize, usize, usize),
}

pub struct EncodeCache {
    convs: Vec<ConvCache>,
    acts: Vec<Array4<f64>>,
    pools: Vec<PoolCache>,
}

pub struct DecodeCache {
    deconvs: Vec<DeconvCache>,
    outs: Vec<Array4<f64>>,
    up_from: Vec<(usize, usize)>,
}

pub struct MaskCache {
    c1: ConvCache,
    a1: Array4<f64>,
    c2: ConvCache,
    a2: Array4<f64>,
    head: ConvCache,
    /// Sigmoid of the logits.
    pub probs: Array4<f64>,
}

impl SemanticCodec {
    pub fn new(config: CodecConfig, input_shape: (usize, usize, usize)) -> Result<Self> {
        config.validate()?;
        let (mut h, mut w, c) = input_shape;
        if c == 0 {
            return Err(Error::ShapeMismatch("image has no channels".into()));
        }
        let k = config.kernel;
        let mut stages = Vec::new();
        for i in 0..config.filters.len() {
            let pad = match config.paddings[i] {
                Padding::Same => (k - 1) / 2,
                Padding::Valid => 0,
            };
            if h + 2 * pad < k || w + 2 * pad < k {
                return Err(Error::ImageTooSmall { height: input_shape.0, width: input_shape.1, min: k });
            }
            let (ch, cw) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
            let f = config.pools[i];
            if config.pool_mode == PoolMode::Exact && (ch % f != 0 || cw % f != 0) {
                return Err(Error::ShapeMismatch(format!(
                    "indivisible dimensions: stage {} sees {ch}x{cw}, pool factor {f}",
                    i + 1
                )));
            }
            if ch / f == 0 || cw / f == 0 {
                return Err(Error::ImageTooSmall { height: input_shape.0, width: input_shape.1, min: f });
            }
            stages.push(Stage { in_size: (h, w), conv_size: (ch, cw), pad });
            h = ch / f;
            w = cw / f;
        }
        let feature_shape = (h, w, *config.filters.last().expect("non-empty"));
        Ok(Self { config, input_shape, stages, feature_shape })
    }

    pub fn feature_shape(&self) -> (usize, usize, usize) {
        self.feature_shape
    }

    pub fn feature_len(&self) -> usize {
        let (h, w, f) = self.feature_shape;
        h * w * f
    }

    fn enc_conv(&self, i: usize) -> Conv2d {
        let cin = if i == 0 { self.input_shape.2 } else { self.config.filters[i - 1] };
        Conv2d::new(format!("encoder.conv{}", i + 1), self.config.kernel, cin, self.config.filters[i], self.stages[i].pad)
    }

    fn dec_deconv(&self, i: usize) -> ConvTranspose2d {
        let cout = if i == 0 { self.input_shape.2 } else { self.config.filters[i - 1] };
        ConvTranspose2d::new(
            format!("decoder.deconv{}", i + 1),
            self.config.kernel,
            self.config.filters[i],
            cout,
            self.stages[i].pad,
        )
    }

    fn mask_layers(&self) -> (Conv2d, Conv2d, Conv2d) {
        let f = self.feature_shape.2;
        let m = self.config.mask_hidden;
        let k = self.config.kernel;
        (
            Conv2d::new("mask.conv1", k, f, m, (k - 1) / 2),
            Conv2d::new("mask.conv2", k, m, m, (k - 1) / 2),
            Conv2d::new("mask.head", 1, m, f, 0),
        )
    }

    /// Fresh parameters for encoder, decoder and mask network.
    pub fn init(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        for i in 0..self.stages.len() {
            self.enc_conv(i).init(&mut p, &mut rng, true);
        }
        for i in 0..self.stages.len() {
            self.dec_deconv(i).init(&mut p, &mut rng, i > 0);
        }
        let (a, b, head) = self.mask_layers();
        a.init(&mut p, &mut rng, true);
        b.init(&mut p, &mut rng, true);
        head.init(&mut p, &mut rng, false);
        p
    }

    /// Encoder forward on an N×H×W×C batch.
    pub fn encode_batch(&self, p: &Params, x: &Array4<f64>) -> (Array4<f64>, EncodeCache) {
        let mut cache = EncodeCache { convs: Vec::new(), acts: Vec::new(), pools: Vec::new() };
        let mut h = x.clone();
        for (i, &f) in self.config.pools.iter().enumerate() {
            let (y, cc) = self.enc_conv(i).forward(p, &h);
            let a = relu(&y);
            let (pooled, pc) = MaxPool { factor: f }.forward(&a);
            cache.convs.push(cc);
            cache.acts.push(a);
            cache.pools.push(pc);
            h = pooled;
        }
        (h, cache)
    }

    /// Accumulates encoder gradients; returns the input gradient if asked.
    pub fn encode_backward(
        &self,
        p: &Params,
        cache: &EncodeCache,
        dz: &Array4<f64>,
        g: &mut Params,
        need_input: bool,
    ) -> Option<Array4<f64>> {
        let mut d = dz.clone();
        for i in (0..self.stages.len()).rev() {
            let da = MaxPool { factor: self.config.pools[i] }.backward(&cache.pools[i], &d);
            let dy = relu_backward(&cache.acts[i], &da);
            match self.enc_conv(i).backward(p, &cache.convs[i], &dy, g, i > 0 || need_input) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    /// Decoder forward; the output is not clipped.
    pub fn decode_batch(&self, p: &Params, z: &Array4<f64>) -> (Array4<f64>, DecodeCache) {
        let mut cache = DecodeCache { deconvs: Vec::new(), outs: Vec::new(), up_from: Vec::new() };
        let mut h = z.clone();
        for i in (0..self.stages.len()).rev() {
            let (_, hh, ww, _) = h.dim();
            let (th, tw) = self.stages[i].conv_size;
            let up = upsample_nearest(&h, th, tw);
            let (y, dc) = self.dec_deconv(i).forward(p, &up);
            let y = if i > 0 { relu(&y) } else { y };
            cache.up_from.push((hh, ww));
            cache.deconvs.push(dc);
            cache.outs.push(y.clone());
            h = y;
        }
        (h, cache)
    }

    pub fn decode_backward(
        &self,
        p: &Params,
        cache: &DecodeCache,
        dy: &Array4<f64>,
        g: &mut Params,
        need_input: bool,
    ) -> Option<Array4<f64>> {
        let n = self.stages.len();
        let mut d = dy.clone();
        // cache entry j belongs to encoder stage n-1-j
        for j in (0..n).rev() {
            let i = n - 1 - j;
            if i > 0 {
                d = relu_backward(&cache.outs[j], &d);
            }
            let last = j == 0;
            let du = self.dec_deconv(i).backward(p, &cache.deconvs[j], &d, g, !last || need_input)?;
            let (hh, ww) = cache.up_from[j];
            d = upsample_nearest_backward(&du, hh, ww);
        }
        Some(d)
    }

    /// Mask-net logits for a feature batch.
    pub fn mask_logits_batch(&self, p: &Params, z: &Array4<f64>) -> (Array4<f64>, MaskCache) {
        let (a, b, head) = self.mask_layers();
        let (y1, c1) = a.forward(p, z);
        let a1 = relu(&y1);
        let (y2, c2) = b.forward(p, &a1);
        let a2 = relu(&y2);
        let (logits, hc) = head.forward(p, &a2);
        let probs = logits.mapv(sigmoid);
        (logits, MaskCache { c1, a1, c2, a2, head: hc, probs })
    }

    /// Backward through the mask net given the gradient w.r.t. the sigmoid
    /// probabilities (the straight-through surrogate for the hard bits).
    /// Returns the gradient w.r.t. the input features when asked.
    pub fn mask_backward(
        &self,
        p: &Params,
        cache: &MaskCache,
        dprobs: &Array4<f64>,
        g: &mut Params,
        need_input: bool,
    ) -> Option<Array4<f64>> {
        let (a, b, head) = self.mask_layers();
        let dlogits = dprobs * &cache.probs.mapv(|s| s * (1.0 - s));
        let da2 = head.backward(p, &cache.head, &dlogits, g, true).expect("input grad");
        let dy2 = relu_backward(&cache.a2, &da2);
        let da1 = b.backward(p, &cache.c2, &dy2, g, true).expect("input grad");
        let dy1 = relu_backward(&cache.a1, &da1);
        a.backward(p, &cache.c1, &dy1, g, need_input)
    }
}

/// Hard threshold used by the mask.
pub fn binarize(probs: &Array4<f64>) -> Array4<f64> {
    probs.mapv(|s| if s >= 0.5 { 1.0 } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    /// h×w×F
    pub data: Array3<f64>,
    /// (H, W, C) of the encoded image.
    pub source_shape: (usize, usize, usize),
}

impl FeatureTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn batch(&self) -> Array4<f64> {
        self.data.clone().insert_axis(Axis(0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    /// h×w×F, entries in {0, 1}
    pub bits: Array3<u8>,
    pub retained_count: usize,
    /// Sigmoid probabilities, kept in train mode for the surrogate gradient.
    pub soft: Option<Array3<f64>>,
}

impl MaskMatrix {
    pub fn from_bits(bits: Array3<u8>) -> Self {
        let retained_count = bits.iter().filter(|&&b| b == 1).count();
        Self { bits, retained_count, soft: None }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Train,
    Eval,
}

fn check_image(image: &ImageSample, codec: &SemanticCodec) -> Result<()> {
    image.validate()?;
    if image.shape() != codec.input_shape {
        return Err(Error::ShapeMismatch(format!(
            "image is {:?}, codec expects {:?}",
            image.shape(),
            codec.input_shape
        )));
    }
    Ok(())
}

pub fn semantic_encode(image: &ImageSample, codec: &SemanticCodec, params: &Params) -> Result<FeatureTensor> {
    check_image(image, codec)?;
    let x = image.pixels.clone().insert_axis(Axis(0));
    let (z, _) = codec.encode_batch(params, &x);
    Ok(FeatureTensor { data: z.index_axis_move(Axis(0), 0), source_shape: image.shape() })
}

pub fn semantic_decode(features: &FeatureTensor, codec: &SemanticCodec, params: &Params) -> Result<ImageSample> {
    check_features(features, codec)?;
    let (y, _) = codec.decode_batch(params, &features.batch());
    let pixels = clip01(y.index_axis_move(Axis(0), 0));
    ImageSample::new_unchecked_size(pixels, "decoded")
}

fn check_features(features: &FeatureTensor, codec: &SemanticCodec) -> Result<()> {
    if features.shape() != codec.feature_shape() || features.source_shape != codec.input_shape {
        return Err(Error::ShapeMismatch(format!(
            "features {:?} from {:?}, codec expects {:?} from {:?}",
            features.shape(),
            features.source_shape,
            codec.feature_shape(),
            codec.input_shape
        )));
    }
    Ok(())
}

/// Applies the learned binary mask. Both modes produce the same hard mask;
/// train mode also keeps the sigmoid probabilities for the surrogate
/// gradient.
pub fn mask_features(
    features: &FeatureTensor,
    codec: &SemanticCodec,
    params: &Params,
    mode: MaskMode,
) -> Result<(FeatureTensor, MaskMatrix)> {
    check_features(features, codec)?;
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidImage("non-finite features".into()));
    }
    let (_, cache) = codec.mask_logits_batch(params, &features.batch());
    let probs = cache.probs.index_axis_move(Axis(0), 0);
    let bits = probs.mapv(|s| u8::from(s >= 0.5));
    let mut data = features.data.clone();
    ndarray::Zip::from(&mut data).and(&bits).for_each(|v, &b| {
        if b == 0 {
            *v = 0.0;
        }
    });
    let mut mask = MaskMatrix::from_bits(bits);
    if mode == MaskMode::Train {
        mask.soft = Some(probs);
    }
    Ok((FeatureTensor { data, source_shape: features.source_shape }, mask))
}

pub fn mask_ratio(mask: &MaskMatrix) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.retained_count as f64 / mask.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_relative_error, numerical_gradient};
    use rand::Rng;

    fn tiny() -> SemanticCodec {
        let cfg = CodecConfig { filters: vec![2, 3], mask_hidden: 2, ..CodecConfig::default() };
        SemanticCodec::new(cfg, (8, 8, 1)).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageSample {
        ImageSample::new(Array3::from_shape_simple_fn((h, w, c), || rng.random_range(0.0..1.0)), "r").unwrap()
    }

    fn with_small_biases(codec: &SemanticCodec, seed: u64) -> Params {
        let mut p = codec.init(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for (name, a) in p.iter_mut() {
            if name.ends_with(".bias") {
                a.mapv_inplace(|_| rng.random_range(-0.1..0.1));
            }
        }
        p
    }

    #[test]
    fn default_geometry_quarters_the_image() {
        let codec = SemanticCodec::new(CodecConfig::default(), (32, 32, 3)).unwrap();
        assert_eq!(codec.feature_shape(), (8, 8, 64));
        let err = SemanticCodec::new(CodecConfig::default(), (30, 32, 3)).unwrap_err();
        assert!(err.to_string().contains("indivisible"));
    }

    #[test]
    fn large_profile_gives_21632_features() {
        let codec = SemanticCodec::new(CodecConfig::large_profile(), (128, 128, 3)).unwrap();
        assert_eq!(codec.feature_shape(), (13, 13, 128));
        assert_eq!(codec.feature_len(), 21632);
    }

    #[test]
    fn zero_image_and_zero_biases_give_zeros() {
        let codec = SemanticCodec::new(CodecConfig::default(), (32, 32, 3)).unwrap();
        let p = codec.init(1);
        let img = ImageSample::zeros(32, 32, 3, "z");
        let f = semantic_encode(&img, &codec, &p).unwrap();
        assert_eq!(f.shape(), (8, 8, 64));
        assert!(f.data.iter().all(|v| *v == 0.0));
        let out = semantic_decode(&f, &codec, &p).unwrap();
        assert_eq!(out.shape(), (32, 32, 3));
        assert!(out.pixels.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decode_rejects_wrong_feature_shape() {
        let codec = tiny();
        let p = codec.init(0);
        let f = FeatureTensor { data: Array3::zeros((3, 3, 3)), source_shape: (8, 8, 1) };
        assert!(matches!(semantic_decode(&f, &codec, &p), Err(Error::ShapeMismatch(_))));
    }

    fn naive_conv(x: &Array3<f64>, w: &ndarray::ArrayD<f64>, b: &ndarray::ArrayD<f64>, pad: usize) -> Array3<f64> {
        let (h, wd, cin) = x.dim();
        let k = w.shape()[0];
        let cout = w.shape()[3];
        let (ho, wo) = (h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
        let mut y = Array3::zeros((ho, wo, cout));
        for oy in 0..ho {
            for ox in 0..wo {
                for co in 0..cout {
                    let mut s = b[[co]];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy as isize + ky as isize - pad as isize;
                            let ix = ox as isize + kx as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                s += x[[iy as usize, ix as usize, ci]] * w[[ky, kx, ci, co]];
                            }
                        }
                    }
                    y[[oy, ox, co]] = s;
                }
            }
        }
        y
    }

    fn naive_pool(x: &Array3<f64>, f: usize) -> Array3<f64> {
        let (h, w, c) = x.dim();
        Array3::from_shape_fn((h / f, w / f, c), |(y, xx, ch)| {
            let mut m = f64::NEG_INFINITY;
            for dy in 0..f {
                for dx in 0..f {
                    m = m.max(x[[y * f + dy, xx * f + dx, ch]]);
                }
            }
            m
        })
    }

    #[test]
    fn encoder_matches_direct_convolution_loop() {
        let codec = tiny();
        let p = with_small_biases(&codec, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 8, 8, 1);
        let got = semantic_encode(&img, &codec, &p).unwrap();
        let mut h = img.pixels.clone();
        for i in 1..=2 {
            let y = naive_conv(&h, p.get(&format!("encoder.conv{i}.weight")), p.get(&format!("encoder.conv{i}.bias")), 1);
            h = naive_pool(&y.mapv(|v| v.max(0.0)), 2);
        }
        assert_eq!(got.shape(), (2, 2, 3));
        for (a, b) in got.data.iter().zip(h.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_decode_are_deterministic() {
        let codec = tiny();
        let p = with_small_biases(&codec, 3);
        let img = random_image(&mut ChaCha8Rng::seed_from_u64(5), 8, 8, 1);
        let a = semantic_encode(&img, &codec, &p).unwrap();
        let b = semantic_encode(&img, &codec, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(semantic_decode(&a, &codec, &p).unwrap(), semantic_decode(&b, &codec, &p).unwrap());
    }

    fn set_mask_bias(codec: &SemanticCodec, p: &mut Params, v: f64) {
        p.get_mut("mask.head.weight").fill(0.0);
        p.get_mut("mask.head.bias").fill(v);
        let _ = codec;
    }

    #[test]
    fn saturated_mask_biases_keep_or_drop_everything() {
        let codec = tiny();
        let mut p = codec.init(4);
        let img = random_image(&mut ChaCha8Rng::seed_from_u64(6), 8, 8, 1);
        let f = semantic_encode(&img, &codec, &p).unwrap();
        set_mask_bias(&codec, &mut p, 50.0);
        let (m, mask) = mask_features(&f, &codec, &p, MaskMode::Eval).unwrap();
        assert_eq!(m, f);
        assert_eq!(mask_ratio(&mask), 1.0);
        set_mask_bias(&codec, &mut p, -50.0);
        let (m, mask) = mask_features(&f, &codec, &p, MaskMode::Eval).unwrap();
        assert!(m.data.iter().all(|v| *v == 0.0));
        assert_eq!(mask.retained_count, 0);
        assert_eq!(mask_ratio(&mask), 0.0);
    }

    #[test]
    fn logits_of_plus_minus_three_threshold_as_expected() {
        let codec = tiny();
        let mut p = codec.init(4);
        p.get_mut("mask.head.weight").fill(0.0);
        let bias = p.get_mut("mask.head.bias");
        bias[[0]] = -3.0;
        bias[[1]] = 3.0;
        bias[[2]] = 3.0;
        let f = FeatureTensor { data: Array3::from_elem((2, 2, 3), 0.7), source_shape: (8, 8, 1) };
        let (_, mask) = mask_features(&f, &codec, &p, MaskMode::Train).unwrap();
        let soft = mask.soft.unwrap();
        let lo = 1.0 / (1.0 + 3f64.exp());
        assert!((soft[[0, 0, 0]] - lo).abs() < 1e-12 && (lo - 0.0474).abs() < 1e-4);
        assert!((soft[[0, 0, 1]] - (1.0 - lo)).abs() < 1e-12 && (1.0 - lo - 0.9526).abs() < 1e-4);
        assert_eq!(mask.bits[[1, 1, 0]], 0);
        assert_eq!(mask.bits[[1, 1, 1]], 1);
    }

    #[test]
    fn ratio_of_large_profile_mask() {
        let mut bits = Array3::<u8>::zeros((13, 13, 128));
        bits.iter_mut().take(8960).for_each(|b| *b = 1);
        let m = MaskMatrix::from_bits(bits);
        assert!((mask_ratio(&m) - 0.4142).abs() < 1e-4);
    }

    #[test]
    fn autoencoder_gradients_match_finite_differences() {
        let codec = tiny();
        let p = with_small_biases(&codec, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img = random_image(&mut rng, 8, 8, 1);
        let x = img.pixels.clone().insert_axis(Axis(0));
        let loss = |q: &Params| {
            let (z, _) = codec.encode_batch(q, &x);
            let (y, _) = codec.decode_batch(q, &z);
            (&y - &x).mapv(|v| v * v).mean().unwrap()
        };
        let (z, ec) = codec.encode_batch(&p, &x);
        let (y, dc) = codec.decode_batch(&p, &z);
        let dy = (&y - &x) * (2.0 / y.len() as f64);
        let mut g = p.zeros_like();
        let dz = codec.decode_backward(&p, &dc, &dy, &mut g, true).unwrap();
        codec.encode_backward(&p, &ec, &dz, &mut g, false);
        let num = numerical_gradient(&p.subset("encoder."), 1e-4, |q| {
            let mut full = p.clone();
            full.extend(q);
            loss(&full)
        });
        assert!(max_relative_error(&g.subset("encoder."), &num) < 1e-3);
        let num = numerical_gradient(&p.subset("decoder."), 1e-4, |q| {
            let mut full = p.clone();
            full.extend(q);
            loss(&full)
        });
        assert!(max_relative_error(&g.subset("decoder."), &num) < 1e-3);
    }

    #[test]
    fn mask_net_gradients_match_finite_differences() {
        let codec = tiny();
        let p = with_small_biases(&codec, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let z = Array4::from_shape_simple_fn((2, 2, 2, 3), || rng.random_range(-1.0..1.0));
        let up = Array4::from_shape_simple_fn((2, 2, 2, 3), || rng.random_range(-1.0..1.0));
        let loss = |q: &Params| {
            let (_, c) = codec.mask_logits_batch(q, &z);
            (&c.probs * &up).sum()
        };
        let (_, c) = codec.mask_logits_batch(&p, &z);
        let mut g = p.zeros_like();
        codec.mask_backward(&p, &c, &up, &mut g, false);
        let num = numerical_gradient(&p.subset("mask."), 1e-5, |q| {
            let mut full = p.clone();
            full.extend(q);
            loss(&full)
        });
        assert!(max_relative_error(&g.subset("mask."), &num) < 1e-3);
    }

    proptest::proptest! {
        #[test]
        fn masking_zeroes_exactly_the_dropped_positions(seed in 0u64..200) {
            let codec = tiny();
            let p = with_small_biases(&codec, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = FeatureTensor {
                data: Array3::from_shape_simple_fn((2, 2, 3), || rng.random_range(-2.0..2.0)),
                source_shape: (8, 8, 1),
            };
            let (m, mask) = mask_features(&f, &codec, &p, MaskMode::Eval).unwrap();
            for ((a, b), bit) in m.data.iter().zip(f.data.iter()).zip(mask.bits.iter()) {
                if *bit == 0 {
                    proptest::prop_assert_eq!(*a, 0.0);
                } else {
                    proptest::prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            proptest::prop_assert_eq!(mask.retained_count, mask.bits.iter().filter(|&&b| b == 1).count());
            let (m2, mask2) = mask_features(&m, &codec, &p, MaskMode::Eval).unwrap();
            for ((a, b), bit) in m2.data.iter().zip(m.data.iter()).zip(mask2.bits.iter()) {
                if *bit == 1 {
                    proptest::prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
