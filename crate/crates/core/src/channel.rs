//! Channel codec, physical-channel simulation and a neural mutual-information
//! lower bound.
//!
//! The channel encoder and decoder are two-layer MLPs applied at every
//! feature position (F -> hidden -> F), so the symbol count equals the
//! feature element count h·w·F. Each encoded vector is scaled to unit average
//! power before it crosses the channel.

use ndarray::{Array1, Array2, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Adam, Dense, Params};

/// Normalization refuses vectors whose mean power is below this.
const MIN_POWER: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolVector {
    pub symbols: Vec<f64>,
}

impl SymbolVector {
    pub fn new(symbols: Vec<f64>) -> Self {
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Mean of squared symbols.
    pub fn power(&self) -> f64 {
        mean_power(&self.symbols)
    }
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            other => Err(Error::UnknownChannel(other.to_owned())),
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        })
    }
}

/// `snr_db = inf` gives a noiseless channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::Config(format!("snr_db must be a number or +inf, got {}", self.snr_db)));
        }
        Ok(())
    }
}

/// Noise variance for a given SNR (dB) and signal power.
pub fn noise_variance(snr_db: f64, signal_power: f64) -> Result<f64> {
    if signal_power <= 0.0 || signal_power.is_nan() {
        return Err(Error::NonPositivePower(signal_power));
    }
    Ok(signal_power / 10f64.powf(snr_db / 10.0))
}

/// Scales `x` to unit mean power; returns the scale factor applied (1/rms).
pub fn normalize_power(x: &mut [f64]) -> Result<f64> {
    let p = mean_power(x);
    if p < MIN_POWER || !p.is_finite() {
        return Err(Error::DegenerateSymbols);
    }
    let s = 1.0 / p.sqrt();
    x.iter_mut().for_each(|v| *v *= s);
    Ok(s)
}

/// Gradient through [`normalize_power`]: given the normalized output `x`, the
/// scale `s` and upstream `dx`, returns the gradient w.r.t. the raw input.
pub fn normalize_power_backward(x: &[f64], s: f64, dx: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let proj: f64 = x.iter().zip(dx).map(|(a, b)| a * b).sum::<f64>() / n;
    x.iter().zip(dx).map(|(xi, gi)| s * (gi - xi * proj)).collect()
}

/// Draws a Rayleigh amplitude with unit mean-square gain.
fn rayleigh_gain<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let re: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
    let im: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
    (re * re + im * im).sqrt()
}

/// Passes `x` through the channel in place with noise drawn from `rng`.
/// Rayleigh fading is one gain per call, equalized with perfect channel
/// knowledge, so `y = x + n / h`. Returns the gain (1 for AWGN).
pub fn transmit_in_place<R: Rng + ?Sized>(
    x: &mut [f64],
    kind: ChannelKind,
    snr_db: f64,
    rng: &mut R,
) -> Result<f64> {
    let power = mean_power(x);
    let var = if power > 0.0 { noise_variance(snr_db, power)? } else { 0.0 };
    let h = match kind {
        ChannelKind::Awgn => 1.0,
        ChannelKind::Rayleigh => rayleigh_gain(rng).max(1e-12),
    };
    if var > 0.0 {
        let dist = Normal::new(0.0, var.sqrt()).expect("finite variance");
        for v in x.iter_mut() {
            *v += dist.sample(rng) / h;
        }
    }
    Ok(h)
}

/// Transmits a symbol vector with the channel's own seed.
pub fn transmit(symbols: &SymbolVector, config: &ChannelConfig) -> Result<SymbolVector> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut y = symbols.symbols.clone();
    transmit_in_place(&mut y, config.kind, config.snr_db, &mut rng)?;
    Ok(SymbolVector { symbols: y })
}

/// Position-wise channel encoder/decoder layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCodec {
    /// Features per position (F).
    pub features: usize,
    pub hidden: usize,
}

pub struct MlpCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
}

impl ChannelCodec {
    pub fn new(features: usize, hidden: usize) -> Self {
        Self { features, hidden }
    }

    fn layers(&self, side: &str) -> (Dense, Dense) {
        (
            Dense::new(format!("channel.{side}.fc1"), self.features, self.hidden),
            Dense::new(format!("channel.{side}.fc2"), self.hidden, self.features),
        )
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params, rng: &mut R) {
        for side in ["enc", "dec"] {
            let (a, b) = self.layers(side);
            a.init(params, rng, true);
            b.init(params, rng, false);
        }
    }

    fn mlp(&self, side: &str, p: &Params, x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let (a, b) = self.layers(side);
        let hidden = relu(&a.forward(p, &x));
        let y = b.forward(p, &hidden);
        (y, MlpCache { input: x, hidden })
    }

    fn mlp_backward(&self, side: &str, p: &Params, c: &MlpCache, dy: &Array2<f64>, g: &mut Params) -> Array2<f64> {
        let (a, b) = self.layers(side);
        let dh = b.backward(p, &c.hidden, dy, g, true).expect("input grad");
        let dh = relu_backward(&c.hidden, &dh);
        a.backward(p, &c.input, &dh, g, true).expect("input grad")
    }

    fn to_rows(&self, z: &Array4<f64>) -> Array2<f64> {
        let (n, h, w, f) = z.dim();
        assert_eq!(f, self.features, "channel codec feature width");
        z.as_standard_layout().into_owned().into_shape_with_order((n * h * w, f)).expect("rows")
    }

    /// Raw (unnormalized) encoder output for a feature batch, as N×(h·w·F).
    pub fn encode_raw(&self, p: &Params, z: &Array4<f64>) -> (Array2<f64>, MlpCache) {
        let (n, h, w, f) = z.dim();
        let (y, c) = self.mlp("enc", p, self.to_rows(z));
        (y.into_shape_with_order((n, h * w * f)).expect("flatten"), c)
    }

    pub fn encode_backward(&self, p: &Params, c: &MlpCache, dy: &Array2<f64>, dims: (usize, usize, usize, usize), g: &mut Params) -> Array4<f64> {
        let (n, h, w, f) = dims;
        let dy = dy.to_owned().into_shape_with_order((n * h * w, f)).expect("rows");
        self.mlp_backward("enc", p, c, &dy, g).into_shape_with_order(dims).expect("features")
    }

    /// Decodes an N×(h·w·F) symbol batch into features of shape `dims`.
    pub fn decode(&self, p: &Params, y: &Array2<f64>, dims: (usize, usize, usize, usize)) -> (Array4<f64>, MlpCache) {
        let (n, h, w, f) = dims;
        let rows = y.to_owned().into_shape_with_order((n * h * w, f)).expect("rows");
        let (z, c) = self.mlp("dec", p, rows);
        (z.into_shape_with_order(dims).expect("features"), c)
    }

    pub fn decode_backward(&self, p: &Params, c: &MlpCache, dz: &Array4<f64>, g: &mut Params) -> Array2<f64> {
        let (n, h, w, f) = dz.dim();
        let d = self.mlp_backward("dec", p, c, &self.to_rows(dz), g);
        d.into_shape_with_order((n, h * w * f)).expect("flatten")
    }
}

/// Flattens `features` (h×w×F), runs the channel encoder and normalizes.
pub fn channel_encode(
    features: &crate::codec::FeatureTensor,
    codec: &ChannelCodec,
    params: &Params,
) -> Result<SymbolVector> {
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidImage("non-finite features".into()));
    }
    let (h, w, f) = features.data.dim();
    if f != codec.features {
        return Err(Error::ShapeMismatch(format!("features have F={f}, channel codec expects {}", codec.features)));
    }
    let batch = features.data.clone().into_shape_with_order((1, h, w, f)).expect("batch of one");
    let (raw, _) = codec.encode_raw(params, &batch);
    let mut symbols = raw.into_raw_vec_and_offset().0;
    normalize_power(&mut symbols)?;
    Ok(SymbolVector { symbols })
}

/// Decodes received symbols back to an h×w×F feature tensor.
pub fn channel_decode(
    symbols: &SymbolVector,
    codec: &ChannelCodec,
    params: &Params,
    feature_shape: (usize, usize, usize),
    source_shape: (usize, usize, usize),
) -> Result<crate::codec::FeatureTensor> {
    let (h, w, f) = feature_shape;
    if symbols.len() != h * w * f || f != codec.features {
        return Err(Error::ShapeMismatch(format!(
            "{} symbols cannot decode to {h}x{w}x{f}",
            symbols.len()
        )));
    }
    let y = Array2::from_shape_vec((1, h * w * f), symbols.symbols.clone()).expect("row");
    let (z, _) = codec.decode(params, &y, (1, h, w, f));
    let data = z.into_shape_with_order((h, w, f)).expect("features");
    Ok(crate::codec::FeatureTensor { data, source_shape })
}

/// Statistics network T(x, y) for the Donsker–Varadhan bound on scalar pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiEstimator {
    pub hidden: usize,
}

impl Default for MiEstimator {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MiConfig {
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Full-sample bound is recorded every this many steps.
    pub eval_every: usize,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch: 256, seed: 0, eval_every: 100 }
    }
}

#[derive(Clone, Debug)]
pub struct MiEstimate {
    pub bound: f64,
    /// (step, full-sample bound)
    pub trace: Vec<(usize, f64)>,
    pub params: Params,
}

/// Value and gradients of the bound on one set of pairs.
pub struct BoundEval {
    pub bound: f64,
    pub grads: Params,
    /// d bound / d x_i and d bound / d y_i for the supplied pairs.
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl MiEstimator {
    fn layers(&self) -> (Dense, Dense) {
        (Dense::new("mine.fc1", 2, self.hidden), Dense::new("mine.fc2", self.hidden, 1))
    }

    pub fn init(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let (a, b) = self.layers();
        a.init(&mut p, &mut rng, true);
        b.init(&mut p, &mut rng, false);
        p
    }

    fn net(&self, p: &Params, xy: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        let (a, b) = self.layers();
        let h = relu(&a.forward(p, xy));
        let t = b.forward(p, &h).column(0).to_owned();
        (t, h)
    }

    fn net_backward(&self, p: &Params, xy: &Array2<f64>, h: &Array2<f64>, dt: &Array1<f64>, g: &mut Params) -> Array2<f64> {
        let (a, b) = self.layers();
        let dt = dt.clone().insert_axis(ndarray::Axis(1));
        let dh = b.backward(p, h, &dt, g, true).expect("input grad");
        let dh = relu_backward(h, &dh);
        a.backward(p, xy, &dh, g, true).expect("input grad")
    }

    /// Bound value only: mean T on joint pairs minus log-mean-exp T on the
    /// pairs (x_i, y_perm[i]).
    pub fn bound(&self, p: &Params, x: &[f64], y: &[f64], perm: &[usize]) -> f64 {
        let joint = pairs(x, y, None);
        let marg = pairs(x, y, Some(perm));
        let (tj, _) = self.net(p, &joint);
        let (tm, _) = self.net(p, &marg);
        tj.mean().unwrap_or(0.0) - log_mean_exp(&tm)
    }

    /// Bound with gradients w.r.t. the network parameters and the samples.
    pub fn bound_and_grad(&self, p: &Params, x: &[f64], y: &[f64], perm: &[usize]) -> BoundEval {
        let n = x.len();
        let joint = pairs(x, y, None);
        let marg = pairs(x, y, Some(perm));
        let (tj, hj) = self.net(p, &joint);
        let (tm, hm) = self.net(p, &marg);
        let bound = tj.mean().unwrap_or(0.0) - log_mean_exp(&tm);
        let mut grads = p.zeros_like();
        let dtj = Array1::from_elem(n, 1.0 / n as f64);
        let mx = tm.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e = tm.mapv(|t| (t - mx).exp());
        let dtm = -&e / e.sum();
        let dj = self.net_backward(p, &joint, &hj, &dtj, &mut grads);
        let dm = self.net_backward(p, &marg, &hm, &dtm, &mut grads);
        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; n];
        for i in 0..n {
            dx[i] += dj[[i, 0]] + dm[[i, 0]];
            dy[i] += dj[[i, 1]];
            dy[perm[i]] += dm[[i, 1]];
        }
        BoundEval { bound, grads, dx, dy }
    }
}

fn pairs(x: &[f64], y: &[f64], perm: Option<&[usize]>) -> Array2<f64> {
    Array2::from_shape_fn((x.len(), 2), |(i, j)| match (j, perm) {
        (0, _) => x[i],
        (_, None) => y[i],
        (_, Some(p)) => y[p[i]],
    })
}

fn log_mean_exp(t: &Array1<f64>) -> f64 {
    let mx = t.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    mx + (t.mapv(|v| (v - mx).exp()).sum() / t.len() as f64).ln()
}

/// Maximizes the Donsker–Varadhan bound on (x, y) for `steps` minibatch
/// updates and returns the bound on the full sample.
pub fn estimate_mi(
    x: &[f64],
    y: &[f64],
    estimator: &MiEstimator,
    params: &Params,
    steps: usize,
    cfg: &MiConfig,
) -> Result<MiEstimate> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("x has {} samples, y has {}", x.len(), y.len())));
    }
    if x.len() < 64 {
        return Err(Error::ShapeMismatch(format!("need at least 64 samples, got {}", x.len())));
    }
    let n = x.len();
    let batch = cfg.batch.clamp(2, n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = params.clone();
    let mut opt = Adam::new(&p, cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut trace = Vec::new();
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let full_bound = |p: &Params, rng: &mut ChaCha8Rng| -> f64 {
        let mut total = 0.0;
        for _ in 0..4 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            total += estimator.bound(p, x, y, &perm);
        }
        total / 4.0
    };
    for step in 1..=steps {
        if cursor + batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let bx: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let mut perm: Vec<usize> = (0..batch).collect();
        perm.shuffle(&mut rng);
        let ev = estimator.bound_and_grad(&p, &bx, &by, &perm);
        if !ev.bound.is_finite() {
            return Err(Error::NonFiniteBound { step });
        }
        let mut ascent = ev.grads;
        for (_, a) in ascent.iter_mut() {
            a.mapv_inplace(|v| -v);
        }
        opt.step(&mut p, &ascent);
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            let b = full_bound(&p, &mut eval_rng);
            if !b.is_finite() {
                return Err(Error::NonFiniteBound { step });
            }
            trace.push((step, b));
        }
    }
    let bound = full_bound(&p, &mut eval_rng);
    if !bound.is_finite() {
        return Err(Error::NonFiniteBound { step: steps });
    }
    Ok(MiEstimate { bound, trace, params: p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::FeatureTensor;
    use crate::nn::gradcheck::numerical_gradient;
    use ndarray::{arr1, Array3, ArrayD, IxDyn};

    #[test]
    fn noise_variance_examples() {
        assert_eq!(noise_variance(0.0, 1.0).unwrap(), 1.0);
        assert!((noise_variance(10.0, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((noise_variance(20.0, 2.0).unwrap() - 0.02).abs() < 1e-15);
        assert!(matches!(noise_variance(3.0, 0.0), Err(Error::NonPositivePower(_))));
        assert_eq!(noise_variance(f64::INFINITY, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn unknown_channel_kind_is_rejected() {
        assert!(matches!("rician".parse::<ChannelKind>(), Err(Error::UnknownChannel(_))));
        assert_eq!("AWGN".parse::<ChannelKind>().unwrap(), ChannelKind::Awgn);
    }

    #[test]
    fn noiseless_channels_are_identity() {
        let x = SymbolVector::new((0..100).map(|i| ((i as f64) * 0.37).sin()).collect());
        for kind in [ChannelKind::Awgn, ChannelKind::Rayleigh] {
            let cfg = ChannelConfig { kind, snr_db: f64::INFINITY, seed: 3 };
            assert_eq!(transmit(&x, &cfg).unwrap(), x);
        }
    }

    #[test]
    fn transmit_is_reproducible_and_keeps_length() {
        let x = SymbolVector::new(vec![1.0, -1.0, 1.0, -1.0]);
        let cfg = ChannelConfig { kind: ChannelKind::Rayleigh, snr_db: 5.0, seed: 9 };
        let a = transmit(&x, &cfg).unwrap();
        let b = transmit(&x, &cfg).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(
            a.symbols.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.symbols.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn normalization_backward_matches_finite_differences() {
        let raw = vec![0.3, -1.2, 0.7, 2.0, -0.1];
        let up = vec![0.5, 0.1, -0.4, 0.2, 0.9];
        let f = |r: &[f64]| {
            let mut v = r.to_vec();
            normalize_power(&mut v).unwrap();
            v.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut x = raw.clone();
        let s = normalize_power(&mut x).unwrap();
        let g = normalize_power_backward(&x, s, &up);
        for i in 0..raw.len() {
            let mut a = raw.clone();
            let mut b = raw.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let num = (f(&a) - f(&b)) / 2e-6;
            assert!((num - g[i]).abs() < 1e-7);
        }
    }

    fn hand_codec() -> (ChannelCodec, Params) {
        // F = 2, hidden = 2, enc fc1 = identity, fc2 = [[1, 2], [0, 1]]
        let codec = ChannelCodec::new(2, 2);
        let mut p = Params::new();
        codec.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        p.insert("channel.enc.fc1.weight", ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        p.insert("channel.enc.fc1.bias", arr1(&[0.0, 0.5]).into_dyn());
        p.insert("channel.enc.fc2.weight", ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 2.0, 0.0, 1.0]).unwrap());
        p.insert("channel.enc.fc2.bias", arr1(&[0.1, -0.1]).into_dyn());
        (codec, p)
    }

    #[test]
    fn channel_encode_matches_manual_affine_arithmetic() {
        let (codec, p) = hand_codec();
        // 1×2 positions × F=2 -> 4 inputs
        let feats = FeatureTensor {
            data: Array3::from_shape_vec((1, 2, 2), vec![1.0, -1.0, 0.5, 2.0]).unwrap(),
            source_shape: (4, 8, 3),
        };
        let out = channel_encode(&feats, &codec, &p).unwrap();
        // position 0: h = relu([1, -0.5]) = [1, 0]; y = [1*1 + 0*0 + 0.1, 1*2 + 0*1 - 0.1] = [1.1, 1.9]
        // position 1: h = relu([0.5, 2.5]) = [0.5, 2.5]; y = [0.5 + 0.1, 1.0 + 2.5 - 0.1] = [0.6, 3.4]
        let raw = [1.1, 1.9, 0.6, 3.4];
        let rms = (raw.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        for (a, b) in out.symbols.iter().zip(raw) {
            assert!((a - b / rms).abs() < 1e-12);
        }
        assert!((out.power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_input_with_zero_biases_cannot_be_normalized() {
        let codec = ChannelCodec::new(4, 8);
        let mut p = Params::new();
        codec.init(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
        let feats = FeatureTensor { data: Array3::zeros((2, 2, 4)), source_shape: (8, 8, 3) };
        assert!(matches!(channel_encode(&feats, &codec, &p), Err(Error::DegenerateSymbols)));
        let y = SymbolVector::new(vec![0.0; 16]);
        let z = channel_decode(&y, &codec, &p, (2, 2, 4), (8, 8, 3)).unwrap();
        assert!(z.data.iter().all(|v| *v == 0.0));
        assert!(channel_decode(&SymbolVector::new(vec![0.0; 15]), &codec, &p, (2, 2, 4), (8, 8, 3)).is_err());
    }

    #[test]
    fn mine_gradients_match_finite_differences() {
        let est = MiEstimator { hidden: 8 };
        let p = est.init(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut rng);
        let ev = est.bound_and_grad(&p, &x, &y, &perm);
        let num = numerical_gradient(&p, 1e-5, |q| est.bound(q, &x, &y, &perm));
        // The bound is invariant to a constant shift of T, so the output bias
        // gradient is zero and only an absolute check is meaningful there.
        for (name, err) in crate::nn::gradcheck::relative_errors(&ev.grads, &num) {
            if name == "mine.fc2.bias" {
                assert!(ev.grads.get(&name).iter().all(|v| v.abs() < 1e-12));
                assert!(num.get(&name).iter().all(|v| v.abs() < 1e-8));
            } else {
                assert!(err < 1e-4, "{name}: {err}");
            }
        }
        for i in 0..16 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let nd = (est.bound(&p, &xp, &y, &perm) - est.bound(&p, &xm, &y, &perm)) / 2e-6;
            assert!((nd - ev.dx[i]).abs() < 1e-6, "dx[{i}]");
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += 1e-6;
            ym[i] -= 1e-6;
            let nd = (est.bound(&p, &x, &yp, &perm) - est.bound(&p, &x, &ym, &perm)) / 2e-6;
            assert!((nd - ev.dy[i]).abs() < 1e-6, "dy[{i}]");
        }
    }

    #[test]
    fn estimator_needs_enough_samples() {
        let est = MiEstimator::default();
        let x = vec![0.0; 10];
        assert!(estimate_mi(&x, &x, &est, &est.init(0), 1, &MiConfig::default()).is_err());
    }
}
