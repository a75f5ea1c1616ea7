//! Inference paths built from trained checkpoints:
//! segment → integrate → encode → mask → channel → decode for LAM-SC, and
//! encode → channel → decode on the raw image for the baseline.

use std::path::Path;

use ndarray::Array3;

use crate::asi::{integrate, AttentionLayout, AttentionParams, SegmentStack};
use crate::channel::{channel_decode, channel_encode, transmit, ChannelConfig};
use crate::checkpoint::Checkpoint;
use crate::codec::{mask_features, semantic_decode, semantic_encode, FeatureTensor, MaskMatrix, MaskMode};
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::nn::Params;
use crate::skb::{segment, Backend, SegmentSet};
use crate::training::{ScLayout, ScModel};

pub const ASI_KIND: &str = "asi";
pub const SC_KIND: &str = "sc";

pub fn save_asi(path: &Path, params: &AttentionParams, config_digest: &str) -> Result<()> {
    let meta = serde_json::json!({ "layout": params.layout, "rng_seed": params.rng_seed });
    Checkpoint::new(ASI_KIND, config_digest, meta, params.params.clone()).save(path)
}

pub fn load_asi(path: &Path) -> Result<AttentionParams> {
    let c = Checkpoint::load_kind(path, ASI_KIND)?;
    let bad = |reason: String| Error::Checkpoint { path: path.to_owned(), reason };
    let layout: AttentionLayout =
        serde_json::from_value(c.meta["layout"].clone()).map_err(|e| bad(e.to_string()))?;
    let rng_seed = c.meta["rng_seed"].as_u64().ok_or_else(|| bad("missing rng_seed".into()))?;
    let p = AttentionParams { layout, params: c.params, rng_seed };
    p.validate().map_err(|e| bad(e.to_string()))?;
    Ok(p)
}

pub fn save_sc(path: &Path, model: &ScModel, params: &Params, config_digest: &str) -> Result<()> {
    let meta = serde_json::to_value(&model.layout)?;
    Checkpoint::new(SC_KIND, config_digest, meta, params.clone()).save(path)
}

pub fn load_sc(path: &Path) -> Result<(ScModel, Params)> {
    let c = Checkpoint::load_kind(path, SC_KIND)?;
    let bad = |reason: String| Error::Checkpoint { path: path.to_owned(), reason };
    let layout: ScLayout = serde_json::from_value(c.meta).map_err(|e| bad(e.to_string()))?;
    let model = ScModel::new(layout)?;
    model.check_params(&c.params).map_err(|e| bad(e.to_string()))?;
    Ok((model, c.params))
}

/// Segmentation and integration results for one image.
#[derive(Clone, Debug)]
pub struct StagedSource {
    pub segments: SegmentSet,
    pub semantic: ImageSample,
}

#[derive(Clone, Debug)]
pub struct Transmission {
    /// Encoder output before masking.
    pub features: FeatureTensor,
    pub mask: MaskMatrix,
    pub symbols: usize,
    pub recovered: ImageSample,
}

pub struct Pipeline {
    pub backend: Backend,
    pub k_max: usize,
    pub asi: AttentionParams,
    pub lamsc: (ScModel, Params),
    pub baseline: Option<(ScModel, Params)>,
}

impl Pipeline {
    /// Segments `image` and integrates the segments into the semantic-aware
    /// image.
    pub fn stage(&self, image: &ImageSample) -> Result<StagedSource> {
        let segments = segment(image, &self.backend, self.k_max).map_err(|e| e.at("segment"))?;
        let stack = SegmentStack::from_segments(&segments, self.k_max).map_err(|e| e.at("integrate"))?;
        let mut semantic = integrate(&stack, &self.asi).map_err(|e| e.at("integrate"))?;
        semantic.source_id = image.source_id.clone();
        Ok(StagedSource { segments, semantic })
    }

    /// LAM-SC transmission of a semantic-aware image. With `all_ones` the
    /// learned mask is bypassed and every feature is sent.
    pub fn transmit_lamsc(&self, semantic: &ImageSample, channel: &ChannelConfig, all_ones: bool) -> Result<Transmission> {
        let (model, params) = &self.lamsc;
        run(model, params, semantic, channel, !all_ones)
    }

    pub fn transmit_baseline(&self, image: &ImageSample, channel: &ChannelConfig) -> Result<Transmission> {
        let (model, params) = self
            .baseline
            .as_ref()
            .ok_or_else(|| Error::Config("no baseline checkpoint loaded".into()))?;
        run(model, params, image, channel, false)
    }
}

/// encode → (mask) → channel → decode for one image.
pub fn run(
    model: &ScModel,
    params: &Params,
    source: &ImageSample,
    channel: &ChannelConfig,
    use_mask: bool,
) -> Result<Transmission> {
    let features = semantic_encode(source, &model.codec, params).map_err(|e| e.at("encode"))?;
    let (sent, mask) = if use_mask {
        mask_features(&features, &model.codec, params, MaskMode::Eval).map_err(|e| e.at("mask"))?
    } else {
        let ones = Array3::<u8>::ones(features.data.dim());
        (features.clone(), MaskMatrix::from_bits(ones))
    };
    let symbols = channel_encode(&sent, &model.channel, params).map_err(|e| e.at("channel"))?;
    let received = transmit(&symbols, channel).map_err(|e| e.at("channel"))?;
    let decoded = channel_decode(&received, &model.channel, params, sent.shape(), sent.source_shape)
        .map_err(|e| e.at("channel"))?;
    let mut recovered = semantic_decode(&decoded, &model.codec, params).map_err(|e| e.at("decode"))?;
    recovered.source_id = source.source_id.clone();
    Ok(Transmission { features, mask, symbols: symbols.len(), recovered })
}
