//! Run configuration: a single TOML file with a fixed schema.
//!
//! Unknown keys are rejected at every level. `LAMSC_DATASET_DIR` overrides
//! `dataset_dir`; command-line flags may override scalar fields after load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asi::AsiHyper;
use crate::channel::{ChannelConfig, ChannelKind};
use crate::codec::{CodecConfig, SemanticCodec};
use crate::dataset::synth::DEFAULT_INTEREST;
use crate::error::{Error, Result};
use crate::skb::DEFAULT_ORACLE_TOLERANCE;
use crate::training::TrainConfig;

pub const DATASET_ENV: &str = "LAMSC_DATASET_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Trivial,
    Oracle,
    Adapter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Executable for the adapter backend.
    pub command: Option<PathBuf>,
    pub args: Vec<String>,
    /// Per-pixel colour tolerance of the oracle backend.
    pub oracle_tolerance: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { kind: BackendKind::Oracle, command: None, args: Vec::new(), oracle_tolerance: DEFAULT_ORACLE_TOLERANCE }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub snr_list: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { snr_list: vec![0.0, 5.0, 10.0, 15.0, 20.0], seeds: vec![0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    /// (height, width); both must be divisible by 4.
    pub image_size: (usize, usize),
    pub backend: BackendConfig,
    pub k_max: usize,
    /// Class labels the synthetic experience oracle selects.
    pub interest: Vec<String>,
    pub channel: ChannelConfig,
    pub train: TrainConfig,
    pub asi: AsiHyper,
    pub codec: CodecConfig,
    pub channel_hidden: usize,
    pub mine_hidden: usize,
    pub bits_per_element: u64,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Leading images of the sorted stem list used for training.
    pub train_images: usize,
    /// Images after the training split used for evaluation.
    pub test_images: usize,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_dir: PathBuf::from("data"),
            image_size: (32, 32),
            backend: BackendConfig::default(),
            k_max: 4,
            interest: DEFAULT_INTEREST.iter().map(|s| s.to_string()).collect(),
            channel: ChannelConfig { kind: ChannelKind::Awgn, snr_db: 20.0, seed: 0 },
            train: TrainConfig::default(),
            asi: AsiHyper::default(),
            codec: CodecConfig::default(),
            channel_hidden: 128,
            mine_hidden: 64,
            bits_per_element: 8,
            output_dir: PathBuf::from("runs"),
            seed: 0,
            train_images: 200,
            test_images: 20,
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text without touching the filesystem.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` and applies the dataset environment override without
    /// validating, so callers can apply further overrides first.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = std::env::var_os(DATASET_ENV) {
            cfg.dataset_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    /// [`RunConfig::read`] followed by [`RunConfig::validate`].
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::read(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks internal consistency and that referenced paths exist.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        if self.backend.kind != BackendKind::Trivial && !self.dataset_dir.is_dir() {
            return Err(Error::Config(format!("dataset_dir {} does not exist", self.dataset_dir.display())));
        }
        if let (BackendKind::Adapter, Some(cmd)) = (self.backend.kind, &self.backend.command) {
            if cmd.components().count() > 1 && !cmd.exists() {
                return Err(Error::Config(format!("adapter command {} does not exist", cmd.display())));
            }
        }
        Ok(())
    }

    /// Validation that does not depend on the filesystem.
    pub fn validate_values(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!("image_size {h}x{w} must be positive and divisible by 4")));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if self.backend.kind == BackendKind::Adapter && self.backend.command.is_none() {
            return Err(Error::Config("adapter backend needs backend.command".into()));
        }
        if self.bits_per_element == 0 {
            return Err(Error::Config("bits_per_element must be positive".into()));
        }
        if self.channel_hidden == 0 || self.mine_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.train_images == 0 {
            return Err(Error::Config("train_images must be positive".into()));
        }
        if self.asi.epochs == 0 || self.asi.batch == 0 || !(self.asi.lr >= 0.0) {
            return Err(Error::Config("asi hyperparameters must be positive".into()));
        }
        if self.eval.snr_list.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("snr_list contains NaN".into()));
        }
        self.channel.validate()?;
        self.train.validate()?;
        self.codec.validate()?;
        SemanticCodec::new(self.codec.clone(), (h, w, 3))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        cfg.validate_values().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nepochz = 3").is_err());
        assert!(RunConfig::from_toml("[codec]\nfilter = [1]").is_err());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[train]\nepochs = 2").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch, TrainConfig::default().batch);
        assert_ne!(cfg.digest(), RunConfig::default().digest());
    }

    #[test]
    fn size_must_be_divisible_by_four() {
        let cfg = RunConfig { image_size: (30, 32), ..RunConfig::default() };
        assert!(matches!(cfg.validate_values(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_dataset_dir_is_reported() {
        let cfg = RunConfig { dataset_dir: "/definitely/not/here".into(), ..RunConfig::default() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("/definitely/not/here"), "{err}");
    }
}
