//! Segmentation-guided semantic image communication simulator.

pub mod asi;
pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod skb;
pub mod training;

pub use error::{Error, Result};
