//! A desk-scale unified multimodal model: one autoregressive transformer that
//! reads understanding features and text, and writes text or discrete image ids.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod infer;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod visual;

pub use config::{CodecConfig, ModelConfig, Scale};
pub use error::{Error, Result};
pub use model::{HeadOutputs, JanusModel, ModalitySequence};
pub use params::{GroupSet, ParamGroup};
pub use visual::{FeatureGrid, ImageBuffer};
