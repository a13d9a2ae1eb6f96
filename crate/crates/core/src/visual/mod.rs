//! Decoupled visual encoding: understanding encoder and VQ tokenizer.

mod codebook;
mod codecs;
mod features;
mod image;

pub use codebook::{nearest_code, CodeUsage, Quantized, VqCodebook};
pub use codecs::{VqLosses, VqSnapshot, VQ_BETA};
pub use features::FeatureGrid;
pub use image::ImageBuffer;
