//! Architecture hyperparameters for the unified transformer and the two
//! visual codecs, with the toy preset used for desk-scale training and the
//! two published scales kept constructible.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::vocab::Vocab;

/// Named size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scale {
    #[serde(rename = "toy")]
    Toy,
    #[serde(rename = "paper-1b")]
    Paper1B,
    #[serde(rename = "paper-7b")]
    Paper7B,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(Scale::Toy),
            "paper-1b" => Ok(Scale::Paper1B),
            "paper-7b" => Ok(Scale::Paper7B),
            other => Err(Error::config(format!(
                "unknown scale `{other}` (expected toy, paper-1b or paper-7b)"
            ))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Toy => "toy",
            Scale::Paper1B => "paper-1b",
            Scale::Paper7B => "paper-7b",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Text tokens including the special tokens.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_window: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Number of image ids; width of the image head output.
    pub codebook_size: usize,
    pub adaptor_hidden_dim: usize,
    /// Hidden width of the gated feed-forward inside each block.
    pub ffn_dim: usize,
}

impl ModelConfig {
    /// Desk-scale preset. Width is what lets the fixed toy step budget learn
    /// compositional prompts; narrower models stall well short of it.
    pub fn toy() -> Self {
        Self {
            embed_dim: 384,
            n_heads: 8,
            adaptor_hidden_dim: 384,
            ffn_dim: 768,
            ..Self::compact()
        }
    }

    /// The toy layout at a sixth of the width, for fast tests.
    pub fn compact() -> Self {
        Self {
            vocab_size: Vocab::standard().len(),
            embed_dim: 64,
            context_window: 128,
            n_heads: 4,
            n_layers: 3,
            codebook_size: 64,
            adaptor_hidden_dim: 64,
            ffn_dim: 128,
        }
    }

    /// Configuration small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            vocab_size: Vocab::standard().len(),
            embed_dim: 16,
            context_window: 32,
            n_heads: 2,
            n_layers: 2,
            codebook_size: 16,
            adaptor_hidden_dim: 16,
            ffn_dim: 24,
        }
    }

    pub fn paper_1b() -> Self {
        Self {
            vocab_size: 100_000,
            embed_dim: 2048,
            context_window: 4096,
            n_heads: 16,
            n_layers: 24,
            codebook_size: 16_384,
            adaptor_hidden_dim: 2048,
            ffn_dim: 5504,
        }
    }

    pub fn paper_7b() -> Self {
        Self {
            vocab_size: 100_000,
            embed_dim: 4096,
            context_window: 4096,
            n_heads: 32,
            n_layers: 30,
            codebook_size: 16_384,
            adaptor_hidden_dim: 4096,
            ffn_dim: 11_008,
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Toy => Self::toy(),
            Scale::Paper1B => Self::paper_1b(),
            Scale::Paper7B => Self::paper_7b(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("context_window", self.context_window),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("codebook_size", self.codebook_size),
            ("adaptor_hidden_dim", self.adaptor_hidden_dim),
            ("ffn_dim", self.ffn_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

/// Geometry of both visual codecs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// Canonical square image side `S` in pixels.
    pub image_side: usize,
    /// Pixels per latent cell per side for the generation tokenizer.
    pub downsample_factor: usize,
    /// Patch side of the understanding encoder.
    pub patch_size: usize,
    /// Width `D` of each codebook vector.
    pub code_dim: usize,
    /// Width of understanding features.
    pub und_feat_dim: usize,
    pub und_heads: usize,
    /// Hidden width of the tokenizer's per-cell encoder/decoder.
    pub vq_hidden_dim: usize,
}

impl CodecConfig {
    /// Desk-scale geometry: 48-pixel images on a 16-pixel grid, so one latent
    /// cell covers exactly one cell of the 3×3 scene layout.
    pub fn toy() -> Self {
        Self {
            image_side: 48,
            downsample_factor: 16,
            patch_size: 16,
            code_dim: 16,
            und_feat_dim: 32,
            und_heads: 2,
            vq_hidden_dim: 128,
        }
    }

    pub fn tiny() -> Self {
        Self {
            image_side: 16,
            downsample_factor: 8,
            patch_size: 8,
            code_dim: 8,
            und_feat_dim: 8,
            und_heads: 2,
            vq_hidden_dim: 16,
        }
    }

    pub fn paper() -> Self {
        Self {
            image_side: 384,
            downsample_factor: 16,
            patch_size: 16,
            code_dim: 8,
            und_feat_dim: 1024,
            und_heads: 16,
            vq_hidden_dim: 1024,
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Toy => Self::toy(),
            Scale::Paper1B | Scale::Paper7B => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("image_side", self.image_side),
            ("downsample_factor", self.downsample_factor),
            ("patch_size", self.patch_size),
            ("code_dim", self.code_dim),
            ("und_feat_dim", self.und_feat_dim),
            ("und_heads", self.und_heads),
            ("vq_hidden_dim", self.vq_hidden_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !self.image_side.is_multiple_of(self.downsample_factor) {
            return Err(Error::config(format!(
                "image_side {} not divisible by downsample_factor {}",
                self.image_side, self.downsample_factor
            )));
        }
        if !self.image_side.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "image_side {} not divisible by patch_size {}",
                self.image_side, self.patch_size
            )));
        }
        if !self.und_feat_dim.is_multiple_of(self.und_heads) {
            return Err(Error::config("und_feat_dim not divisible by und_heads"));
        }
        Ok(())
    }

    /// Side of the latent grid, `S / f`.
    pub fn latent_side(&self) -> usize {
        self.image_side / self.downsample_factor
    }

    /// Image ids per image, `(S / f)²`.
    pub fn tokens_per_image(&self) -> usize {
        self.latent_side() * self.latent_side()
    }

    /// Side of the understanding feature grid, `S / patch`.
    pub fn und_grid_side(&self) -> usize {
        self.image_side / self.patch_size
    }

    pub fn und_positions(&self) -> usize {
        self.und_grid_side() * self.und_grid_side()
    }

    pub fn vq_patch_len(&self) -> usize {
        self.downsample_factor * self.downsample_factor * 3
    }

    pub fn und_patch_len(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for s in [Scale::Toy, Scale::Paper1B, Scale::Paper7B] {
            ModelConfig::for_scale(s).validate().unwrap();
            CodecConfig::for_scale(s).validate().unwrap();
        }
        ModelConfig::tiny().validate().unwrap();
        CodecConfig::tiny().validate().unwrap();
    }

    #[test]
    fn published_architecture_values() {
        let a = ModelConfig::paper_1b();
        assert_eq!((a.vocab_size, a.embed_dim, a.context_window, a.n_heads, a.n_layers), (100_000, 2048, 4096, 16, 24));
        let b = ModelConfig::paper_7b();
        assert_eq!((b.vocab_size, b.embed_dim, b.context_window, b.n_heads, b.n_layers), (100_000, 4096, 4096, 32, 30));
        assert_eq!(a.codebook_size, 16_384);
    }

    #[test]
    fn grid_arithmetic() {
        let p = CodecConfig::paper();
        assert_eq!(p.und_grid_side(), 24);
        assert_eq!(p.tokens_per_image(), 576);
        let small = CodecConfig {
            image_side: 32,
            downsample_factor: 8,
            patch_size: 8,
            ..CodecConfig::toy()
        };
        small.validate().unwrap();
        assert_eq!(small.und_grid_side(), 4);
        assert_eq!(small.tokens_per_image(), 16);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut m = ModelConfig::toy();
        m.n_heads = 5;
        assert!(matches!(m.validate(), Err(Error::Config(_))));
        m = ModelConfig::toy();
        m.n_layers = 0;
        assert!(m.validate().is_err());
        let c = CodecConfig {
            image_side: 40,
            ..CodecConfig::toy()
        };
        assert!(c.validate().is_err());
        assert!("huge".parse::<Scale>().is_err());
        assert_eq!("paper-7B".parse::<Scale>().unwrap(), Scale::Paper7B);
    }
}
