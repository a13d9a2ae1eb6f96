//! Autoregressive decoding for both directions: caption to image ids, image plus question to text.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::preprocess::preprocess_understanding;
use crate::error::{Error, Result};
use crate::model::vocab::{BOI, BOS, EOI, EOS};
use crate::model::{JanusModel, ModalitySequence, SequenceBuilder, Visual, Vocab};
use crate::visual::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_k: usize,
    /// Classifier-free guidance scale; 1 disables the unconditional branch.
    pub cfg_scale: f64,
    pub max_text_tokens: usize,
    pub seed: u64,
}

impl SamplerConfig {
    /// Plain sampling from the full image distribution.
    pub fn generation(codebook_size: usize) -> Self {
        Self {
            temperature: 1.0,
            top_k: codebook_size,
            cfg_scale: 1.0,
            max_text_tokens: 24,
            seed: 0,
        }
    }

    pub fn greedy() -> Self {
        Self {
            temperature: 1.0,
            top_k: 1,
            cfg_scale: 1.0,
            max_text_tokens: 24,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive"));
        }
        if self.top_k == 0 {
            return Err(Error::config("top_k must be at least 1"));
        }
        if !(self.cfg_scale >= 1.0 && self.cfg_scale.is_finite()) {
            return Err(Error::config("cfg_scale must be at least 1"));
        }
        Ok(())
    }
}

/// Draws an index from `logits` under temperature and top-k truncation.
/// With `top_k == 1` this is argmax (lowest index on ties) and uses no randomness.
pub fn sample_logits<R: Rng>(logits: &[f64], cfg: &SamplerConfig, rng: &mut R) -> usize {
    let argmax = || (0..logits.len()).fold(0, |a, i| if logits[i] > logits[a] { i } else { a });
    if cfg.top_k == 1 {
        return argmax();
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(cfg.top_k.min(logits.len()));
    let top = logits[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| ((logits[i] - top) / cfg.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (w, &i) in weights.iter().zip(&order) {
        if u < *w {
            return i;
        }
        u -= w;
    }
    order[order.len() - 1]
}

/// The sampled image ids and their decoded pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub ids: Vec<u32>,
    pub image: ImageBuffer,
    /// The full token stream: `<bos> caption <boi> ids <eoi>`.
    pub sequence: ModalitySequence,
}

fn prefix(caption: &[u32]) -> SequenceBuilder {
    SequenceBuilder::new().text(&[BOS], false).text(caption, false).text(&[BOI], false)
}

/// Samples exactly `(S/f)²` image ids after `<boi>`, then closes with `<eoi>`.
pub fn generate_ids(model: &JanusModel<f32>, caption: &str, cfg: &SamplerConfig) -> Result<Generated> {
    cfg.validate()?;
    let caption = Vocab::standard().encode(caption)?;
    let n = model.codec.tokens_per_image();
    let needed = caption.len() + 3 + n;
    if needed > model.config.context_window {
        return Err(Error::Contract(format!(
            "caption of {} words leaves no room for {n} image ids in a window of {}",
            caption.len(),
            model.config.context_window
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids: Vec<u32> = Vec::with_capacity(n);
    for _ in 0..n {
        let cond = prefix(&caption).gen_ids(&ids, false).finish();
        let (_, c) = model.last_logits(&cond)?;
        let logits: Vec<f64> = if cfg.cfg_scale > 1.0 {
            let uncond = prefix(&[]).gen_ids(&ids, false).finish();
            let (_, u) = model.last_logits(&uncond)?;
            c.iter()
                .zip(&u)
                .map(|(&c, &u)| u as f64 + cfg.cfg_scale * (c as f64 - u as f64))
                .collect()
        } else {
            c.iter().map(|&v| v as f64).collect()
        };
        ids.push(sample_logits(&logits, cfg, &mut rng) as u32);
    }
    let sequence = prefix(&caption).gen_ids(&ids, false).text(&[EOI], false).finish();
    let image = model.vq_decode(&ids)?;
    Ok(Generated { ids, image, sequence })
}

pub fn generate_image(model: &JanusModel<f32>, caption: &str, cfg: &SamplerConfig) -> Result<ImageBuffer> {
    Ok(generate_ids(model, caption, cfg)?.image)
}

/// Answers `question` about `image`, sampling text until `<eos>` or the token budget.
pub fn understand(model: &JanusModel<f32>, image: &ImageBuffer, question: &str, cfg: &SamplerConfig) -> Result<String> {
    cfg.validate()?;
    let vocab = Vocab::standard();
    let q = vocab.encode(question)?;
    let img = preprocess_understanding(image, model.codec.image_side)?;
    let cells = model.codec.und_positions();
    let base = q.len() + cells + 3;
    let budget = cfg
        .max_text_tokens
        .min(model.config.context_window.saturating_sub(base));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut answer: Vec<u32> = Vec::new();
    while answer.len() < budget {
        let seq = SequenceBuilder::new()
            .text(&[BOS], false)
            .text(&q, false)
            .text(&[BOI], false)
            .visual(Visual::Image(img.clone()), cells)
            .text(&[EOI], false)
            .text(&answer, false)
            .finish();
        let (t, _) = model.last_logits(&seq)?;
        let logits: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        let id = sample_logits(&logits, cfg, &mut rng) as u32;
        if id == EOS {
            break;
        }
        answer.push(id);
    }
    Ok(vocab.decode(&answer))
}
