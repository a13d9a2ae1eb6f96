//! Turning samples into token sequences for a given stage's data modes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::corpus::Sample;
use crate::data::preprocess::{preprocess_generation, preprocess_understanding};
use crate::data::scene::{category_prompt, question_answer};
use crate::error::Result;
use crate::model::{generation_sequence, text_sequence, understanding_sequence, JanusModel, ModalitySequence, Visual, Vocab};

pub const DESCRIBE_PROMPT: &str = "describe the image";

/// Which captions condition generation samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Bare category names of single-object scenes, e.g. "red circle".
    CategoryPrompts,
    /// A mix of full dense descriptions and short template captions.
    DenseCaptions,
}

/// What understanding samples ask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnderstandingMode {
    /// "describe the image" answered by the dense caption.
    Captions,
    /// Counting, color and location questions with short answers.
    Instructions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceOptions {
    pub generation: GenerationMode,
    pub understanding: UnderstandingMode,
    /// Probability of replacing a generation caption by the empty caption.
    pub caption_dropout: f64,
    /// Under dense captions, probability of the dense form over the template form.
    pub dense_share: f64,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            generation: GenerationMode::DenseCaptions,
            understanding: UnderstandingMode::Captions,
            caption_dropout: 0.1,
            dense_share: 0.5,
        }
    }
}

pub fn to_sequence<R: Rng>(
    sample: &Sample,
    model: &JanusModel<f32>,
    opts: &SequenceOptions,
    rng: &mut R,
) -> Result<ModalitySequence> {
    let vocab = Vocab::standard();
    let side = model.codec.image_side;
    match sample {
        Sample::Text(t) => Ok(text_sequence(&vocab.encode(t)?)),
        Sample::Understanding(scene) => {
            let img = preprocess_understanding(&scene.image, side)?;
            let (q, a) = match opts.understanding {
                UnderstandingMode::Captions => (DESCRIBE_PROMPT.to_string(), scene.spec.dense_caption()),
                UnderstandingMode::Instructions => question_answer(&scene.spec, rng),
            };
            Ok(understanding_sequence(
                &vocab.encode(&q)?,
                Visual::Image(img),
                model.codec.und_positions(),
                &vocab.encode(&a)?,
            ))
        }
        Sample::Generation { scene, .. } => {
            let img = preprocess_generation(&scene.image, side)?;
            let ids = model.tokenize(&img)?;
            let caption = match opts.generation {
                GenerationMode::CategoryPrompts => category_prompt(&scene.spec).unwrap_or_else(|| scene.caption()),
                GenerationMode::DenseCaptions => {
                    if rng.random_bool(opts.dense_share) {
                        scene.spec.dense_caption()
                    } else {
                        scene.caption()
                    }
                }
            };
            let caption = if rng.random_bool(opts.caption_dropout) {
                Vec::new()
            } else {
                vocab.encode(&caption)?
            };
            Ok(generation_sequence(&caption, &ids))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CodecConfig, ModelConfig};
    use crate::data::corpus::{SampleKind, SampleSource};
    use crate::model::{Payload, Target};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sequences_fit_the_toy_context() {
        let model = JanusModel::new(ModelConfig::compact(), CodecConfig::toy(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut longest = 0;
        for mode in [UnderstandingMode::Captions, UnderstandingMode::Instructions] {
            let opts = SequenceOptions {
                understanding: mode,
                dense_share: 1.0,
                caption_dropout: 0.0,
                ..Default::default()
            };
            for kind in SampleKind::ALL {
                let src = SampleSource::procedural(kind, 48);
                for _ in 0..100 {
                    let s = to_sequence(&src.draw(&mut rng).unwrap(), &model, &opts, &mut rng).unwrap();
                    s.validate(&model.config, &model.codec).unwrap();
                    longest = longest.max(s.len());
                }
            }
        }
        assert!(longest <= model.config.context_window);
    }

    #[test]
    fn generation_sequence_carries_nine_image_targets() {
        let model = JanusModel::new(ModelConfig::compact(), CodecConfig::toy(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = SampleSource::procedural(SampleKind::Generation, 48).single_objects();
        let opts = SequenceOptions {
            generation: GenerationMode::CategoryPrompts,
            caption_dropout: 0.0,
            ..Default::default()
        };
        let s = to_sequence(&src.draw(&mut rng).unwrap(), &model, &opts, &mut rng).unwrap();
        // <bos> color shape <boi> 9 ids <eoi>
        assert_eq!(s.len(), 4 + 9 + 1);
        assert_eq!(s.entries.iter().filter(|e| matches!(e.target, Some(Target::Image(_)))).count(), 9);
        assert!(matches!(s.entries[4].payload, Payload::GenId(_)));
    }
}
