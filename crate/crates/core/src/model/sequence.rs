//! Interleaved multimodal token streams and the three sample templates.
//!
//! Wire format (one sequence per sample):
//!
//! ```text
//! understanding: <bos> question <boi> und-features <eoi> answer* <eos>*
//! generation:    <bos> caption  <boi> image-ids*    <eoi>
//! pure text:     <bos> text* <eos>*
//! ```
//!
//! `*` marks tokens that are prediction targets. The loss flag lives on the
//! position *preceding* a target: entry `p` carries `target = token[p + 1]`.

use crate::config::{CodecConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::model::vocab::{BOI, BOS, EOI, EOS};
use crate::visual::{FeatureGrid, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    UndFeature,
    GenId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Text(u32),
    /// Cell `cell` (raster order) of visual `visual` in [`ModalitySequence::visuals`].
    UndFeature { visual: usize, cell: usize },
    GenId(u32),
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Text(_) => Modality::Text,
            Payload::UndFeature { .. } => Modality::UndFeature,
            Payload::GenId(_) => Modality::GenId,
        }
    }
}

/// The id the next position must predict, tagged with the head that scores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Text(u32),
    Image(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub payload: Payload,
    pub loss_flag: bool,
    pub target: Option<Target>,
}

/// Source of understanding features: either a raw image that is encoded by
/// the understanding encoder inside the forward pass, or precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub enum Visual {
    Image(ImageBuffer),
    Features(FeatureGrid),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModalitySequence {
    pub entries: Vec<Entry>,
    pub visuals: Vec<Visual>,
}

impl ModalitySequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flagged(&self) -> usize {
        self.entries.iter().filter(|e| e.loss_flag).count()
    }

    /// Checks every structural invariant against the model and codec configs.
    pub fn validate(&self, cfg: &ModelConfig, codec: &CodecConfig) -> Result<()> {
        if self.entries.len() > cfg.context_window {
            return Err(Error::Length {
                len: self.entries.len(),
                window: cfg.context_window,
            });
        }
        for v in &self.visuals {
            match v {
                Visual::Image(img) if !img.is_square(codec.image_side) => {
                    return Err(Error::shape(format!(
                        "understanding image must be {s}x{s}, got {}x{}",
                        img.width,
                        img.height,
                        s = codec.image_side
                    )))
                }
                Visual::Features(g) if g.feat_dim != codec.und_feat_dim => {
                    return Err(Error::shape(format!(
                        "feature width {} does not match encoder width {}",
                        g.feat_dim, codec.und_feat_dim
                    )))
                }
                _ => {}
            }
        }
        let check_text = |id: u32| {
            if id as usize >= cfg.vocab_size {
                Err(Error::domain(format!("text id {id} >= vocab_size {}", cfg.vocab_size)))
            } else {
                Ok(())
            }
        };
        let check_image = |id: u32| {
            if id as usize >= cfg.codebook_size {
                Err(Error::domain(format!("image id {id} >= codebook_size {}", cfg.codebook_size)))
            } else {
                Ok(())
            }
        };
        for (p, e) in self.entries.iter().enumerate() {
            match e.payload {
                Payload::Text(id) => check_text(id)?,
                Payload::GenId(id) => check_image(id)?,
                Payload::UndFeature { visual, cell } => {
                    if e.loss_flag {
                        return Err(Error::domain(format!("understanding feature at {p} is loss-flagged")));
                    }
                    let cells = match self.visuals.get(visual) {
                        Some(Visual::Image(_)) => codec.und_positions(),
                        Some(Visual::Features(g)) => g.len(),
                        None => return Err(Error::domain(format!("position {p} references missing visual {visual}"))),
                    };
                    if cell >= cells {
                        return Err(Error::domain(format!("feature cell {cell} out of range {cells}")));
                    }
                }
            }
            match (e.loss_flag, e.target) {
                (true, Some(Target::Text(id))) => check_text(id)?,
                (true, Some(Target::Image(id))) => check_image(id)?,
                (false, None) => {}
                _ => return Err(Error::domain(format!("loss flag and target disagree at position {p}"))),
            }
        }
        Ok(())
    }
}

/// Accumulates tokens and derives next-position targets on [`finish`](Self::finish).
#[derive(Debug, Default)]
pub struct SequenceBuilder {
    tokens: Vec<(Payload, bool)>,
    visuals: Vec<Visual>,
}

impl SequenceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, ids: &[u32], trained: bool) -> Self {
        self.tokens.extend(ids.iter().map(|&id| (Payload::Text(id), trained)));
        self
    }

    pub fn gen_ids(mut self, ids: &[u32], trained: bool) -> Self {
        self.tokens.extend(ids.iter().map(|&id| (Payload::GenId(id), trained)));
        self
    }

    /// Appends one position per feature cell of `visual`, in raster order.
    pub fn visual(mut self, visual: Visual, cells: usize) -> Self {
        let v = self.visuals.len();
        self.visuals.push(visual);
        self.tokens
            .extend((0..cells).map(|cell| (Payload::UndFeature { visual: v, cell }, false)));
        self
    }

    pub fn finish(self) -> ModalitySequence {
        let n = self.tokens.len();
        let entries = (0..n)
            .map(|p| {
                let target = self.tokens.get(p + 1).and_then(|&(payload, trained)| {
                    if !trained {
                        return None;
                    }
                    match payload {
                        Payload::Text(id) => Some(Target::Text(id)),
                        Payload::GenId(id) => Some(Target::Image(id)),
                        Payload::UndFeature { .. } => None,
                    }
                });
                Entry {
                    payload: self.tokens[p].0,
                    loss_flag: target.is_some(),
                    target,
                }
            })
            .collect();
        ModalitySequence {
            entries,
            visuals: self.visuals,
        }
    }
}

/// `<bos> question <boi> features <eoi> answer <eos>`, answer and `<eos>` trained.
pub fn understanding_sequence(question: &[u32], visual: Visual, cells: usize, answer: &[u32]) -> ModalitySequence {
    SequenceBuilder::new()
        .text(&[BOS], false)
        .text(question, false)
        .text(&[BOI], false)
        .visual(visual, cells)
        .text(&[EOI], false)
        .text(answer, true)
        .text(&[EOS], true)
        .finish()
}

/// `<bos> caption <boi> ids <eoi>`, ids trained.
pub fn generation_sequence(caption: &[u32], ids: &[u32]) -> ModalitySequence {
    SequenceBuilder::new()
        .text(&[BOS], false)
        .text(caption, false)
        .text(&[BOI], false)
        .gen_ids(ids, true)
        .text(&[EOI], false)
        .finish()
}

/// `<bos> text <eos>`, everything after `<bos>` trained.
pub fn text_sequence(text: &[u32]) -> ModalitySequence {
    SequenceBuilder::new()
        .text(&[BOS], false)
        .text(text, true)
        .text(&[EOS], true)
        .finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_template_targets() {
        let s = generation_sequence(&[10, 11], &[5, 6, 7]);
        // <bos> 10 11 <boi> 5 6 7 <eoi>
        assert_eq!(s.len(), 8);
        let targets: Vec<_> = s.entries.iter().map(|e| e.target).collect();
        assert_eq!(
            targets,
            vec![None, None, None, Some(Target::Image(5)), Some(Target::Image(6)), Some(Target::Image(7)), None, None]
        );
        s.validate(&ModelConfig::toy(), &CodecConfig::toy()).unwrap();
    }

    #[test]
    fn understanding_features_never_flagged() {
        let grid = FeatureGrid::new(1, 2, CodecConfig::toy().und_feat_dim, vec![0.0; 2 * 32]).unwrap();
        let s = understanding_sequence(&[12], Visual::Features(grid), 2, &[20]);
        for e in &s.entries {
            if let Payload::UndFeature { .. } = e.payload {
                assert!(!e.loss_flag);
            }
        }
        // <bos> q <boi> f f <eoi> a <eos>: <eoi> predicts the answer, the answer predicts <eos>
        assert_eq!(s.entries[5].target, Some(Target::Text(20)));
        assert_eq!(s.entries[6].target, Some(Target::Text(EOS)));
        assert_eq!(s.flagged(), 2);
    }

    #[test]
    fn validation_errors() {
        let cfg = ModelConfig::toy();
        let codec = CodecConfig::toy();
        let long = text_sequence(&vec![10; cfg.context_window]);
        assert!(matches!(long.validate(&cfg, &codec), Err(Error::Length { .. })));
        let bad_text = text_sequence(&[cfg.vocab_size as u32]);
        assert!(matches!(bad_text.validate(&cfg, &codec), Err(Error::Domain(_))));
        let bad_img = generation_sequence(&[], &[cfg.codebook_size as u32]);
        assert!(matches!(bad_img.validate(&cfg, &codec), Err(Error::Domain(_))));
        let mut flagged_feature = understanding_sequence(
            &[],
            Visual::Features(FeatureGrid::new(1, 1, 32, vec![0.0; 32]).unwrap()),
            1,
            &[20],
        );
        flagged_feature.entries[2].loss_flag = true;
        flagged_feature.entries[2].target = Some(Target::Text(1));
        assert!(flagged_feature.validate(&cfg, &codec).is_err());
    }
}
