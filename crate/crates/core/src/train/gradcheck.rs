//! Finite-difference check of every analytic gradient, per parameter group.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::scene::gen_scene;
use crate::error::{Error, Result};
use crate::model::{generation_sequence, text_sequence, understanding_sequence, Gradients, JanusModel, ModalitySequence, Reduction, Visual, Vocab};
use crate::params::{GroupSet, ParamGroup};
use crate::visual::{ImageBuffer, VqSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Random coordinates per tensor, besides its largest-gradient coordinate.
    pub per_tensor: usize,
    pub seed: u64,
    /// Scales one group's analytic gradient, to prove the checker notices.
    pub corrupt: Option<(ParamGroup, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 3e-3,
            tolerance: 1e-4,
            per_tensor: 3,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupStatus {
    Checked { max_rel_error: f64, coords: usize },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub groups: Vec<(ParamGroup, GroupStatus)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups
            .iter()
            .filter_map(|(_, s)| match s {
                GroupStatus::Checked { max_rel_error, .. } => Some(*max_rel_error),
                GroupStatus::Skipped => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<ParamGroup> {
        self.groups
            .iter()
            .filter(|(_, s)| matches!(s, GroupStatus::Checked { max_rel_error, .. } if *max_rel_error >= self.tolerance))
            .map(|(g, _)| *g)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }
}

/// Relative error with a small floor so that two near-zero values agree.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// A small batch exercising every input path: an understanding sequence built
/// from raw pixels, a generation sequence, and plain text.
pub fn fixture(model: &JanusModel<f64>, seed: u64) -> Result<(Vec<ModalitySequence>, Vec<ImageBuffer>)> {
    let vocab = Vocab::standard();
    let side = model.codec.image_side;
    let a = gen_scene(seed, side);
    let b = gen_scene(seed.wrapping_add(1), side);
    let ids = model.tokenize(&b.image)?;
    let seqs = vec![
        understanding_sequence(
            &vocab.encode("what color")?,
            Visual::Image(a.image.clone()),
            model.codec.und_positions(),
            &vocab.encode("red circle")?,
        ),
        generation_sequence(&vocab.encode("a blue square")?, &ids),
        text_sequence(&vocab.encode("two red circles and a square")?),
    ];
    Ok((seqs, vec![a.image, b.image]))
}

struct Objective<'a> {
    seqs: &'a [ModalitySequence],
    images: Vec<&'a ImageBuffer>,
    snapshot: Option<VqSnapshot<f64>>,
}

impl Objective<'_> {
    /// Summed language-model loss, plus the tokenizer objective under a fixed snapshot.
    fn value(&self, model: &JanusModel<f64>) -> Result<f64> {
        let mut v = model.evaluate_loss(self.seqs)?.total();
        if let Some(s) = &self.snapshot {
            v += model.vq_objective(&self.images, Some(s), false)?.0.total();
        }
        Ok(v)
    }
}

pub fn gradcheck(
    model: &JanusModel<f64>,
    seqs: &[ModalitySequence],
    images: &[ImageBuffer],
    trainable: GroupSet,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let n = model.params.len();
    let (_, mut grads) = model.batch_loss(seqs, trainable, Reduction::Sum)?;
    let mut obj = Objective {
        seqs,
        images: images.iter().collect(),
        snapshot: None,
    };
    if trainable.contains(ParamGroup::GenTokenizer) && !images.is_empty() {
        let (_, _, snap) = model.vq_objective(&obj.images, None, false)?;
        let (_, vq_grads, _) = model.vq_objective(&obj.images, Some(&snap), true)?;
        let pairs = vq_grads.by_param.into_iter().enumerate().filter_map(|(i, g)| g.map(|g| (i, g)));
        let mut merged: Vec<_> = grads.by_param.into_iter().enumerate().filter_map(|(i, g)| g.map(|g| (i, g))).collect();
        merged.extend(pairs);
        grads = Gradients::from_pairs(n, merged);
        obj.snapshot = Some(snap);
    }
    for (id, g) in grads.by_param.iter().enumerate() {
        let p = model.params.get(id);
        if g.is_some() && !trainable.contains(p.group) {
            return Err(Error::Freezing(format!("gradient produced for frozen `{}`", p.name)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = model.clone();
    let mut groups = Vec::new();
    for group in ParamGroup::ALL {
        if !trainable.contains(group) {
            groups.push((group, GroupStatus::Skipped));
            continue;
        }
        let mut worst = 0.0f64;
        let mut coords = 0;
        for id in model.params.ids_in(group) {
            let len = model.params.value(id).len();
            let zero = vec![0.0; len];
            let analytic = grads.get(id).map(|g| &g.data[..]).unwrap_or(&zero);
            let mut picks: Vec<usize> = sample(&mut rng, len, opts.per_tensor.min(len)).into_vec();
            let largest = (0..len).fold(0, |a, i| if analytic[i].abs() > analytic[a].abs() { i } else { a });
            if !picks.contains(&largest) {
                picks.push(largest);
            }
            for i in picks {
                let orig = probe.params.value(id).data[i];
                let mut at = |k: f64| -> Result<f64> {
                    probe.params.value_mut(id).data[i] = orig + k * opts.step;
                    obj.value(&probe)
                };
                // five-point stencil: O(h^4) truncation lets h stay large, which keeps roundoff small
                let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
                probe.params.value_mut(id).data[i] = orig;
                let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * opts.step);
                let mut a = analytic[i];
                if let Some((g, s)) = opts.corrupt {
                    if g == group {
                        a *= s;
                    }
                }
                worst = worst.max(relative_error(a, numeric));
                coords += 1;
            }
        }
        groups.push((
            group,
            GroupStatus::Checked {
                max_rel_error: worst,
                coords,
            },
        ));
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CodecConfig, ModelConfig};

    fn tiny() -> JanusModel<f64> {
        JanusModel::new(ModelConfig::tiny(), CodecConfig::tiny(), 11).unwrap().cast()
    }

    #[test]
    fn fresh_model_passes_every_group() {
        let m = tiny();
        let (seqs, imgs) = fixture(&m, 5).unwrap();
        let r = gradcheck(&m, &seqs, &imgs, GroupSet::all(), &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{:?}", r.groups);
        assert!(r.groups.iter().all(|(_, s)| matches!(s, GroupStatus::Checked { .. })));
    }

    #[test]
    fn frozen_groups_are_skipped() {
        let m = tiny();
        let (seqs, imgs) = fixture(&m, 5).unwrap();
        let set = GroupSet::from_groups(&[ParamGroup::ImageHead, ParamGroup::UndAdaptor]);
        let r = gradcheck(&m, &seqs, &imgs, set, &GradCheckOptions::default()).unwrap();
        let skipped = r.groups.iter().filter(|(_, s)| *s == GroupStatus::Skipped).count();
        assert_eq!(skipped, 6);
        assert!(r.passed());
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let m = tiny();
        let (seqs, imgs) = fixture(&m, 5).unwrap();
        let opts = GradCheckOptions {
            corrupt: Some((ParamGroup::TransformerBlocks, 1.01)),
            ..Default::default()
        };
        let r = gradcheck(&m, &seqs, &imgs, GroupSet::all(), &opts).unwrap();
        assert_eq!(r.failing(), vec![ParamGroup::TransformerBlocks]);
    }
}
