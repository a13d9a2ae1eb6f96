//! Per-stage budgets, schedules, data ratios and freezing rules.

use serde::{Deserialize, Serialize};

use crate::config::Scale;
use crate::data::{GenerationMode, MixRatio, UnderstandingMode};
use crate::error::{Error, Result};
use crate::params::{GroupSet, ParamGroup};

/// Stage-1 step budget of the "short" preset used when ablating the longer first stage.
pub const SHORT_STAGE1_STEPS: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stage_id: u8,
    pub steps: u64,
    pub warmup_steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub ratio: MixRatio,
    pub trainable_groups: GroupSet,
    /// Hard step cutoff below `steps`, if any.
    pub early_stop_step: Option<u64>,
    pub generation_data_mode: GenerationMode,
    pub understanding_data_mode: UnderstandingMode,
}

/// Groups trained in `stage`. The generation tokenizer is never among them.
pub fn trainable_groups(stage: u8) -> Result<GroupSet> {
    use ParamGroup::*;
    match stage {
        1 => Ok(GroupSet::from_groups(&[UndAdaptor, GenAdaptor, ImageHead])),
        2 => Ok(GroupSet::all().without(UndEncoder).without(GenTokenizer)),
        3 => Ok(GroupSet::all().without(GenTokenizer)),
        s => Err(Error::config(format!("no training stage {s} (expected 1, 2 or 3)"))),
    }
}

impl StagePlan {
    /// Steps the stage actually runs.
    pub fn effective_steps(&self) -> u64 {
        match self.early_stop_step {
            Some(e) => e.min(self.steps),
            None => self.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = trainable_groups(self.stage_id)?;
        if self.trainable_groups.contains(ParamGroup::GenTokenizer) {
            return Err(Error::Freezing("gen_tokenizer cannot be trained in stages 1-3".into()));
        }
        if self.trainable_groups != expected {
            return Err(Error::Freezing(format!(
                "stage {} trains {:?}, expected {:?}",
                self.stage_id, self.trainable_groups, expected
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at a zero-based step: linear ramp from 0 over the warmup, then constant.
pub fn lr_at(step: u64, plan: &StagePlan) -> f64 {
    if step >= plan.warmup_steps {
        plan.learning_rate
    } else {
        plan.learning_rate * step as f64 / plan.warmup_steps as f64
    }
}

pub fn default_plans(scale: Scale) -> [StagePlan; 3] {
    let (steps, batch, warmup, early) = match scale {
        Scale::Paper1B => ([20_000, 360_000, 80_000], [256, 512, 128], [600, 5000, 0], 270_000),
        Scale::Paper7B => ([20_000, 360_000, 40_000], [256, 512, 128], [600, 5000, 0], 270_000),
        Scale::Toy => ([200, 1200, 400], [16, 32, 8], [20, 50, 0], 900),
    };
    let lrs = [1e-3, 1e-4, 4e-5];
    let ratios = [(1, 0, 3), (2, 3, 5), (5, 1, 4)];
    std::array::from_fn(|i| {
        let stage = i as u8 + 1;
        let (u, t, g) = ratios[i];
        StagePlan {
            stage_id: stage,
            steps: steps[i],
            warmup_steps: warmup[i],
            learning_rate: lrs[i],
            batch_size: batch[i],
            ratio: MixRatio::new(u, t, g).expect("nonzero ratio"),
            trainable_groups: trainable_groups(stage).expect("valid stage"),
            early_stop_step: (stage == 2).then_some(early),
            generation_data_mode: if stage == 1 {
                GenerationMode::CategoryPrompts
            } else {
                GenerationMode::DenseCaptions
            },
            understanding_data_mode: if stage == 3 {
                UnderstandingMode::Instructions
            } else {
                UnderstandingMode::Captions
            },
        }
    })
}
