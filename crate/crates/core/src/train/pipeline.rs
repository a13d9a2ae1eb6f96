//! Stage 0 then stages 1 to 3, with per-stage checkpoints in a run directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CodecConfig, ModelConfig, Scale};
use crate::data::corpus::{derive_seed, Sources};
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, TrainProgress};
use crate::model::JanusModel;
use crate::train::plan::{default_plans, StagePlan};
use crate::train::stage::{fresh_state, resume_checkpoint_path, resume_from, run_stage, stage_checkpoint_path, StageOptions, StageReport};
use crate::train::stage0::{pretrain, PretrainConfig, PretrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub codec: CodecConfig,
    pub pretrain: PretrainConfig,
    pub plans: [StagePlan; 3],
    pub stage: StageOptions,
}

impl PipelineConfig {
    pub fn for_scale(scale: Scale, seed: u64) -> Self {
        Self {
            model: ModelConfig::for_scale(scale),
            codec: CodecConfig::for_scale(scale),
            pretrain: PretrainConfig::default(),
            plans: default_plans(scale),
            stage: StageOptions {
                seed,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pretrain: Option<PretrainReport>,
    pub stages: Vec<StageReport>,
    pub seconds: f64,
}

fn load_stage_output(dir: &Path, stage: u8) -> Result<JanusModel<f32>> {
    let path = stage_checkpoint_path(dir, stage);
    if !path.exists() {
        return Err(Error::Prerequisite(format!(
            "stage {stage} checkpoint {} not found; run stage {stage} first",
            path.display()
        )));
    }
    let ck = checkpoint::load(&path)?;
    if ck.model.stage != stage {
        return Err(Error::Checkpoint(format!(
            "{} holds a stage {} model",
            path.display(),
            ck.model.stage
        )));
    }
    Ok(ck.model)
}

/// Runs everything from `from_stage` (0 = tokenizer pretraining) through stage 3.
/// Starting later loads the previous stage's checkpoint from the run directory.
/// With `resume`, a stage with a resumable checkpoint continues where it stopped.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    sources: &Sources,
    from_stage: u8,
    resume: bool,
) -> Result<(JanusModel<f32>, PipelineReport)> {
    if from_stage > 3 {
        return Err(Error::config(format!("no stage {from_stage}")));
    }
    let t0 = Instant::now();
    let seed = cfg.stage.seed;
    let dir: Option<PathBuf> = cfg.stage.run_dir.clone();
    let mut pre = None;
    let mut model = if from_stage == 0 {
        let mut m = JanusModel::new(cfg.model, cfg.codec, derive_seed(seed, 0x1217, 0))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5700, 0));
        let r = pretrain(&mut m, sources, &cfg.pretrain, seed, &mut rng)?;
        log::info!(
            "stage 0 done: held-out mse {:.4}, utilization {:.2}, probe accuracy {:.2}",
            r.heldout_mse,
            r.utilization,
            r.probe_accuracy
        );
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let progress = TrainProgress {
                stage: 0,
                step: cfg.pretrain.tokenizer_steps + cfg.pretrain.encoder_steps,
                rng_seed: seed,
                rng_word_pos: 0,
                loss_history: Vec::new(),
                stage_complete: true,
                initial_probe_loss: None,
            };
            checkpoint::save(&stage_checkpoint_path(d, 0), &m, Some(&progress), None)?;
        }
        pre = Some(r);
        m
    } else {
        let d = dir
            .as_ref()
            .ok_or_else(|| Error::config("starting after stage 0 needs a run directory"))?;
        load_stage_output(d, from_stage - 1)?
    };

    let mut stages = Vec::new();
    for plan in cfg.plans.iter().filter(|p| p.stage_id >= from_stage.max(1)) {
        let resumable = dir.as_ref().map(|d| resume_checkpoint_path(d, plan.stage_id));
        let mut state = match resumable {
            Some(p) if resume && p.exists() => {
                let (m, s) = resume_from(&p, plan)?;
                model = m;
                log::info!("resuming stage {} at step {}", plan.stage_id, s.progress.step);
                s
            }
            _ => fresh_state(&model, plan, seed),
        };
        let report = run_stage(plan, &mut model, sources, &mut state, &cfg.stage)?;
        let done = report.completed;
        stages.push(report);
        if !done {
            break;
        }
    }
    Ok((
        model,
        PipelineReport {
            pretrain: pre,
            stages,
            seconds: t0.elapsed().as_secs_f64(),
        },
    ))
}
