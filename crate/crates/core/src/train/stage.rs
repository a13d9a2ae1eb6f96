//! The stage loop: mix, pack, forward, loss, AdamW step; with logging,
//! checkpoints, resumption and a hard early-stop cutoff.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::corpus::{derive_seed, Sources};
use crate::data::mix::mix;
use crate::data::pack::pack;
use crate::data::templates::{to_sequence, SequenceOptions};
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, ProbeLoss, TrainProgress};
use crate::model::{JanusModel, LossParts, ModalitySequence, Reduction};
use crate::params::ParamGroup;
use crate::train::optim::{AdamState, OptimizerConfig};
use crate::train::plan::{lr_at, StagePlan};

/// Length of the loss ring buffer kept in checkpoints.
pub const LOSS_HISTORY: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct StageOptions {
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Directory for logs and checkpoints; nothing is written without one.
    pub run_dir: Option<PathBuf>,
    pub log_every: u64,
    /// Steps between resumable checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Stop resumably when stage `.0` reaches step `.1`, as if the process died there.
    pub interrupt_at: Option<(u8, u64)>,
    pub probe_size: usize,
    pub caption_dropout: f64,
    pub dense_share: f64,
}

impl Default for StageOptions {
    fn default() -> Self {
        let seq = SequenceOptions::default();
        Self {
            seed: 0,
            optimizer: OptimizerConfig::default(),
            run_dir: None,
            log_every: 10,
            checkpoint_every: 0,
            interrupt_at: None,
            probe_size: 64,
            caption_dropout: seq.caption_dropout,
            dense_share: seq.dense_share,
        }
    }
}

impl StageOptions {
    fn sequence_options(&self, plan: &StagePlan) -> SequenceOptions {
        SequenceOptions {
            generation: plan.generation_data_mode,
            understanding: plan.understanding_data_mode,
            caption_dropout: self.caption_dropout,
            dense_share: self.dense_share,
        }
    }
}

/// One logged step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub stage: u8,
    pub step: u64,
    pub loss: f64,
    pub text_loss: Option<f64>,
    pub image_loss: Option<f64>,
    pub lr: f64,
    pub fill_ratio: f64,
    pub grad_norm: f64,
}

/// Everything needed to continue a stage from where it stopped.
#[derive(Debug, Clone)]
pub struct StageState {
    pub progress: TrainProgress,
    pub optimizer: AdamState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub steps_run: u64,
    pub completed: bool,
    pub initial: ProbeLoss,
    pub final_loss: ProbeLoss,
    pub logs: Vec<StepLog>,
    /// Digest of every group at stage entry and exit.
    pub entry_digests: BTreeMap<ParamGroup, String>,
    pub exit_digests: BTreeMap<ParamGroup, String>,
    pub checkpoint: Option<PathBuf>,
}

impl StageReport {
    /// Groups whose values changed during the stage.
    pub fn changed_groups(&self) -> Vec<ParamGroup> {
        self.entry_digests
            .iter()
            .filter(|(g, d)| self.exit_digests.get(g) != Some(d))
            .map(|(g, _)| *g)
            .collect()
    }
}

pub fn probe_loss(parts: &LossParts<f32>) -> ProbeLoss {
    ProbeLoss {
        mean: parts.mean(),
        text: parts.text_mean(),
        image: parts.image_mean(),
    }
}

pub fn stage_checkpoint_path(run_dir: &Path, stage: u8) -> PathBuf {
    run_dir.join(format!("stage{stage}.ckpt"))
}

pub fn resume_checkpoint_path(run_dir: &Path, stage: u8) -> PathBuf {
    run_dir.join(format!("stage{stage}.resume.ckpt"))
}

fn rng_for(progress: &TrainProgress) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(progress.rng_seed);
    rng.set_word_pos(progress.rng_word_pos);
    rng
}

/// A fresh state for entering `plan`'s stage.
pub fn fresh_state(model: &JanusModel<f32>, plan: &StagePlan, seed: u64) -> StageState {
    StageState {
        progress: TrainProgress {
            stage: plan.stage_id,
            step: 0,
            rng_seed: derive_seed(seed, 0x5747, plan.stage_id as u64),
            rng_word_pos: 0,
            loss_history: Vec::new(),
            stage_complete: false,
            initial_probe_loss: None,
        },
        optimizer: AdamState::for_groups(&model.params, plan.trainable_groups),
    }
}

/// A fixed batch drawn once per stage from its own seed, for start/end loss comparisons.
pub fn probe_batch(
    model: &JanusModel<f32>,
    plan: &StagePlan,
    sources: &Sources,
    opts: &StageOptions,
) -> Result<Vec<ModalitySequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 0x9e0b, plan.stage_id as u64));
    let seq_opts = opts.sequence_options(plan);
    mix(sources, &plan.ratio, opts.probe_size, &mut rng)?
        .iter()
        .map(|s| to_sequence(s, model, &seq_opts, &mut rng))
        .collect()
}

fn check_entry(model: &JanusModel<f32>, plan: &StagePlan, state: &StageState) -> Result<()> {
    plan.validate()?;
    if state.progress.stage != plan.stage_id {
        return Err(Error::Checkpoint(format!(
            "training state belongs to stage {}, plan is stage {}",
            state.progress.stage, plan.stage_id
        )));
    }
    let resuming = state.progress.step > 0;
    let ok = if resuming {
        model.stage == plan.stage_id
    } else {
        model.stage + 1 == plan.stage_id || model.stage == plan.stage_id
    };
    if !ok {
        return Err(Error::Prerequisite(format!(
            "stage {} needs a model that completed stage {}, this one is at stage {}",
            plan.stage_id,
            plan.stage_id - 1,
            model.stage
        )));
    }
    for (id, p) in model.params.iter() {
        let has = state.optimizer.m.get(id).is_some_and(|m| m.is_some());
        if has != plan.trainable_groups.contains(p.group) {
            return Err(Error::Freezing(format!(
                "optimizer moments for `{}` do not match the stage {} trainable groups",
                p.name, plan.stage_id
            )));
        }
    }
    Ok(())
}

fn append_log(path: &Path, log: &StepLog) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(log)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Runs `min(steps, early_stop_step)` steps of `plan`, or continues a partial run.
/// Parameters outside the plan's trainable groups are left bit-identical.
pub fn run_stage(
    plan: &StagePlan,
    model: &mut JanusModel<f32>,
    sources: &Sources,
    state: &mut StageState,
    opts: &StageOptions,
) -> Result<StageReport> {
    check_entry(model, plan, state)?;
    opts.optimizer.validate()?;
    let probe = probe_batch(model, plan, sources, opts)?;
    let entry_digests: BTreeMap<ParamGroup, String> =
        ParamGroup::ALL.iter().map(|&g| (g, model.params.group_digest(g))).collect();
    let initial = match state.progress.initial_probe_loss {
        Some(l) => l,
        None => {
            let l = probe_loss(&model.evaluate_loss(&probe)?);
            state.progress.initial_probe_loss = Some(l);
            l
        }
    };
    model.stage = plan.stage_id;

    let log_path = match &opts.run_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join(format!("stage{}.log.jsonl", plan.stage_id));
            if state.progress.step == 0 && p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
            Some(p)
        }
        None => None,
    };
    log::info!(
        "stage {} start at step {}: trainable {:?}",
        plan.stage_id,
        state.progress.step,
        plan.trainable_groups
    );

    let total = plan.effective_steps();
    let seq_opts = opts.sequence_options(plan);
    let mut rng = rng_for(&state.progress);
    let mut logs = Vec::new();
    let start = state.progress.step;
    let mut interrupted = false;
    for step in start..total {
        if opts.interrupt_at == Some((plan.stage_id, step)) {
            interrupted = true;
            break;
        }
        let lr = lr_at(step, plan);
        let samples = mix(sources, &plan.ratio, plan.batch_size, &mut rng)?;
        let seqs = samples
            .iter()
            .map(|s| to_sequence(s, model, &seq_opts, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let batch = pack(seqs, model.config.context_window)?;
        let (parts, grads) = model.packed_loss(&batch, plan.trainable_groups, Reduction::Mean)?;
        let rep = state.optimizer.step(&mut model.params, &grads, lr, &opts.optimizer)?;

        let log = StepLog {
            stage: plan.stage_id,
            step,
            loss: parts.mean(),
            text_loss: parts.text_mean(),
            image_loss: parts.image_mean(),
            lr,
            fill_ratio: batch.fill_ratio,
            grad_norm: rep.grad_norm,
        };
        state.progress.loss_history.push(log.loss);
        if state.progress.loss_history.len() > LOSS_HISTORY {
            state.progress.loss_history.remove(0);
        }
        state.progress.step = step + 1;
        state.progress.rng_word_pos = rng.get_word_pos();
        if opts.log_every > 0 && (step % opts.log_every == 0 || step + 1 == total) {
            log::info!(
                "stage {} step {step} loss {:.4} lr {lr:.2e} fill {:.2}",
                plan.stage_id,
                log.loss,
                log.fill_ratio
            );
            if let Some(p) = &log_path {
                append_log(p, &log)?;
            }
        }
        logs.push(log);
        if let Some(d) = &opts.run_dir {
            if opts.checkpoint_every > 0 && (step + 1) % opts.checkpoint_every == 0 && step + 1 < total {
                checkpoint::save(
                    &resume_checkpoint_path(d, plan.stage_id),
                    model,
                    Some(&state.progress),
                    Some(&state.optimizer),
                )?;
            }
        }
    }

    for g in ParamGroup::ALL {
        if !plan.trainable_groups.contains(g) && model.params.group_digest(g) != entry_digests[&g] {
            return Err(Error::Freezing(format!("frozen group {g} changed during stage {}", plan.stage_id)));
        }
    }
    let exit_digests = ParamGroup::ALL.iter().map(|&g| (g, model.params.group_digest(g))).collect();
    let final_loss = probe_loss(&model.evaluate_loss(&probe)?);
    state.progress.stage_complete = !interrupted;

    let checkpoint = match &opts.run_dir {
        Some(d) => {
            let path = if interrupted {
                resume_checkpoint_path(d, plan.stage_id)
            } else {
                stage_checkpoint_path(d, plan.stage_id)
            };
            checkpoint::save(&path, model, Some(&state.progress), Some(&state.optimizer))?;
            if !interrupted {
                let resume = resume_checkpoint_path(d, plan.stage_id);
                if resume.exists() {
                    fs::remove_file(&resume).map_err(|e| Error::io(&resume, e))?;
                }
            }
            Some(path)
        }
        None => None,
    };
    log::info!(
        "stage {} {}: probe loss {:.4} -> {:.4}",
        plan.stage_id,
        if interrupted { "interrupted" } else { "done" },
        initial.mean,
        final_loss.mean
    );
    Ok(StageReport {
        stage: plan.stage_id,
        steps_run: state.progress.step - start,
        completed: !interrupted,
        initial,
        final_loss,
        logs,
        entry_digests,
        exit_digests,
        checkpoint,
    })
}

/// Restores model and training state from a resumable checkpoint.
pub fn resume_from(path: &Path, plan: &StagePlan) -> Result<(JanusModel<f32>, StageState)> {
    let ck = checkpoint::load(path)?;
    let progress = ck
        .meta
        .progress
        .ok_or_else(|| Error::Checkpoint(format!("{} has no training progress", path.display())))?;
    if progress.stage != plan.stage_id {
        return Err(Error::Checkpoint(format!(
            "{} is from stage {}, expected stage {}",
            path.display(),
            progress.stage,
            plan.stage_id
        )));
    }
    let optimizer = ck
        .optimizer
        .ok_or_else(|| Error::Checkpoint(format!("{} has no optimizer state", path.display())))?;
    Ok((ck.model, StageState { progress, optimizer }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CodecConfig, ModelConfig, Scale};
    use crate::train::plan::default_plans;

    fn small_plan(stage: usize, steps: u64) -> StagePlan {
        let mut p = default_plans(Scale::Toy)[stage - 1].clone();
        p.steps = steps;
        p.early_stop_step = None;
        p.batch_size = 4;
        p.warmup_steps = p.warmup_steps.min(2);
        p
    }

    fn opts() -> StageOptions {
        StageOptions {
            probe_size: 8,
            log_every: 0,
            ..Default::default()
        }
    }

    #[test]
    fn stage_one_touches_only_its_groups() {
        let mut model = JanusModel::new(ModelConfig::compact(), CodecConfig::toy(), 0).unwrap();
        let plan = small_plan(1, 4);
        let mut state = fresh_state(&model, &plan, 0);
        let r = run_stage(&plan, &mut model, &Sources::procedural(48), &mut state, &opts()).unwrap();
        assert_eq!(r.steps_run, 4);
        let mut changed = r.changed_groups();
        changed.sort();
        let mut expected: Vec<ParamGroup> = plan.trainable_groups.iter().collect();
        expected.sort();
        assert_eq!(changed, expected);
        assert_eq!(model.stage, 1);
    }

    #[test]
    fn early_stop_cuts_the_budget() {
        let mut model = JanusModel::new(ModelConfig::compact(), CodecConfig::toy(), 0).unwrap();
        model.stage = 1;
        let mut plan = small_plan(2, 12);
        plan.early_stop_step = Some(5);
        let mut state = fresh_state(&model, &plan, 0);
        let r = run_stage(&plan, &mut model, &Sources::procedural(48), &mut state, &opts()).unwrap();
        assert_eq!(r.steps_run, 5);
        assert_eq!(r.logs.len(), 5);
    }

    #[test]
    fn skipping_a_stage_is_a_prerequisite_error() {
        let mut model = JanusModel::new(ModelConfig::compact(), CodecConfig::toy(), 0).unwrap();
        let plan = small_plan(3, 2);
        let mut state = fresh_state(&model, &plan, 0);
        assert!(matches!(
            run_stage(&plan, &mut model, &Sources::procedural(48), &mut state, &opts()),
            Err(Error::Prerequisite(_))
        ));
    }

    #[test]
    fn mismatched_moments_are_refused() {
        let mut model = JanusModel::new(ModelConfig::compact(), CodecConfig::toy(), 0).unwrap();
        let plan = small_plan(1, 2);
        let mut state = fresh_state(&model, &plan, 0);
        state.optimizer = AdamState::for_groups(&model.params, crate::params::GroupSet::all());
        assert!(matches!(
            run_stage(&plan, &mut model, &Sources::procedural(48), &mut state, &opts()),
            Err(Error::Freezing(_))
        ));
    }
}
