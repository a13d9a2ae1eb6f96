//! Tokenizer and understanding-encoder pretraining, run once before stage 1.
//!
//! The tokenizer learns the full VQ objective. The understanding encoder is
//! trained through a throwaway linear probe that classifies what occupies each
//! scene cell; the probe is discarded afterwards.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::corpus::{derive_seed, SampleSource, Sources};
use crate::data::preprocess::{preprocess_generation, preprocess_understanding};
use crate::data::scene::{gen_scene, Scene, Shape, Size, CELLS};
use crate::error::{Error, Result};
use crate::model::{Gradients, JanusModel};
use crate::params::{GroupSet, ParamGroup, ParamStore};
use crate::tensor::Mat;
use crate::train::optim::{AdamState, OptimizerConfig};
use crate::visual::{ImageBuffer, VqLosses};

/// Cell classes seen by the encoder probe: empty, or one of shape × color × size.
pub const CELL_CLASSES: usize = 1 + 3 * 8 * 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub tokenizer_steps: u64,
    pub encoder_steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Steps between dead-code restarts; 0 disables restarts.
    pub restart_every: u64,
    /// Held-out scenes used for the final measurements.
    pub heldout: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            tokenizer_steps: 1500,
            encoder_steps: 400,
            batch_size: 16,
            learning_rate: 2e-3,
            restart_every: 100,
            heldout: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub tokenizer_losses: Vec<VqLosses>,
    pub restarted_codes: usize,
    pub heldout_mse: f64,
    pub utilization: f64,
    pub probe_losses: Vec<f64>,
    pub probe_accuracy: f64,
    /// Wall time of tokenizer training alone.
    pub tokenizer_seconds: f64,
}

/// Class of grid cell `cell` in `scene`.
pub fn cell_class(scene: &Scene, cell: usize) -> usize {
    match scene.spec.objects.iter().find(|o| o.cell == cell) {
        None => 0,
        Some(o) => {
            let shape = Shape::ALL.iter().position(|&s| s == o.shape).expect("known shape");
            let size = match o.size {
                Size::Small => 0,
                Size::Large => 1,
            };
            1 + (shape * 8 + o.color as usize) * 2 + size
        }
    }
}

/// Fresh scenes that never appear in a corpus built from `seed`.
pub fn heldout_scenes(seed: u64, n: usize, side: usize) -> Vec<Scene> {
    (0..n).map(|i| gen_scene(derive_seed(seed, 0xfeed, i as u64), side)).collect()
}

fn draw_scenes<R: Rng>(source: &SampleSource, n: usize, rng: &mut R) -> Result<Vec<Scene>> {
    (0..n)
        .map(|_| {
            let s = source.draw(rng)?;
            s.scene()
                .cloned()
                .ok_or_else(|| Error::config("pretraining needs a source of scenes"))
        })
        .collect()
}

/// Runs both pretraining phases. The model must not have entered stage 1.
pub fn pretrain<R: Rng>(
    model: &mut JanusModel<f32>,
    sources: &Sources,
    cfg: &PretrainConfig,
    seed: u64,
    rng: &mut R,
) -> Result<PretrainReport> {
    if model.stage != 0 {
        return Err(Error::Freezing(format!(
            "pretraining touches the visual encoders, but the model is in stage {}",
            model.stage
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let side = model.codec.image_side;
    let heldout = heldout_scenes(seed, cfg.heldout, side);

    let t0 = std::time::Instant::now();
    let (tokenizer_losses, restarted_codes) = train_tokenizer(model, &sources.generation, cfg, rng)?;
    let tokenizer_seconds = t0.elapsed().as_secs_f64();
    let images: Vec<ImageBuffer> = heldout
        .iter()
        .map(|s| preprocess_generation(&s.image, side))
        .collect::<Result<_>>()?;
    let refs: Vec<&ImageBuffer> = images.iter().collect();
    model.usage.reset();
    let heldout_mse = model.reconstruction_mse(&refs)?;
    let utilization = model.usage.utilization();

    let (probe_losses, probe_accuracy) = train_encoder(model, &sources.understanding, &heldout, cfg, rng)?;
    Ok(PretrainReport {
        tokenizer_losses,
        restarted_codes,
        heldout_mse,
        utilization,
        probe_losses,
        probe_accuracy,
        tokenizer_seconds,
    })
}

fn generation_batch<R: Rng>(model: &JanusModel<f32>, source: &SampleSource, n: usize, rng: &mut R) -> Result<Vec<ImageBuffer>> {
    draw_scenes(source, n, rng)?
        .iter()
        .map(|s| preprocess_generation(&s.image, model.codec.image_side))
        .collect()
}

/// Replaces codebook rows by encoder outputs of real patches, slightly jittered.
fn reseed_codes<R: Rng>(model: &mut JanusModel<f32>, latents: &Mat<f32>, codes: &[usize], rng: &mut R) {
    let jitter = Normal::new(0.0, 0.01).expect("valid std");
    let mut rows: Vec<usize> = (0..latents.rows).collect();
    rows.shuffle(rng);
    let cb = model.params.value_mut(model.layout.vq.codebook);
    for (i, &k) in codes.iter().enumerate() {
        let src = latents.row(rows[i % rows.len()]);
        for (d, &v) in cb.row_mut(k).iter_mut().zip(src) {
            *d = v + jitter.sample(rng) as f32;
        }
    }
}

/// Moves `dead` codes onto the latents the live codes represent worst, one at a
/// time, so rare patch types get a code before common ones get a second.
fn restart_dead<R: Rng>(model: &mut JanusModel<f32>, latents: &Mat<f32>, dead: &[usize], rng: &mut R) {
    let jitter = Normal::new(0.0, 0.01).expect("valid std");
    let dist = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f32>();
    let cb = model.params.value_mut(model.layout.vq.codebook);
    let live: Vec<usize> = (0..cb.rows).filter(|c| !dead.contains(c)).collect();
    let mut err: Vec<f32> = (0..latents.rows)
        .map(|r| live.iter().map(|&c| dist(latents.row(r), cb.row(c))).fold(f32::INFINITY, f32::min))
        .collect();
    for &k in dead {
        let far = (0..err.len()).fold(0, |a, i| if err[i] > err[a] { i } else { a });
        let src = latents.row(far).to_vec();
        for (d, &v) in cb.row_mut(k).iter_mut().zip(&src) {
            *d = v + jitter.sample(rng) as f32;
        }
        for (r, e) in err.iter_mut().enumerate() {
            *e = e.min(dist(latents.row(r), &src));
        }
    }
}

fn train_tokenizer<R: Rng>(
    model: &mut JanusModel<f32>,
    source: &SampleSource,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<(Vec<VqLosses>, usize)> {
    let groups = GroupSet::from_groups(&[ParamGroup::GenTokenizer]);
    let mut opt = AdamState::for_groups(&model.params, groups);
    let ocfg = OptimizerConfig::default();
    let k = model.config.codebook_size;

    // data-dependent init: every code starts on a real latent
    let first = generation_batch(model, source, cfg.batch_size.max(8), rng)?;
    let lat = model.vq_encode_batch(&first.iter().collect::<Vec<_>>())?;
    reseed_codes(model, &lat, &(0..k).collect::<Vec<_>>(), rng);

    let mut window = vec![0u64; k];
    let mut restarted = 0;
    let mut history = Vec::with_capacity(cfg.tokenizer_steps as usize);
    for step in 0..cfg.tokenizer_steps {
        let imgs = generation_batch(model, source, cfg.batch_size, rng)?;
        let refs: Vec<&ImageBuffer> = imgs.iter().collect();
        let (losses, grads, snap) = model.vq_objective(&refs, None, true)?;
        for &id in &snap.ids {
            window[id] += 1;
        }
        opt.step(&mut model.params, &grads, cfg.learning_rate, &ocfg)?;
        history.push(losses);

        let last = step + 1 == cfg.tokenizer_steps;
        if cfg.restart_every > 0 && (step + 1) % cfg.restart_every == 0 && !last {
            let dead: Vec<usize> = (0..k).filter(|&c| window[c] == 0).collect();
            if !dead.is_empty() {
                let lat = model.vq_encode_batch(&refs)?;
                restart_dead(model, &lat, &dead, rng);
                let cb = model.layout.vq.codebook;
                for m in [&mut opt.m[cb], &mut opt.v[cb]].into_iter().flatten() {
                    for &c in &dead {
                        m.row_mut(c).fill(0.0);
                    }
                }
                restarted += dead.len();
            }
            window.fill(0);
        }
    }
    Ok((history, restarted))
}

fn cell_targets(scenes: &[Scene]) -> Vec<(usize, usize)> {
    scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..CELLS).map(move |c| (i * CELLS + c, cell_class(s, c))))
        .collect()
}

fn train_encoder<R: Rng>(
    model: &mut JanusModel<f32>,
    source: &SampleSource,
    heldout: &[Scene],
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if model.codec.und_positions() != CELLS {
        return Err(Error::config(format!(
            "the encoder probe needs one understanding position per scene cell ({CELLS}), codec has {}",
            model.codec.und_positions()
        )));
    }
    let n = model.params.len();
    let feat = model.codec.und_feat_dim;
    let mut head = ParamStore::<f32>::new();
    let mut init = ChaCha8Rng::seed_from_u64(rng.random());
    let w0 = Normal::new(0.0, 1.0 / (feat as f64).sqrt()).expect("valid std");
    head.push(
        "probe.w",
        ParamGroup::UndEncoder,
        Mat::from_vec(feat, CELL_CLASSES, (0..feat * CELL_CLASSES).map(|_| w0.sample(&mut init) as f32).collect()),
    );
    head.push("probe.b", ParamGroup::UndEncoder, Mat::zeros(1, CELL_CLASSES));

    let groups = GroupSet::from_groups(&[ParamGroup::UndEncoder]);
    let mut opt = AdamState::for_groups(&model.params, groups);
    let mut head_opt = AdamState::for_groups(&head, groups);
    let ocfg = OptimizerConfig::default();
    let mut losses = Vec::new();

    for _ in 0..cfg.encoder_steps {
        let scenes = draw_scenes(source, cfg.batch_size, rng)?;
        let imgs: Vec<ImageBuffer> = scenes
            .iter()
            .map(|s| preprocess_understanding(&s.image, model.codec.image_side))
            .collect::<Result<_>>()?;
        let refs: Vec<&ImageBuffer> = imgs.iter().collect();
        let targets = cell_targets(&scenes);
        let count = targets.len();

        let mut b = model.binder(groups);
        let enc = model.und_encoder_graph(&mut b, &refs)?;
        let w = b.g.param(n, head.value(0).clone(), true);
        let bias = b.g.param(n + 1, head.value(1).clone(), true);
        let logits = b.g.matmul(enc, w);
        let logits = b.g.add_row(logits, bias);
        let ce = b.g.cross_entropy(logits, targets);
        let loss = b.g.scale(ce, 1.0 / count as f32);
        losses.push(b.g.value(loss).data[0] as f64);
        let pairs = b.g.backward(loss);
        let (head_pairs, model_pairs): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(id, _)| *id >= n);
        let grads = Gradients::from_pairs(n, model_pairs);
        let head_grads = Gradients::from_pairs(2, head_pairs.into_iter().map(|(id, g)| (id - n, g)).collect());
        opt.step(&mut model.params, &grads, cfg.learning_rate, &ocfg)?;
        head_opt.step(&mut head, &head_grads, cfg.learning_rate, &ocfg)?;
    }

    // held-out probe accuracy
    let imgs: Vec<ImageBuffer> = heldout
        .iter()
        .map(|s| preprocess_understanding(&s.image, model.codec.image_side))
        .collect::<Result<_>>()?;
    let refs: Vec<&ImageBuffer> = imgs.iter().collect();
    let targets = cell_targets(heldout);
    let mut b = model.binder(GroupSet::empty());
    let enc = model.und_encoder_graph(&mut b, &refs)?;
    let w = b.g.input(head.value(0).clone());
    let bias = b.g.input(head.value(1).clone());
    let logits = b.g.matmul(enc, w);
    let logits = b.g.add_row(logits, bias);
    let lv = b.g.value(logits);
    let correct = targets
        .iter()
        .filter(|&&(r, c)| {
            let row = lv.row(r);
            let best = (0..row.len()).fold(0, |a, j| if row[j] > row[a] { j } else { a });
            best == c
        })
        .count();
    let accuracy = if targets.is_empty() {
        0.0
    } else {
        correct as f64 / targets.len() as f64
    };
    Ok((losses, accuracy))
}
