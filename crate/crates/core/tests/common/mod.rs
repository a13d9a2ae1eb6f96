#![allow(dead_code)]

use std::io::Write;

use jmini::model::vocab::{BOI, BOS, EOI};
use jmini::model::{ModalitySequence, SequenceBuilder, Visual};
use jmini::visual::FeatureGrid;
use jmini::{CodecConfig, ModelConfig};
use rand::Rng;

/// Writes straight to stderr so the line shows even when test output is captured.
pub fn verdict(id: &str, pass: bool, detail: impl AsRef<str>) {
    let line = format!("{} {id}: {}\n", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_features<R: Rng>(codec: &CodecConfig, rng: &mut R) -> FeatureGrid {
    let g = codec.und_grid_side();
    let data = (0..g * g * codec.und_feat_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureGrid::new(g, g, codec.und_feat_dim, data).unwrap()
}

/// A random well-formed sequence of at most `max_len` positions with at least
/// one trained position: text, optionally an understanding block, optionally image ids.
pub fn random_sequence<R: Rng>(cfg: &ModelConfig, codec: &CodecConfig, max_len: usize, rng: &mut R) -> ModalitySequence {
    let cells = codec.und_positions();
    let ids = codec.tokens_per_image();
    let word = |rng: &mut R| rng.random_range(5..cfg.vocab_size as u32);
    loop {
        let mut b = SequenceBuilder::new().text(&[BOS], false);
        let mut len = 1;
        if rng.random_bool(0.5) && len + cells + 2 < max_len {
            b = b.text(&[BOI], false).visual(Visual::Features(random_features(codec, rng)), cells).text(&[EOI], false);
            len += cells + 2;
        }
        let n_text = rng.random_range(1..=6).min(max_len.saturating_sub(len + 1));
        let text: Vec<u32> = (0..n_text).map(|_| word(rng)).collect();
        b = b.text(&text, rng.random_bool(0.7));
        len += n_text;
        if rng.random_bool(0.5) && len + ids < max_len {
            let g: Vec<u32> = (0..ids).map(|_| rng.random_range(0..cfg.codebook_size as u32)).collect();
            b = b.text(&[BOI], false).gen_ids(&g, true);
        }
        let s = b.finish();
        if s.flagged() > 0 && s.len() <= max_len {
            return s;
        }
    }
}

use std::path::Path;

use jmini::train::{PipelineConfig, PretrainConfig};
use jmini::Scale;

/// The toy pipeline shrunk to seconds: compact model, short stages.
pub fn quick_pipeline(seed: u64, run_dir: Option<&Path>) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_scale(Scale::Toy, seed);
    cfg.model = ModelConfig::compact();
    cfg.pretrain = PretrainConfig {
        tokenizer_steps: 60,
        encoder_steps: 20,
        batch_size: 8,
        restart_every: 20,
        heldout: 8,
        ..PretrainConfig::default()
    };
    for (p, steps) in cfg.plans.iter_mut().zip([10, 30, 10]) {
        p.steps = steps;
        p.early_stop_step = None;
        p.warmup_steps = p.warmup_steps.min(3);
        p.batch_size = 8;
    }
    cfg.stage.run_dir = run_dir.map(Path::to_path_buf);
    cfg.stage.checkpoint_every = 5;
    cfg.stage.probe_size = 8;
    cfg.stage.log_every = 0;
    cfg
}

use jmini::data::{mix, pack, MixRatio, SampleKind, Sources};
use jmini::model::Reduction;
use jmini::{GroupSet, JanusModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Worst relative gap between packed and one-by-one loss or gradient over `sets` random sequence sets.
pub fn packing_gap(model: &JanusModel<f64>, sets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sets {
        let n = rng.random_range(2..=7);
        let seqs: Vec<_> = (0..n)
            .map(|_| {
                let max = rng.random_range(3..=model.config.context_window);
                random_sequence(&model.config, &model.codec, max, &mut rng)
            })
            .collect();
        let (lu, gu) = model.batch_loss(&seqs, GroupSet::all(), Reduction::Sum).unwrap();
        let batch = pack(seqs, model.config.context_window).unwrap();
        let (lp, gp) = model.packed_loss(&batch, GroupSet::all(), Reduction::Sum).unwrap();
        assert_eq!(lu.count(), lp.count());
        worst = worst.max(rel_diff(lu.total(), lp.total(), 1e-12));
        for id in 0..model.params.len() {
            match (gu.get(id), gp.get(id)) {
                (Some(a), Some(b)) => {
                    let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
                    for (x, y) in a.data.iter().zip(&b.data) {
                        worst = worst.max((x - y).abs() / scale);
                    }
                }
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

fn brute_force(codes: &[Vec<f64>], z: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, c) in codes.iter().enumerate() {
        let d: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Runs `quantize` against a brute-force f64 scan on half-integer lattice inputs,
/// where every distance is exact and ties are common. Returns (mismatches, tied latents).
pub fn quantizer_oracle(cases: usize, seed: u64) -> (usize, usize) {
    use jmini::tensor::Mat;
    use jmini::visual::VqCodebook;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice = |rng: &mut ChaCha8Rng| rng.random_range(-6i32..=6) as f64 * 0.5;
    let (mut wrong, mut ties) = (0, 0);
    for _ in 0..cases {
        let k = rng.random_range(1..=64);
        let d = rng.random_range(1..=8);
        let codes: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| lattice(&mut rng)).collect()).collect();
        let n = rng.random_range(1..=16);
        let latents: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    codes[rng.random_range(0..k)].clone()
                } else {
                    (0..d).map(|_| lattice(&mut rng)).collect()
                }
            })
            .collect();
        let cm = Mat::from_vec(k, d, codes.iter().flatten().map(|&v| v as f32).collect());
        let lm = Mat::from_vec(n, d, latents.iter().flatten().map(|&v| v as f32).collect());
        let q = VqCodebook::new(&cm, None).quantize(&lm).unwrap();
        for (i, z) in latents.iter().enumerate() {
            let want = brute_force(&codes, z);
            if q.ids[i] as usize != want || q.vectors.row(i) != cm.row(want) {
                wrong += 1;
            }
            let dist = |c: &Vec<f64>| c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            ties += (codes.iter().filter(|c| dist(c) == dist(&codes[want])).count() > 1) as usize;
        }
    }
    (wrong, ties)
}

/// Per-kind counts over `batches` mixed batches of `batch` samples.
pub fn kind_counts(sources: &Sources, ratio: &MixRatio, batches: usize, batch: usize, seed: u64) -> [u64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0u64; 3];
    for _ in 0..batches {
        for s in mix(sources, ratio, batch, &mut rng).unwrap() {
            counts[SampleKind::ALL.iter().position(|&k| k == s.kind()).unwrap()] += 1;
        }
    }
    counts
}

/// Pearson statistic of `counts` against `ratio` and the 1% critical value.
pub fn chi_square(counts: &[u64; 3], ratio: &MixRatio) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: u64 = counts.iter().sum();
    let stat = counts
        .iter()
        .zip(ratio.probabilities())
        .map(|(&o, p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    (stat, ChiSquared::new(2.0).unwrap().inverse_cdf(0.99))
}

/// Nudges the payload at `at`: the next token or id, or a shifted feature cell.
pub fn perturb(seq: &mut ModalitySequence, at: usize, vocab: u32, codebook: u32) {
    use jmini::model::Payload;
    match &mut seq.entries[at].payload {
        Payload::Text(t) => *t = (*t + 1) % vocab,
        Payload::GenId(g) => *g = (*g + 1) % codebook,
        Payload::UndFeature { visual, cell } => {
            let Visual::Features(f) = &mut seq.visuals[*visual] else {
                unreachable!("test sequences carry precomputed features")
            };
            let d = f.feat_dim;
            for v in &mut f.data[*cell * d..(*cell + 1) * d] {
                *v += 0.5;
            }
        }
    }
}
