//! Compositional generation benchmark over six prompt categories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::corpus::derive_seed;
use crate::data::scene::{gen_scene_in, Category, Claim, Scene};
use crate::error::{Error, Result};
use crate::infer::checker::{check, Calibration};
use crate::infer::sampler::{generate_ids, SamplerConfig};
use crate::model::JanusModel;
use crate::visual::ImageBuffer;

/// One evaluated prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub category: Category,
    pub index: usize,
    pub prompt: String,
    pub claim: Claim,
    pub seed: u64,
    pub passed: bool,
    #[serde(skip)]
    pub image: Option<ImageBuffer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_per_category: usize,
    pub accuracy: BTreeMap<Category, f64>,
    /// Unweighted mean of the six category accuracies.
    pub overall: f64,
    pub samples: Vec<EvalSample>,
}

impl EvalReport {
    pub fn from_samples(n_per_category: usize, samples: Vec<EvalSample>) -> Self {
        let accuracy: BTreeMap<Category, f64> = Category::ALL
            .iter()
            .map(|&c| {
                let (pass, total) = samples
                    .iter()
                    .filter(|s| s.category == c)
                    .fold((0usize, 0usize), |(p, t), s| (p + s.passed as usize, t + 1));
                (c, if total == 0 { 0.0 } else { pass as f64 / total as f64 })
            })
            .collect();
        let overall = accuracy.values().sum::<f64>() / Category::ALL.len() as f64;
        Self {
            n_per_category,
            accuracy,
            overall,
            samples,
        }
    }

    /// Plain-text table: one column per category, then Overall.
    pub fn table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for c in Category::ALL {
            let w = c.title().len().max(6);
            let _ = write!(head, "| {:^w$} ", c.title());
            let _ = write!(row, "| {:^w$.2} ", self.accuracy[&c]);
        }
        let _ = write!(head, "| {:^7} |", "Overall");
        let _ = write!(row, "| {:^7.2} |", self.overall);
        format!("{head}\n{}\n{row}\n", "-".repeat(head.len()))
    }

    /// Writes `report.json`, `report.txt` and, when images were kept, one PNG per prompt.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.table()).map_err(|e| Error::io(&txt, e))?;
        for s in &self.samples {
            if let Some(img) = &s.image {
                img.write_png(&dir.join(format!("{}_{:03}.png", s.category.name(), s.index)))?;
            }
        }
        Ok(())
    }
}

/// Held-out scene behind prompt `index` of `category`; never drawn by corpus construction.
pub fn eval_scene(category: Category, index: usize, seed: u64, side: usize) -> Scene {
    let k = Category::ALL.iter().position(|&c| c == category).expect("known category") as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xe7a1_0000 + k, index as u64));
    gen_scene_in(category, &mut rng, side)
}

/// Scores any image producer against the checker. The producer sees the
/// held-out scene (its caption is the prompt) and a per-prompt seed.
pub fn evaluate_with<F>(n_per_category: usize, seed: u64, side: usize, keep_images: bool, produce: F) -> Result<EvalReport>
where
    F: Fn(&Scene, u64) -> Result<ImageBuffer> + Sync,
{
    let cal = Calibration::shipped();
    let jobs: Vec<(Category, usize)> = Category::ALL
        .iter()
        .flat_map(|&c| (0..n_per_category).map(move |i| (c, i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(category, index)| {
            let scene = eval_scene(category, index, seed, side);
            let s = derive_seed(seed, 0x5a3e, (category as u64) << 32 | index as u64);
            let img = produce(&scene, s)?;
            let passed = check(&img, category, &scene.claim, cal);
            Ok(EvalSample {
                category,
                index,
                prompt: scene.caption(),
                claim: scene.claim,
                seed: s,
                passed,
                image: keep_images.then_some(img),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_samples(n_per_category, samples))
}

pub fn compositional_eval(
    model: &JanusModel<f32>,
    n_per_category: usize,
    seed: u64,
    sampler: &SamplerConfig,
    keep_images: bool,
) -> Result<EvalReport> {
    sampler.validate()?;
    evaluate_with(n_per_category, seed, model.codec.image_side, keep_images, |scene, s| {
        let cfg = SamplerConfig { seed: s, ..*sampler };
        Ok(generate_ids(model, &scene.caption(), &cfg)?.image)
    })
}
