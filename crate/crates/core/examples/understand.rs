//! Asks a trained checkpoint questions about fresh scenes and shows the references.
//!
//! cargo run --example understand -- runs/toy/stage3.ckpt

use jmini::data::gen_scene;
use jmini::data::scene::question_answer;
use jmini::infer::{understand, SamplerConfig};
use jmini::model::checkpoint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> jmini::Result<()> {
    let ckpt = std::env::args().nth(1).unwrap_or_else(|| "runs/toy/stage3.ckpt".into());
    let model = checkpoint::load(ckpt.as_ref())?.model;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..6 {
        let scene = gen_scene(5000 + i, model.codec.image_side);
        let (q, reference) = question_answer(&scene.spec, &mut rng);
        let a = understand(&model, &scene.image, &q, &SamplerConfig::greedy())?;
        println!("{q}? {a}  (reference: {reference})");
    }
    Ok(())
}
