//! The six-category benchmark, first on ground-truth renders (an upper bound
//! of 1.0 everywhere), then on a checkpoint when one is given.
//!
//! cargo run --example evaluate -- [runs/toy/stage3.ckpt]

use jmini::infer::{compositional_eval, evaluate_with, SamplerConfig};
use jmini::model::checkpoint;

fn main() -> jmini::Result<()> {
    let truth = evaluate_with(50, 0, 48, false, |scene, _| Ok(scene.image.clone()))?;
    println!("ground truth\n{}", truth.table());
    if let Some(path) = std::env::args().nth(1) {
        let model = checkpoint::load(path.as_ref())?.model;
        let sampler = SamplerConfig::generation(model.config.codebook_size);
        let report = compositional_eval(&model, 50, 0, &sampler, true)?;
        println!("{path}\n{}", report.table());
        report.write("runs/example_eval".as_ref())?;
    }
    Ok(())
}
