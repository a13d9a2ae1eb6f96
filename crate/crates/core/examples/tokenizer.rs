//! Stage 0 alone: trains the VQ tokenizer and understanding encoder, then
//! reports reconstruction error, codebook use and a sample round trip.
//!
//! cargo run --example tokenizer -- [tokenizer_steps]

use jmini::data::{gen_scene, Sources};
use jmini::train::{pretrain, PretrainConfig};
use jmini::{CodecConfig, JanusModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> jmini::Result<()> {
    let mut cfg = PretrainConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.tokenizer_steps = n.parse().map_err(|_| jmini::Error::Config("steps must be an integer".into()))?;
    }
    let mut model = JanusModel::new(ModelConfig::toy(), CodecConfig::toy(), 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = pretrain(&mut model, &Sources::procedural(48), &cfg, 0, &mut rng)?;
    println!(
        "held-out mse {:.4}, utilization {:.2}, {} codes restarted, probe accuracy {:.2}, {:.0}s",
        r.heldout_mse, r.utilization, r.restarted_codes, r.probe_accuracy, r.tokenizer_seconds
    );
    let scene = gen_scene(99, 48);
    let ids = model.tokenize(&scene.image)?;
    println!("{} -> {ids:?}", scene.caption());
    std::fs::create_dir_all("runs").map_err(|e| jmini::Error::io("runs", e))?;
    scene.image.write_png("runs/tokenizer_in.png".as_ref())?;
    model.vq_decode(&ids)?.write_png("runs/tokenizer_out.png".as_ref())?;
    Ok(())
}
