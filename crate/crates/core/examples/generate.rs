//! Samples an image for a caption from a trained checkpoint.
//!
//! cargo run --example generate -- runs/toy/stage3.ckpt "two red circles" [seed]

use jmini::infer::{generate_ids, SamplerConfig};
use jmini::model::checkpoint;

fn main() -> jmini::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let ckpt = args.first().map(String::as_str).unwrap_or("runs/toy/stage3.ckpt");
    let caption = args.get(1).map(String::as_str).unwrap_or("a red circle");
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let model = checkpoint::load(ckpt.as_ref())?.model;
    let cfg = SamplerConfig {
        seed,
        ..SamplerConfig::generation(model.config.codebook_size)
    };
    let g = generate_ids(&model, caption, &cfg)?;
    println!("ids {:?}", g.ids);
    for cfg_scale in [1.0, 3.0] {
        let out = format!("runs/generate_cfg{cfg_scale}.png");
        generate_ids(&model, caption, &SamplerConfig { cfg_scale, ..cfg })?.image.write_png(out.as_ref())?;
        println!("wrote {out}");
    }
    Ok(())
}
