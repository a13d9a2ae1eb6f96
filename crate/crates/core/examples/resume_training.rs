//! Interrupts a short run inside stage 2, resumes it, and compares against an
//! uninterrupted run parameter by parameter.

use jmini::data::Sources;
use jmini::train::{run_pipeline, PipelineConfig, PretrainConfig};
use jmini::{ModelConfig, ParamGroup, Scale};

fn config(dir: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_scale(Scale::Toy, 3);
    cfg.model = ModelConfig::compact();
    cfg.pretrain = PretrainConfig {
        tokenizer_steps: 60,
        encoder_steps: 20,
        heldout: 8,
        ..PretrainConfig::default()
    };
    for (p, steps) in cfg.plans.iter_mut().zip([10, 30, 10]) {
        p.steps = steps;
        p.early_stop_step = None;
        p.batch_size = 8;
    }
    cfg.stage.run_dir = Some(dir.to_path_buf());
    cfg.stage.checkpoint_every = 5;
    cfg.stage.probe_size = 8;
    cfg
}

fn main() -> jmini::Result<()> {
    let sources = Sources::procedural(48);
    let root = std::env::temp_dir().join("jmini_resume_example");
    let (a_dir, b_dir) = (root.join("straight"), root.join("interrupted"));
    let (a, _) = run_pipeline(&config(&a_dir), &sources, 0, false)?;

    let mut cfg = config(&b_dir);
    cfg.stage.interrupt_at = Some((2, 17));
    let (_, partial) = run_pipeline(&cfg, &sources, 0, false)?;
    println!("stopped after {} stage-2 steps", partial.stages.last().map_or(0, |s| s.steps_run));
    cfg.stage.interrupt_at = None;
    let (b, _) = run_pipeline(&cfg, &sources, 2, true)?;

    for g in ParamGroup::ALL {
        let (x, y) = (a.params.group_digest(g), b.params.group_digest(g));
        println!("{:<20} {} {}", g.name(), &x[..12], if x == y { "same" } else { "DIFFERENT" });
    }
    Ok(())
}
