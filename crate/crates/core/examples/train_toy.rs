//! Full toy pipeline: corpus, stage 0, stages 1 to 3, with checkpoints under
//! the run directory. About six minutes on one core.
//!
//! cargo run --release --example train_toy -- runs/toy

use jmini::cli::{summary, RunConfig};
use jmini::data::{build_corpus, Sources};
use jmini::train::run_pipeline;
use jmini::Scale;

fn main() -> jmini::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = RunConfig::defaults(Scale::Toy);
    if let Some(dir) = std::env::args().nth(1) {
        cfg.paths.run = dir.into();
    }
    let sources = Sources::from_pools(build_corpus(&cfg.corpus_config()));
    let (_, report) = run_pipeline(&cfg.pipeline(), &sources, 0, false)?;
    print!("{}", summary(&report));
    println!("checkpoints in {}", cfg.paths.run.display());
    Ok(())
}
