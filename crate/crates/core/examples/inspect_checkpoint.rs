//! Prints the metadata and per-group digests of a checkpoint.

use jmini::cli::describe_checkpoint;
use jmini::model::checkpoint;

fn main() -> jmini::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "runs/toy/stage1.ckpt".into());
    let loaded = checkpoint::load(path.as_ref())?;
    print!("{}", describe_checkpoint(&loaded.meta, &loaded.model));
    Ok(())
}
