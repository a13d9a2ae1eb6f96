//! Writes a small shapes corpus to disk and reloads it.
//!
//! cargo run --example build_corpus -- /tmp/shapes

use jmini::data::{load_corpus, write_corpus, CorpusConfig};

fn main() -> jmini::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "runs/example_corpus".into());
    let cfg = CorpusConfig {
        understanding: 200,
        text: 100,
        generation: 400,
        ..CorpusConfig::default()
    };
    let manifest = write_corpus(dir.as_ref(), &cfg)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    let (_, sources) = load_corpus(dir.as_ref())?;
    println!("reloaded; understanding pool empty: {}", sources.understanding.is_empty());
    Ok(())
}
