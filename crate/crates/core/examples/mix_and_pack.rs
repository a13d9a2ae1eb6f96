//! Draws a stage-2 batch at 2:3:5, turns it into sequences and packs them into rows.

use jmini::data::{mix, pack, to_sequence, MixRatio, SequenceOptions, Sources};
use jmini::{CodecConfig, JanusModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> jmini::Result<()> {
    let model: JanusModel<f32> = JanusModel::new(ModelConfig::compact(), CodecConfig::toy(), 0)?;
    let ratio: MixRatio = "2:3:5".parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = mix(&Sources::procedural(48), &ratio, 16, &mut rng)?;
    let seqs = batch
        .iter()
        .map(|s| to_sequence(s, &model, &SequenceOptions::default(), &mut rng))
        .collect::<jmini::Result<Vec<_>>>()?;
    for (s, q) in batch.iter().zip(&seqs) {
        println!("{:?}: {} positions, {} trained", s.kind(), q.len(), q.flagged());
    }
    let packed = pack(seqs, model.config.context_window)?;
    println!("{} rows of {}", packed.rows.len(), packed.row_len);
    for (r, lens) in packed.row_lengths().iter().enumerate() {
        let used: usize = lens.iter().sum();
        println!("row {r}: {lens:?} ({:.0}% full)", 100.0 * used as f64 / packed.row_len as f64);
    }
    Ok(())
}
