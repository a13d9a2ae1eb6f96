//! Both input paths through one untrained model: an understanding sequence
//! built from pixels and a generation sequence built from tokenizer ids.

use jmini::data::gen_scene;
use jmini::model::{generation_sequence, understanding_sequence, Reduction, Visual, Vocab};
use jmini::{CodecConfig, GroupSet, JanusModel, ModelConfig};

fn main() -> jmini::Result<()> {
    let model: JanusModel<f32> = JanusModel::new(ModelConfig::toy(), CodecConfig::toy(), 0)?;
    println!("{} parameters", model.params.numel());
    for g in jmini::ParamGroup::ALL {
        println!("  {:<20} {:>9}", g.name(), model.params.group_numel(g));
    }
    let vocab = Vocab::standard();
    let scene = gen_scene(1, model.codec.image_side);
    let und = understanding_sequence(
        &vocab.encode("describe the image")?,
        Visual::Image(scene.image.clone()),
        model.codec.und_positions(),
        &vocab.encode(&scene.spec.dense_caption())?,
    );
    let ids = model.tokenize(&scene.image)?;
    let gen = generation_sequence(&vocab.encode(&scene.caption())?, &ids);
    for (name, seq) in [("understanding", &und), ("generation", &gen)] {
        let out = model.forward_sequence(seq)?;
        println!(
            "{name}: {} positions, text logits {}x{}, image logits {}x{}",
            seq.len(),
            out.text_logits.rows,
            out.text_logits.cols,
            out.image_logits.rows,
            out.image_logits.cols
        );
    }
    let (loss, grads) = model.batch_loss(&[und, gen], GroupSet::all(), Reduction::Mean)?;
    println!("mean loss {:.3} over {} targets, {} tensors with gradients", loss.mean(), loss.count(), grads.by_param.iter().flatten().count());
    Ok(())
}
