mod common;

use common::random_sequence;
use jmini::model::{Payload, Visual};
use jmini::{CodecConfig, JanusModel, ModelConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Changing position `j` leaves both heads at every earlier position bit-identical.
    #[test]
    fn outputs_never_depend_on_later_positions(seed in any::<u64>(), j in any::<prop::sample::Index>()) {
        let model: JanusModel<f32> = JanusModel::new(ModelConfig::tiny(), CodecConfig::tiny(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_sequence(&model.config, &model.codec, model.config.context_window, &mut rng);
        let j = j.index(seq.len());
        let mut changed = seq.clone();
        match &mut changed.entries[j].payload {
            Payload::Text(t) => *t = (*t + 7) % model.config.vocab_size as u32,
            Payload::GenId(g) => *g = (*g + 7) % model.config.codebook_size as u32,
            Payload::UndFeature { visual, cell } => {
                let Visual::Features(f) = &mut changed.visuals[*visual] else { unreachable!() };
                let d = f.feat_dim;
                f.data[*cell * d] -= 1.0;
            }
        }
        let a = model.forward_sequence(&seq).unwrap();
        let b = model.forward_sequence(&changed).unwrap();
        for i in 0..j {
            prop_assert_eq!(a.text_logits.row(i), b.text_logits.row(i));
            prop_assert_eq!(a.image_logits.row(i), b.image_logits.row(i));
        }
        prop_assert_ne!(a.text_logits.row(j), b.text_logits.row(j));
    }
}
