//! One scene per benchmark category with its prompt, dense caption and a QA pair.

use jmini::data::scene::question_answer;
use jmini::data::{gen_scene_in, Category};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> jmini::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    std::fs::create_dir_all("runs/scenes").map_err(|e| jmini::Error::io("runs/scenes", e))?;
    for cat in Category::ALL {
        let scene = gen_scene_in(cat, &mut rng, 48);
        let (q, a) = question_answer(&scene.spec, &mut rng);
        println!("{:<14} {}", cat.title(), scene.caption());
        println!("{:<14} {}", "", scene.spec.dense_caption());
        println!("{:<14} {q}? {a}", "");
        scene.image.write_png(format!("runs/scenes/{}.png", cat.name()).as_ref())?;
    }
    Ok(())
}
