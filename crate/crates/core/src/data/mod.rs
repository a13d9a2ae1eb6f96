//! Procedural corpora, preprocessing, ratio mixing, packing, and sample templating.

pub mod corpus;
pub mod mix;
pub mod pack;
pub mod preprocess;
pub mod scene;
pub mod templates;

pub use corpus::{build_corpus, load_corpus, write_corpus, CorpusConfig, Manifest, Sample, SampleKind, SampleSource, Sources};
pub use mix::{draw_kinds, mix, MixRatio};
pub use pack::{pack, PackedBatch};
pub use preprocess::{preprocess_generation, preprocess_understanding};
pub use scene::{gen_scene, gen_scene_in, Category, Claim, Scene, ShapesSceneSpec};
pub use templates::{to_sequence, GenerationMode, SequenceOptions, UnderstandingMode};
