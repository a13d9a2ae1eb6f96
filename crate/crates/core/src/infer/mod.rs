//! Sampling in both directions and the compositional generation evaluator.

pub mod checker;
pub mod eval;
pub mod sampler;

pub use checker::{calibrate, check, detect, Calibration, Detection};
pub use eval::{compositional_eval, eval_scene, evaluate_with, EvalReport, EvalSample};
pub use sampler::{generate_ids, generate_image, sample_logits, understand, Generated, SamplerConfig};
