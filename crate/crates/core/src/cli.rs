//! The `jmini` command line: run configuration, subcommands and exit codes.
//!
//! A run is fully described by a TOML file plus a seed. The file overlays the
//! defaults of its scale preset section by section, and flags override both.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{CodecConfig, ModelConfig, Scale};
use crate::data::corpus::{load_corpus, read_manifest, write_corpus, CorpusConfig};
use crate::error::{Error, Result};
use crate::infer::{compositional_eval, generate_ids, understand, SamplerConfig};
use crate::model::checkpoint::{self, CheckpointMeta};
use crate::model::JanusModel;
use crate::params::ParamGroup;
use crate::train::{default_plans, run_pipeline, OptimizerConfig, PipelineConfig, PipelineReport, PretrainConfig, StageOptions, StagePlan};
use crate::visual::ImageBuffer;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONTRACT: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;
pub const EXIT_OTHER: i32 = 1;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Image(_) | Error::Json(_) => EXIT_IO,
        Error::Contract(_) | Error::Prerequisite(_) | Error::Length { .. } | Error::Freezing(_) | Error::Domain(_) => {
            EXIT_CONTRACT
        }
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        _ => EXIT_OTHER,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub run: PathBuf,
    /// Checkpoint read by generate, understand, eval and inspect; defaults to the run's stage-3 output.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub understanding: usize,
    pub text: usize,
    pub generation: usize,
    pub generation_sub_ratio: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub optimizer: OptimizerConfig,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub probe_size: usize,
    pub caption_dropout: f64,
    pub dense_share: f64,
}

/// Image sampling settings. Understanding always decodes greedily.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub temperature: f64,
    /// Defaults to the codebook size.
    pub top_k: Option<usize>,
    pub cfg_scale: f64,
    pub max_text_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scale: Scale,
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub codec: CodecConfig,
    pub corpus: CorpusSection,
    pub pretrain: PretrainConfig,
    pub stage1: StagePlan,
    pub stage2: StagePlan,
    pub stage3: StagePlan,
    pub training: TrainingSection,
    pub sampler: SamplerSection,
}

fn merge(base: &mut toml::Value, patch: toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

impl RunConfig {
    pub fn defaults(scale: Scale) -> Self {
        let corpus = CorpusConfig::default();
        let stage = StageOptions::default();
        let [stage1, stage2, stage3] = default_plans(scale);
        Self {
            scale,
            seed: 0,
            paths: Paths {
                corpus: PathBuf::from("runs/corpus"),
                run: PathBuf::from(format!("runs/{scale}")),
                checkpoint: None,
            },
            model: ModelConfig::for_scale(scale),
            codec: CodecConfig::for_scale(scale),
            corpus: CorpusSection {
                understanding: corpus.understanding,
                text: corpus.text,
                generation: corpus.generation,
                generation_sub_ratio: corpus.generation_sub_ratio,
            },
            pretrain: PretrainConfig::default(),
            stage1,
            stage2,
            stage3,
            training: TrainingSection {
                optimizer: stage.optimizer,
                log_every: stage.log_every,
                checkpoint_every: stage.checkpoint_every,
                probe_size: stage.probe_size,
                caption_dropout: stage.caption_dropout,
                dense_share: stage.dense_share,
            },
            sampler: SamplerSection {
                temperature: 1.0,
                top_k: None,
                cfg_scale: 1.0,
                max_text_tokens: 24,
            },
        }
    }

    /// Parses `text` over the defaults of its scale; `scale` wins over the file's own.
    pub fn from_toml(text: &str, scale: Option<Scale>) -> Result<Self> {
        let file: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let scale = match (scale, file.get("scale")) {
            (Some(s), _) => s,
            (None, Some(v)) => v.clone().try_into().map_err(|e| Error::config(format!("scale: {e}")))?,
            (None, None) => Scale::Toy,
        };
        let mut base = toml::Value::try_from(Self::defaults(scale)).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut base, toml::Value::Table(file));
        let mut cfg: Self = base.try_into().map_err(|e| Error::config(e.to_string()))?;
        cfg.scale = scale;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, scale: Option<Scale>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text, scale).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
            None => {
                let cfg = Self::defaults(scale.unwrap_or(Scale::Toy));
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.codec.validate()?;
        for (i, plan) in self.plans().iter().enumerate() {
            if plan.stage_id as usize != i + 1 {
                return Err(Error::config(format!("stage{} has stage_id {}", i + 1, plan.stage_id)));
            }
            plan.validate()?;
        }
        self.sampler().validate()?;
        let t = &self.training;
        for (name, p) in [("caption_dropout", t.caption_dropout), ("dense_share", t.dense_share)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.corpus.understanding + self.corpus.text + self.corpus.generation == 0 {
            return Err(Error::config("corpus is empty"));
        }
        Ok(())
    }

    pub fn plans(&self) -> [StagePlan; 3] {
        [self.stage1.clone(), self.stage2.clone(), self.stage3.clone()]
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            seed: self.seed,
            image_side: self.codec.image_side,
            understanding: self.corpus.understanding,
            text: self.corpus.text,
            generation: self.corpus.generation,
            generation_sub_ratio: self.corpus.generation_sub_ratio,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let t = &self.training;
        PipelineConfig {
            model: self.model,
            codec: self.codec,
            pretrain: self.pretrain,
            plans: self.plans(),
            stage: StageOptions {
                seed: self.seed,
                optimizer: t.optimizer,
                run_dir: Some(self.paths.run.clone()),
                log_every: t.log_every,
                checkpoint_every: t.checkpoint_every,
                interrupt_at: None,
                probe_size: t.probe_size,
                caption_dropout: t.caption_dropout,
                dense_share: t.dense_share,
            },
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            temperature: self.sampler.temperature,
            top_k: self.sampler.top_k.unwrap_or(self.model.codebook_size),
            cfg_scale: self.sampler.cfg_scale,
            max_text_tokens: self.sampler.max_text_tokens,
            seed: self.seed,
        }
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.run.join("stage3.ckpt"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "jmini", version, about = "Train, sample and evaluate a desk-scale unified multimodal model")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML); unknown keys are rejected
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Size preset: toy, paper-1b or paper-7b
    #[arg(long, global = true)]
    pub scale: Option<Scale>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// First stage to run; 0 starts with tokenizer pretraining
    #[arg(long, global = true, value_name = "K", value_parser = clap::value_parser!(u8).range(0..=3))]
    pub from_stage: Option<u8>,
    /// Continue a stage from its resumable checkpoint
    #[arg(long, global = true)]
    pub resume: bool,
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Output directory of the command
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "X")]
    pub cfg_scale: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub n_per_category: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the shapes corpora and their manifest
    Corpus,
    /// Tokenizer pretraining, then stages 1 to 3
    Train,
    /// Sample an image for a caption
    Generate { prompt: String },
    /// Answer a question about an image
    Understand { image: PathBuf, question: String },
    /// Compositional generation benchmark
    Eval,
    /// Describe a checkpoint
    Inspect,
    /// Print the effective run configuration
    Config,
}

impl GlobalArgs {
    /// The configuration after file and flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), self.scale)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = &self.checkpoint {
            cfg.paths.checkpoint = Some(c.clone());
        }
        if let Some(x) = self.cfg_scale {
            cfg.sampler.cfg_scale = x;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Caps rayon's worker count from `JMINI_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("JMINI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("JMINI_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn load_model(path: &Path) -> Result<JanusModel<f32>> {
    Ok(checkpoint::load(path)?.model)
}

fn slug(prompt: &str) -> String {
    let s: String = prompt
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    let s = s.trim_matches('_');
    if s.is_empty() {
        "unconditional".into()
    } else {
        s.chars().take(60).collect()
    }
}

/// Loss summary printed at the end of training.
pub fn summary(report: &PipelineReport) -> String {
    let mut out = String::new();
    if let Some(p) = &report.pretrain {
        let _ = writeln!(
            out,
            "stage 0: held-out mse {:.4}, codebook utilization {:.2}, probe accuracy {:.2}",
            p.heldout_mse, p.utilization, p.probe_accuracy
        );
    }
    for s in &report.stages {
        let _ = writeln!(
            out,
            "stage {}: {} steps, probe loss {:.4} -> {:.4} ({:.0}%){}",
            s.stage,
            s.steps_run,
            s.initial.mean,
            s.final_loss.mean,
            100.0 * s.final_loss.mean / s.initial.mean,
            if s.completed { "" } else { ", interrupted" }
        );
    }
    let _ = writeln!(out, "wall time {:.1}s", report.seconds);
    out
}

/// Human-readable checkpoint description: version, configs, then one line per group.
pub fn describe_checkpoint(meta: &CheckpointMeta, model: &JanusModel<f32>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format version {}", meta.format_version);
    let _ = writeln!(out, "stage {}", meta.stage);
    let _ = writeln!(out, "model {:?}", meta.model);
    let _ = writeln!(out, "codec {:?}", meta.codec);
    if let Some(p) = &meta.progress {
        let _ = writeln!(out, "progress: stage {} step {} complete {}", p.stage, p.step, p.stage_complete);
    }
    let _ = writeln!(out, "optimizer moments: {}", if meta.adam_step.is_some() { "yes" } else { "no" });
    for g in ParamGroup::ALL {
        let ids: Vec<usize> = model.params.ids_in(g).collect();
        let count: usize = ids.iter().map(|&i| model.params.value(i).len()).sum();
        let _ = writeln!(
            out,
            "{:<18} {:>3} tensors {:>10} params  sha256 {}",
            g.name(),
            ids.len(),
            count,
            &model.params.group_digest(g)[..16]
        );
        for i in ids {
            let p = model.params.get(i);
            let _ = writeln!(out, "    {:<40} {}x{}", p.name, p.value.rows, p.value.cols);
        }
    }
    out
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = g.resolve()?;
    match &cli.command {
        Command::Config => print!("{}", cfg.to_toml()?),
        Command::Corpus => {
            let dir = g.out.clone().unwrap_or(cfg.paths.corpus.clone());
            let m = write_corpus(&dir, &cfg.corpus_config())?;
            println!(
                "wrote {}: {} understanding, {} text, {} + {} generation (clean + augmented)",
                dir.display(),
                m.understanding,
                m.text,
                m.generation_clean,
                m.generation_augmented
            );
        }
        Command::Train => {
            let mut cfg = cfg;
            if let Some(o) = &g.out {
                cfg.paths.run = o.clone();
            }
            let corpus = &cfg.paths.corpus;
            if !corpus.join("manifest.json").exists() {
                return Err(Error::Prerequisite(format!(
                    "no corpus at {}; run `jmini corpus` first",
                    corpus.display()
                )));
            }
            let manifest = read_manifest(corpus)?;
            if manifest.image_side != cfg.codec.image_side {
                return Err(Error::config(format!(
                    "corpus images are {}px, codec expects {}px",
                    manifest.image_side, cfg.codec.image_side
                )));
            }
            let (_, sources) = load_corpus(corpus)?;
            std::fs::create_dir_all(&cfg.paths.run).map_err(|e| Error::io(&cfg.paths.run, e))?;
            let used = cfg.paths.run.join("config.toml");
            std::fs::write(&used, cfg.to_toml()?).map_err(|e| Error::io(&used, e))?;
            let (_, report) = run_pipeline(&cfg.pipeline(), &sources, g.from_stage.unwrap_or(0), g.resume)?;
            let path = cfg.paths.run.join("report.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
            print!("{}", summary(&report));
        }
        Command::Generate { prompt } => {
            let model = load_model(&cfg.checkpoint())?;
            let sampler = cfg.sampler();
            let out = g.out.clone().unwrap_or_else(|| cfg.paths.run.join("samples"));
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let gen = generate_ids(&model, prompt, &sampler)?;
            let stem = format!("{}_{}", slug(prompt), sampler.seed);
            let png = out.join(format!("{stem}.png"));
            gen.image.write_png(&png)?;
            let meta = serde_json::json!({
                "prompt": prompt,
                "checkpoint": cfg.checkpoint(),
                "sampler": sampler,
                "ids": gen.ids,
            });
            let json = out.join(format!("{stem}.json"));
            std::fs::write(&json, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&json, e))?;
            println!("{}", png.display());
        }
        Command::Understand { image, question } => {
            let model = load_model(&cfg.checkpoint())?;
            let img = ImageBuffer::read_png(image)?;
            let sampler = SamplerConfig {
                max_text_tokens: cfg.sampler.max_text_tokens,
                ..SamplerConfig::greedy()
            };
            println!("{}", understand(&model, &img, question, &sampler)?);
        }
        Command::Eval => {
            let model = load_model(&cfg.checkpoint())?;
            let n = g.n_per_category.unwrap_or(50);
            if n == 0 {
                return Err(Error::config("--n-per-category must be positive"));
            }
            let report = compositional_eval(&model, n, cfg.seed, &cfg.sampler(), true)?;
            let out = g.out.clone().unwrap_or_else(|| cfg.paths.run.join("eval"));
            report.write(&out)?;
            print!("{}", report.table());
        }
        Command::Inspect => {
            let path = cfg.checkpoint();
            let loaded = checkpoint::load(&path)?;
            print!("{}", describe_checkpoint(&loaded.meta, &loaded.model));
        }
    }
    Ok(())
}
