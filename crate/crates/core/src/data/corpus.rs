//! Samples, sample sources, and the on-disk corpus layout.
//!
//! ```text
//! corpus/
//!   manifest.json
//!   understanding/records.jsonl + <id>.png
//!   text/records.jsonl
//!   generation/records.jsonl + <id>.png
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::scene::{gen_scene, gen_scene_in, question_answer, text_passage, Category, Claim, Scene, ShapesSceneSpec};
use crate::error::{Error, Result};
use crate::visual::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Understanding,
    Text,
    Generation,
}

impl SampleKind {
    pub const ALL: [SampleKind; 3] = [SampleKind::Understanding, SampleKind::Text, SampleKind::Generation];

    pub fn dir_name(self) -> &'static str {
        match self {
            SampleKind::Understanding => "understanding",
            SampleKind::Text => "text",
            SampleKind::Generation => "generation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Understanding(Scene),
    Text(String),
    Generation { scene: Scene, augmented: bool },
}

impl Sample {
    pub fn kind(&self) -> SampleKind {
        match self {
            Sample::Understanding(_) => SampleKind::Understanding,
            Sample::Text(_) => SampleKind::Text,
            Sample::Generation { .. } => SampleKind::Generation,
        }
    }

    pub fn scene(&self) -> Option<&Scene> {
        match self {
            Sample::Understanding(s) | Sample::Generation { scene: s, .. } => Some(s),
            Sample::Text(_) => None,
        }
    }

    fn single_object(&self) -> bool {
        match self {
            Sample::Understanding(s) | Sample::Generation { scene: s, .. } => s.spec.objects.len() == 1,
            Sample::Text(_) => false,
        }
    }
}

/// Photographic-style corruption: per-channel Gaussian noise, then 8-bit quantization.
pub fn augment<R: Rng>(img: &ImageBuffer, rng: &mut R, sigma: f32) -> ImageBuffer {
    let noise = Normal::new(0.0f32, sigma).expect("valid sigma");
    let data = img
        .data
        .iter()
        .map(|&v| ((v + noise.sample(rng)).clamp(0.0, 1.0) * 255.0).round() / 255.0)
        .collect();
    ImageBuffer::from_data(img.height, img.width, data).expect("clamped values")
}

pub const AUGMENT_SIGMA: f32 = 0.04;

/// Independent stream seed for item `index` of `kind` under a corpus seed.
pub fn derive_seed(seed: u64, kind: u64, index: u64) -> u64 {
    let mut z = seed ^ kind.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// An endless or finite supply of samples of one kind.
#[derive(Debug, Clone)]
pub enum SampleSource {
    /// Fresh procedural scenes on every draw.
    Procedural {
        kind: SampleKind,
        side: usize,
        /// Fraction of generation samples that receive noise augmentation.
        augmented_share: f64,
        single_object_only: bool,
    },
    /// Uniform draws with replacement from a fixed pool.
    Pool { items: Arc<Vec<Sample>>, index: Arc<Vec<usize>> },
}

impl SampleSource {
    pub fn procedural(kind: SampleKind, side: usize) -> Self {
        SampleSource::Procedural {
            kind,
            side,
            augmented_share: 0.5,
            single_object_only: false,
        }
    }

    pub fn pool(items: Vec<Sample>) -> Self {
        let index = (0..items.len()).collect();
        SampleSource::Pool {
            items: Arc::new(items),
            index: Arc::new(index),
        }
    }

    pub fn empty() -> Self {
        Self::pool(Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        match self {
            SampleSource::Procedural { .. } => false,
            SampleSource::Pool { index, .. } => index.is_empty(),
        }
    }

    /// The same source restricted to single-object scenes.
    pub fn single_objects(&self) -> Self {
        match self {
            SampleSource::Procedural {
                kind,
                side,
                augmented_share,
                ..
            } => SampleSource::Procedural {
                kind: *kind,
                side: *side,
                augmented_share: *augmented_share,
                single_object_only: true,
            },
            SampleSource::Pool { items, index } => SampleSource::Pool {
                items: items.clone(),
                index: Arc::new(index.iter().copied().filter(|&i| items[i].single_object()).collect()),
            },
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Result<Sample> {
        match self {
            SampleSource::Procedural {
                kind,
                side,
                augmented_share,
                single_object_only,
            } => {
                let scene = |rng: &mut R| {
                    if *single_object_only {
                        gen_scene_in(Category::SingleObject, rng, *side)
                    } else {
                        gen_scene(rng.random(), *side)
                    }
                };
                Ok(match kind {
                    SampleKind::Understanding => Sample::Understanding(scene(rng)),
                    SampleKind::Text => Sample::Text(text_passage(rng)),
                    SampleKind::Generation => {
                        let mut s = scene(rng);
                        let augmented = rng.random_bool(*augmented_share);
                        if augmented {
                            s.image = augment(&s.image, rng, AUGMENT_SIGMA);
                        }
                        Sample::Generation { scene: s, augmented }
                    }
                })
            }
            SampleSource::Pool { items, index } => {
                if index.is_empty() {
                    return Err(Error::config("cannot draw from an empty source"));
                }
                Ok(items[index[rng.random_range(0..index.len())]].clone())
            }
        }
    }
}

/// One source per sample kind.
#[derive(Debug, Clone)]
pub struct Sources {
    pub understanding: SampleSource,
    pub text: SampleSource,
    pub generation: SampleSource,
}

impl Sources {
    pub fn procedural(side: usize) -> Self {
        Self {
            understanding: SampleSource::procedural(SampleKind::Understanding, side),
            text: SampleSource::procedural(SampleKind::Text, side),
            generation: SampleSource::procedural(SampleKind::Generation, side),
        }
    }

    /// Pooled sources over an in-memory corpus, as returned by [`build_corpus`].
    pub fn from_pools(pools: Vec<(SampleKind, Vec<Sample>)>) -> Self {
        let mut s = Self {
            understanding: SampleSource::empty(),
            text: SampleSource::empty(),
            generation: SampleSource::empty(),
        };
        for (kind, items) in pools {
            let pool = SampleSource::pool(items);
            match kind {
                SampleKind::Understanding => s.understanding = pool,
                SampleKind::Text => s.text = pool,
                SampleKind::Generation => s.generation = pool,
            }
        }
        s
    }

    pub fn get(&self, kind: SampleKind) -> &SampleSource {
        match kind {
            SampleKind::Understanding => &self.understanding,
            SampleKind::Text => &self.text,
            SampleKind::Generation => &self.generation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub image_side: usize,
    pub understanding: usize,
    pub text: usize,
    pub generation: usize,
    /// Clean : augmented split of the generation corpus.
    pub generation_sub_ratio: (u32, u32),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_side: 48,
            understanding: 2000,
            text: 1000,
            generation: 4000,
            generation_sub_ratio: (1, 1),
        }
    }
}

impl CorpusConfig {
    /// Number of clean generation samples; the rest are augmented.
    pub fn clean_count(&self) -> usize {
        let (c, a) = self.generation_sub_ratio;
        if c + a == 0 {
            return self.generation;
        }
        (self.generation as u64 * c as u64 / (c + a) as u64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub image_side: usize,
    pub understanding: usize,
    pub text: usize,
    pub generation_clean: usize,
    pub generation_augmented: usize,
    pub generation_sub_ratio: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    image: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    category: Option<Category>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    caption: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    question: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    spec: Option<ShapesSceneSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    claim: Option<Claim>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    augmented: Option<bool>,
}

fn make_sample(cfg: &CorpusConfig, kind: SampleKind, i: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, kind as u64, i as u64));
    match kind {
        SampleKind::Understanding => Sample::Understanding(gen_scene(rng.random(), cfg.image_side)),
        SampleKind::Text => Sample::Text(text_passage(&mut rng)),
        SampleKind::Generation => {
            let mut scene = gen_scene(rng.random(), cfg.image_side);
            let augmented = i >= cfg.clean_count();
            if augmented {
                scene.image = augment(&scene.image, &mut rng, AUGMENT_SIGMA);
            }
            Sample::Generation { scene, augmented }
        }
    }
}

fn count_of(cfg: &CorpusConfig, kind: SampleKind) -> usize {
    match kind {
        SampleKind::Understanding => cfg.understanding,
        SampleKind::Text => cfg.text,
        SampleKind::Generation => cfg.generation,
    }
}

/// Materializes the corpus in memory; identical to what [`write_corpus`] stores.
pub fn build_corpus(cfg: &CorpusConfig) -> Vec<(SampleKind, Vec<Sample>)> {
    SampleKind::ALL
        .iter()
        .map(|&k| {
            let items = (0..count_of(cfg, k)).into_par_iter().map(|i| make_sample(cfg, k, i)).collect();
            (k, items)
        })
        .collect()
}

fn record_for(id: &str, sample: &Sample, qa_seed: u64) -> Record {
    let mut r = Record {
        id: id.to_string(),
        image: None,
        category: None,
        caption: None,
        question: None,
        answer: None,
        text: None,
        spec: None,
        claim: None,
        augmented: None,
    };
    match sample {
        Sample::Text(t) => r.text = Some(t.clone()),
        Sample::Understanding(s) | Sample::Generation { scene: s, .. } => {
            r.image = Some(format!("{id}.png"));
            r.category = Some(s.category);
            r.caption = Some(s.caption());
            r.spec = Some(s.spec.clone());
            r.claim = Some(s.claim.clone());
            if let Sample::Generation { augmented, .. } = sample {
                r.augmented = Some(*augmented);
            } else {
                let (q, a) = question_answer(&s.spec, &mut ChaCha8Rng::seed_from_u64(qa_seed));
                r.question = Some(q);
                r.answer = Some(a);
            }
        }
    }
    r
}

pub fn write_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<Manifest> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p, e)
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for (kind, items) in build_corpus(cfg) {
        let sub = dir.join(kind.dir_name());
        fs::create_dir_all(&sub).map_err(io(&sub))?;
        let records: Vec<Record> = items
            .par_iter()
            .enumerate()
            .map(|(i, s)| -> Result<Record> {
                let id = format!("{i:06}");
                let rec = record_for(&id, s, derive_seed(cfg.seed, 7, i as u64));
                if let Sample::Understanding(sc) | Sample::Generation { scene: sc, .. } = s {
                    sc.image.write_png(&sub.join(format!("{id}.png")))?;
                }
                Ok(rec)
            })
            .collect::<Result<_>>()?;
        let path = sub.join("records.jsonl");
        let mut w = BufWriter::new(fs::File::create(&path).map_err(io(&path))?);
        for r in &records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(io(&path))?;
        }
        w.flush().map_err(io(&path))?;
    }
    let manifest = Manifest {
        seed: cfg.seed,
        image_side: cfg.image_side,
        understanding: cfg.understanding,
        text: cfg.text,
        generation_clean: cfg.clean_count(),
        generation_augmented: cfg.generation - cfg.clean_count(),
        generation_sub_ratio: cfg.generation_sub_ratio,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(io(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads every record of a corpus directory back into pooled sources.
pub fn load_corpus(dir: &Path) -> Result<(Manifest, Sources)> {
    let manifest = read_manifest(dir)?;
    let mut pools: Vec<Vec<Sample>> = Vec::new();
    for kind in SampleKind::ALL {
        let sub = dir.join(kind.dir_name());
        let path = sub.join("records.jsonl");
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let records: Vec<Record> = BufReader::new(file)
            .lines()
            .map(|l| -> Result<Record> { Ok(serde_json::from_str(&l.map_err(|e| Error::io(&path, e))?)?) })
            .collect::<Result<_>>()?;
        let samples = records
            .par_iter()
            .map(|r| -> Result<Sample> {
                if kind == SampleKind::Text {
                    return r
                        .text
                        .clone()
                        .map(Sample::Text)
                        .ok_or_else(|| Error::domain(format!("text record {} has no text", r.id)));
                }
                let missing = |f: &str| Error::domain(format!("record {} lacks `{f}`", r.id));
                let image = ImageBuffer::read_png(&sub.join(r.image.as_ref().ok_or_else(|| missing("image"))?))?;
                let scene = Scene {
                    category: r.category.ok_or_else(|| missing("category"))?,
                    spec: r.spec.clone().ok_or_else(|| missing("spec"))?,
                    claim: r.claim.clone().ok_or_else(|| missing("claim"))?,
                    image,
                };
                Ok(match kind {
                    SampleKind::Understanding => Sample::Understanding(scene),
                    _ => Sample::Generation {
                        scene,
                        augmented: r.augmented.unwrap_or(false),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        pools.push(samples);
    }
    let mut it = pools.into_iter();
    let sources = Sources {
        understanding: SampleSource::pool(it.next().unwrap_or_default()),
        text: SampleSource::pool(it.next().unwrap_or_default()),
        generation: SampleSource::pool(it.next().unwrap_or_default()),
    };
    Ok((manifest, sources))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            seed: 3,
            understanding: 6,
            text: 4,
            generation: 10,
            ..CorpusConfig::default()
        }
    }

    fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for kind in ["", "understanding", "text", "generation"] {
            let d = dir.join(kind);
            let mut names: Vec<_> = fs::read_dir(&d)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.is_file())
                .collect();
            names.sort();
            for p in names {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
        out
    }

    #[test]
    fn same_seed_same_bytes_and_manifest_counts() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = write_corpus(a.path(), &small()).unwrap();
        write_corpus(b.path(), &small()).unwrap();
        assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
        assert_eq!((m.understanding, m.text), (6, 4));
        assert_eq!((m.generation_clean, m.generation_augmented), (5, 5));
    }

    #[test]
    fn load_roundtrips_the_in_memory_corpus() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &small()).unwrap();
        let (_, sources) = load_corpus(dir.path()).unwrap();
        let built = build_corpus(&small());
        for (kind, items) in built {
            match sources.get(kind) {
                SampleSource::Pool { items: loaded, .. } => assert_eq!(loaded.as_slice(), items.as_slice()),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn single_object_restriction() {
        let src = SampleSource::pool(build_corpus(&small()).remove(2).1).single_objects();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            if let Sample::Generation { scene, .. } = src.draw(&mut rng).unwrap() {
                assert_eq!(scene.spec.objects.len(), 1);
            }
        }
        assert!(SampleSource::empty().draw(&mut rng).is_err());
    }

    #[test]
    fn unwritable_corpus_path_is_io_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let r = write_corpus(&f.path().join("sub"), &small());
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
