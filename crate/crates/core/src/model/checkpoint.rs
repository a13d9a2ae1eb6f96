//! Self-describing checkpoint container.
//!
//! ```text
//! "JMINI1\n"
//! u64 little-endian byte length of the metadata block
//! metadata block (JSON, UTF-8)
//! raw f32 little-endian arrays, in the order listed by `metadata.tensors`
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{CodecConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::model::layout::ModelLayout;
use crate::model::JanusModel;
use crate::params::ParamGroup;
use crate::tensor::Mat;
use crate::train::optim::AdamState;
use crate::visual::CodeUsage;

pub const MAGIC: &[u8; 7] = b"JMINI1\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    FirstMoment,
    SecondMoment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub group: ParamGroup,
    pub kind: TensorKind,
    pub rows: usize,
    pub cols: usize,
}

/// Where training stood when the checkpoint was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub stage: u8,
    pub step: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    /// Recent per-step losses, oldest first.
    pub loss_history: Vec<f64>,
    pub stage_complete: bool,
    /// Probe-batch loss measured when the stage began.
    #[serde(default)]
    pub initial_probe_loss: Option<ProbeLoss>,
}

/// Mean losses over a fixed probe batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeLoss {
    pub mean: f64,
    pub text: Option<f64>,
    pub image: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub codec: CodecConfig,
    pub stage: u8,
    pub code_usage: Vec<u64>,
    pub progress: Option<TrainProgress>,
    pub adam_step: Option<u64>,
    pub tensors: Vec<TensorMeta>,
}

pub struct LoadedCheckpoint {
    pub meta: CheckpointMeta,
    pub model: JanusModel<f32>,
    pub optimizer: Option<AdamState>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Writes atomically: the file only appears at `path` once fully written.
pub fn save(
    path: &Path,
    model: &JanusModel<f32>,
    progress: Option<&TrainProgress>,
    optimizer: Option<&AdamState>,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut arrays: Vec<&Mat<f32>> = Vec::new();
    for (_, p) in model.params.iter() {
        tensors.push(TensorMeta {
            name: p.name.clone(),
            group: p.group,
            kind: TensorKind::Param,
            rows: p.value.rows,
            cols: p.value.cols,
        });
        arrays.push(&p.value);
    }
    if let Some(opt) = optimizer {
        for (kind, moments) in [(TensorKind::FirstMoment, &opt.m), (TensorKind::SecondMoment, &opt.v)] {
            for (id, m) in moments.iter().enumerate() {
                if let Some(m) = m {
                    let p = model.params.get(id);
                    tensors.push(TensorMeta {
                        name: p.name.clone(),
                        group: p.group,
                        kind,
                        rows: m.rows,
                        cols: m.cols,
                    });
                    arrays.push(m);
                }
            }
        }
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        model: model.config,
        codec: model.codec,
        stage: model.stage,
        code_usage: model.usage.counts(),
        progress: progress.cloned(),
        adam_step: optimizer.map(|o| o.t),
        tensors,
    };
    let json = serde_json::to_vec(&meta)?;

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for a in &arrays {
            for v in &a.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

fn read_header(r: &mut impl Read) -> Result<CheckpointMeta> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("file too short for a checkpoint header"))?;
    if &magic != MAGIC {
        return Err(corrupt(format!(
            "bad header {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| corrupt("truncated metadata length"))?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(corrupt(format!("implausible metadata length {len}")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| corrupt("truncated metadata block"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&json).map_err(|e| corrupt(format!("metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Metadata only; array bytes are not read.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut f)
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = std::io::Cursor::new(&bytes[..]);
    let meta = read_header(&mut cur)?;
    let mut off = cur.position() as usize;

    meta.model.validate()?;
    meta.codec.validate()?;
    let (layout, mut params) = ModelLayout::build(&meta.model, &meta.codec, 0);
    let mut optimizer = AdamState::new(params.len());
    optimizer.t = meta.adam_step.unwrap_or(0);
    let mut seen = vec![false; params.len()];

    for t in &meta.tensors {
        let n = t.rows * t.cols;
        let end = off + n * 4;
        if end > bytes.len() {
            return Err(corrupt(format!("array `{}` runs past end of file", t.name)));
        }
        let data: Vec<f32> = bytes[off..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        off = end;
        let id = params
            .id_of(&t.name)
            .ok_or_else(|| corrupt(format!("unknown tensor `{}`", t.name)))?;
        let p = params.get(id);
        if (p.value.rows, p.value.cols) != (t.rows, t.cols) || p.group != t.group {
            return Err(corrupt(format!(
                "tensor `{}` is {}x{} in group {}, model expects {}x{} in group {}",
                t.name, t.rows, t.cols, t.group, p.value.rows, p.value.cols, p.group
            )));
        }
        let m = Mat::from_vec(t.rows, t.cols, data);
        match t.kind {
            TensorKind::Param => {
                *params.value_mut(id) = m;
                seen[id] = true;
            }
            TensorKind::FirstMoment => optimizer.m[id] = Some(m),
            TensorKind::SecondMoment => optimizer.v[id] = Some(m),
        }
    }
    if off != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes after arrays", bytes.len() - off)));
    }
    if let Some(id) = seen.iter().position(|s| !s) {
        return Err(corrupt(format!("missing tensor `{}`", params.get(id).name)));
    }
    if meta.code_usage.len() != meta.model.codebook_size {
        return Err(corrupt("code usage length does not match codebook size"));
    }
    let model = JanusModel {
        config: meta.model,
        codec: meta.codec,
        params,
        layout,
        usage: CodeUsage::from_counts(&meta.code_usage),
        stage: meta.stage,
    };
    let optimizer = meta.adam_step.map(|_| optimizer);
    Ok(LoadedCheckpoint { meta, model, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CodecConfig, ModelConfig};

    #[test]
    fn roundtrip_params_progress_and_moments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/a.ckpt");
        let mut model = JanusModel::new(ModelConfig::tiny(), CodecConfig::tiny(), 11).unwrap();
        model.stage = 2;
        model.usage.hit(3);
        let mut opt = AdamState::new(model.params.len());
        opt.t = 17;
        let id = model.layout.image_head.w1;
        let shape = model.params.value(id);
        opt.m[id] = Some(Mat::from_vec(shape.rows, shape.cols, vec![0.5; shape.len()]));
        opt.v[id] = Some(Mat::from_vec(shape.rows, shape.cols, vec![0.25; shape.len()]));
        let progress = TrainProgress {
            stage: 2,
            step: 40,
            rng_seed: 9,
            rng_word_pos: u64::MAX as u128 + 5,
            loss_history: vec![1.0, 0.5],
            stage_complete: false,
            initial_probe_loss: Some(ProbeLoss {
                mean: 2.0,
                text: None,
                image: Some(2.0),
            }),
        };
        save(&path, &model, Some(&progress), Some(&opt)).unwrap();
        assert!(!tmp_path(&path).exists());

        let back = load(&path).unwrap();
        assert_eq!(back.model.params, model.params);
        assert_eq!(back.model.stage, 2);
        assert_eq!(back.model.usage.counts(), model.usage.counts());
        assert_eq!(back.meta.progress, Some(progress));
        let o = back.optimizer.unwrap();
        assert_eq!(o.t, 17);
        assert_eq!(o.m[id], opt.m[id]);
        assert_eq!(o.v[id], opt.v[id]);
        assert!(o.m[0].is_none());
        assert_eq!(read_meta(&path).unwrap().tensors.len(), model.params.len() + 2);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let model = JanusModel::new(ModelConfig::tiny(), CodecConfig::tiny(), 1).unwrap();
        save(&path, &model, None, None).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[5] = b'2';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));

        std::fs::write(&path, &good[..good.len() - 4]).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));

        let mut extra = good.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));

        assert!(matches!(load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn unwritable_target_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("is_a_dir");
        std::fs::create_dir(&target).unwrap();
        let model = JanusModel::new(ModelConfig::tiny(), CodecConfig::tiny(), 1).unwrap();
        assert!(save(&target, &model, None, None).is_err());
        assert!(!tmp_path(&target).exists());
    }
}
