//! The unified autoregressive transformer and its two prediction heads.

pub mod checkpoint;
pub mod layout;
pub(crate) mod network;
pub mod sequence;
pub mod vocab;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::config::{CodecConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{AttnLayout, Var};
use crate::params::{GroupSet, ParamGroup, ParamStore};
use crate::tensor::{log_sum_exp, Mat, Scalar};
use crate::visual::{CodeUsage, ImageBuffer};

pub use layout::ModelLayout;
pub use sequence::{
    generation_sequence, text_sequence, understanding_sequence, Entry, Modality, ModalitySequence, Payload,
    SequenceBuilder, Target, Visual,
};
pub use vocab::Vocab;

use network::Binder;

/// Per-position scores from both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs<T = f32> {
    pub text_logits: Mat<T>,
    pub image_logits: Mat<T>,
}

/// Summed negative log-likelihoods split by head.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts<T = f32> {
    pub text_nll: T,
    pub text_count: usize,
    pub image_nll: T,
    pub image_count: usize,
}

impl<T: Scalar> LossParts<T> {
    pub fn count(&self) -> usize {
        self.text_count + self.image_count
    }

    pub fn total(&self) -> T {
        self.text_nll + self.image_nll
    }

    pub fn mean(&self) -> f64 {
        self.total().as_f64() / self.count().max(1) as f64
    }

    pub fn text_mean(&self) -> Option<f64> {
        (self.text_count > 0).then(|| self.text_nll.as_f64() / self.text_count as f64)
    }

    pub fn image_mean(&self) -> Option<f64> {
        (self.image_count > 0).then(|| self.image_nll.as_f64() / self.image_count as f64)
    }
}

/// How the flagged-position losses of a batch are reduced before differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Gradients indexed by parameter id; `None` for parameters that received none.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    pub by_param: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(n: usize) -> Self {
        Self {
            by_param: vec![None; n],
        }
    }

    pub(crate) fn from_pairs(n: usize, pairs: Vec<(usize, Mat<T>)>) -> Self {
        let mut g = Self::zeros_like(n);
        for (id, m) in pairs {
            if id < n {
                match &mut g.by_param[id] {
                    Some(acc) => acc.add_assign(&m),
                    slot => *slot = Some(m),
                }
            }
        }
        g
    }

    pub fn get(&self, id: usize) -> Option<&Mat<T>> {
        self.by_param.get(id).and_then(|g| g.as_ref())
    }

    pub fn global_norm(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .map(|m| m.sum_squares().as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

/// One position of a flat activation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Entry { seq: usize, entry: usize, pos: usize },
    Pad,
}

/// Positions of one or more sequences laid out as a single `[N, E]` matrix.
pub(crate) struct FlatInput<'a> {
    pub seqs: Vec<&'a ModalitySequence>,
    pub slots: Vec<Slot>,
    pub layout: Arc<AttnLayout>,
}

impl<'a> FlatInput<'a> {
    /// Each sequence becomes its own causal segment, back to back.
    pub fn unpacked(seqs: Vec<&'a ModalitySequence>) -> Self {
        let mut slots = Vec::new();
        let mut segments = Vec::new();
        for (s, seq) in seqs.iter().enumerate() {
            if seq.is_empty() {
                continue;
            }
            segments.push((slots.len(), seq.len()));
            slots.extend((0..seq.len()).map(|p| Slot::Entry { seq: s, entry: p, pos: p }));
        }
        Self {
            seqs,
            slots,
            layout: Arc::new(AttnLayout {
                segments,
                causal: true,
            }),
        }
    }

    /// `(flat row, target)` for every loss-flagged position.
    fn targets(&self) -> Vec<(usize, Target)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(r, slot)| match *slot {
                Slot::Entry { seq, entry, .. } => {
                    let e = &self.seqs[seq].entries[entry];
                    if e.loss_flag {
                        e.target.map(|t| (r, t))
                    } else {
                        None
                    }
                }
                Slot::Pad => None,
            })
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Part {
    Text,
    Gen,
    Encoded,
    Features,
}

#[derive(Debug)]
pub struct JanusModel<T: Scalar = f32> {
    pub config: ModelConfig,
    pub codec: CodecConfig,
    pub params: ParamStore<T>,
    pub layout: ModelLayout,
    pub usage: CodeUsage,
    /// Training stage the parameters were last trained in (0 = tokenizer pretraining).
    pub stage: u8,
}

impl<T: Scalar> Clone for JanusModel<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            codec: self.codec,
            params: self.params.clone(),
            layout: self.layout.clone(),
            usage: self.usage.clone(),
            stage: self.stage,
        }
    }
}

impl JanusModel<f32> {
    pub fn new(config: ModelConfig, codec: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        codec.validate()?;
        let (layout, params) = ModelLayout::build(&config, &codec, seed);
        let usage = CodeUsage::new(config.codebook_size);
        Ok(Self {
            config,
            codec,
            params,
            layout,
            usage,
            stage: 0,
        })
    }
}

impl<T: Scalar> JanusModel<T> {
    /// Same model at another working precision.
    pub fn cast<U: Scalar>(&self) -> JanusModel<U> {
        JanusModel {
            config: self.config,
            codec: self.codec,
            params: self.params.cast(),
            layout: self.layout.clone(),
            usage: self.usage.clone(),
            stage: self.stage,
        }
    }

    /// Parameter ids of every group. Groups are disjoint and cover all parameters.
    pub fn parameter_groups(&self) -> BTreeMap<ParamGroup, Vec<usize>> {
        ParamGroup::ALL
            .iter()
            .map(|&g| (g, self.params.ids_in(g).collect()))
            .collect()
    }

    pub(crate) fn binder(&self, trainable: GroupSet) -> Binder<'_, T> {
        Binder::new(&self.params, trainable)
    }

    /// Embeds every slot: text rows from the embedding table, understanding
    /// features through the und adaptor, image ids through codebook lookup and
    /// the gen adaptor, plus the learned position embedding.
    pub(crate) fn embed_graph(&self, b: &mut Binder<'_, T>, input: &FlatInput<'_>) -> Result<Var> {
        let l = &self.layout;
        let cells = self.codec.und_positions();
        let mut index: Vec<(Part, usize)> = Vec::with_capacity(input.slots.len());
        let mut text_ids = Vec::new();
        let mut gen_ids = Vec::new();
        let mut pos_ids = Vec::with_capacity(input.slots.len());
        let mut images: Vec<&ImageBuffer> = Vec::new();
        let mut image_base: HashMap<(usize, usize), usize> = HashMap::new();
        let mut feats: Vec<T> = Vec::new();
        let mut feat_rows = 0;
        let mut feat_base: HashMap<(usize, usize), usize> = HashMap::new();

        for slot in &input.slots {
            match *slot {
                Slot::Pad => {
                    index.push((Part::Text, text_ids.len()));
                    text_ids.push(vocab::PAD as usize);
                    pos_ids.push(0);
                }
                Slot::Entry { seq, entry, pos } => {
                    if pos >= self.config.context_window {
                        return Err(Error::Length {
                            len: pos + 1,
                            window: self.config.context_window,
                        });
                    }
                    pos_ids.push(pos);
                    let s = input.seqs[seq];
                    match s.entries[entry].payload {
                        Payload::Text(id) => {
                            index.push((Part::Text, text_ids.len()));
                            text_ids.push(id as usize);
                        }
                        Payload::GenId(id) => {
                            index.push((Part::Gen, gen_ids.len()));
                            gen_ids.push(id as usize);
                        }
                        Payload::UndFeature { visual, cell } => match &s.visuals[visual] {
                            Visual::Image(img) => {
                                let base = *image_base.entry((seq, visual)).or_insert_with(|| {
                                    images.push(img);
                                    (images.len() - 1) * cells
                                });
                                index.push((Part::Encoded, base + cell));
                            }
                            Visual::Features(g) => {
                                let base = *feat_base.entry((seq, visual)).or_insert_with(|| {
                                    feats.extend(g.data.iter().map(|&v| T::lift(v as f64)));
                                    feat_rows += g.len();
                                    feat_rows - g.len()
                                });
                                index.push((Part::Features, base + cell));
                            }
                        },
                    }
                }
            }
        }

        let mut parts = Vec::new();
        let mut part_idx: HashMap<Part, usize> = HashMap::new();
        if !text_ids.is_empty() {
            let tok = b.p(l.tok_emb);
            part_idx.insert(Part::Text, parts.len());
            parts.push(b.g.gather(tok, text_ids));
        }
        if !gen_ids.is_empty() {
            let cb = b.p(l.vq.codebook);
            let codes = b.g.gather(cb, gen_ids);
            part_idx.insert(Part::Gen, parts.len());
            parts.push(b.mlp2(codes, &l.gen_adaptor));
        }
        if !images.is_empty() {
            let enc = self.und_encoder_graph(b, &images)?;
            part_idx.insert(Part::Encoded, parts.len());
            parts.push(b.mlp2(enc, &l.und_adaptor));
        }
        if feat_rows > 0 {
            let x = b.g.input(Mat::from_vec(feat_rows, self.codec.und_feat_dim, feats));
            part_idx.insert(Part::Features, parts.len());
            parts.push(b.mlp2(x, &l.und_adaptor));
        }
        let index = index.into_iter().map(|(p, r)| (part_idx[&p], r)).collect();
        let x = b.g.interleave(parts, index);
        let pe = b.p(l.pos_emb);
        let pos = b.g.gather(pe, pos_ids);
        Ok(b.g.add(x, pos))
    }

    fn blocks_graph(&self, b: &mut Binder<'_, T>, mut x: Var, layout: &Arc<AttnLayout>) -> Var {
        for bp in &self.layout.blocks {
            x = b.block(x, bp, layout.clone(), self.config.n_heads);
        }
        x
    }

    /// Tied text head: `norm(h) · tok_embᵀ + bias`.
    pub(crate) fn text_head_graph(&self, b: &mut Binder<'_, T>, h: Var) -> Var {
        let n = b.norm(h, self.layout.text_norm);
        let emb = b.p(self.layout.tok_emb);
        let logits = b.g.matmul_nt(n, emb);
        let bias = b.p(self.layout.text_bias);
        b.g.add_row(logits, bias)
    }

    pub(crate) fn image_head_graph(&self, b: &mut Binder<'_, T>, h: Var) -> Var {
        let n = b.norm(h, self.layout.image_norm);
        b.mlp2(n, &self.layout.image_head)
    }

    fn check_ready(&self, seq: &ModalitySequence) -> Result<()> {
        seq.validate(&self.config, &self.codec)
    }

    /// Embedded `[len, embed_dim]` matrix for one sequence.
    pub fn assemble(&self, seq: &ModalitySequence) -> Result<Mat<T>> {
        self.check_ready(seq)?;
        if seq.is_empty() {
            return Ok(Mat::zeros(0, self.config.embed_dim));
        }
        let input = FlatInput::unpacked(vec![seq]);
        let mut b = self.binder(GroupSet::empty());
        let x = self.embed_graph(&mut b, &input)?;
        Ok(b.g.into_value(x))
    }

    /// Runs the transformer stack on embedded rows and evaluates both heads at every row.
    pub fn forward(&self, embedded: &Mat<T>, mask: &AttnLayout) -> Result<HeadOutputs<T>> {
        if embedded.cols != self.config.embed_dim {
            return Err(Error::shape(format!(
                "embedded width {} does not match embed_dim {}",
                embedded.cols, self.config.embed_dim
            )));
        }
        if !mask.is_well_formed() || mask.total_len() != embedded.rows {
            return Err(Error::shape(format!(
                "attention mask covers {} positions, input has {}",
                mask.total_len(),
                embedded.rows
            )));
        }
        if embedded.rows == 0 {
            return Ok(HeadOutputs {
                text_logits: Mat::zeros(0, self.config.vocab_size),
                image_logits: Mat::zeros(0, self.config.codebook_size),
            });
        }
        let mut b = self.binder(GroupSet::empty());
        let x = b.g.input(embedded.clone());
        let h = self.blocks_graph(&mut b, x, &Arc::new(mask.clone()));
        let t = self.text_head_graph(&mut b, h);
        let i = self.image_head_graph(&mut b, h);
        Ok(HeadOutputs {
            text_logits: b.g.value(t).clone(),
            image_logits: b.g.value(i).clone(),
        })
    }

    /// Assemble plus forward for a single sequence under a causal mask.
    pub fn forward_sequence(&self, seq: &ModalitySequence) -> Result<HeadOutputs<T>> {
        let x = self.assemble(seq)?;
        self.forward(&x, &AttnLayout::single(seq.len(), true))
    }

    /// Mean cross-entropy over loss-flagged positions of `seq`.
    pub fn loss(&self, outputs: &HeadOutputs<T>, seq: &ModalitySequence) -> Result<T> {
        if outputs.text_logits.rows != seq.len() || outputs.image_logits.rows != seq.len() {
            return Err(Error::shape("head outputs do not cover the sequence"));
        }
        let mut total = 0.0;
        let mut n = 0usize;
        for (p, e) in seq.entries.iter().enumerate() {
            if !e.loss_flag {
                continue;
            }
            let (row, id) = match e.target {
                Some(Target::Text(id)) => (outputs.text_logits.row(p), id),
                Some(Target::Image(id)) => (outputs.image_logits.row(p), id),
                None => return Err(Error::domain(format!("flagged position {p} has no target"))),
            };
            let id = id as usize;
            if id >= row.len() {
                return Err(Error::domain(format!("target {id} out of range {}", row.len())));
            }
            total += (log_sum_exp(row) - row[id]).as_f64();
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyLoss);
        }
        Ok(T::lift(total / n as f64))
    }

    /// Loss over flagged positions of a flat input, with gradients for `trainable`.
    /// Heads are evaluated only at flagged rows.
    pub(crate) fn loss_and_grads(
        &self,
        input: &FlatInput<'_>,
        trainable: GroupSet,
        reduction: Reduction,
        want_grads: bool,
    ) -> Result<(LossParts<T>, Gradients<T>)> {
        let targets = input.targets();
        if targets.is_empty() {
            return Err(Error::EmptyLoss);
        }
        let mut b = self.binder(if want_grads { trainable } else { GroupSet::empty() });
        let x = self.embed_graph(&mut b, input)?;
        let h = self.blocks_graph(&mut b, x, &input.layout);

        let mut parts = LossParts::default();
        let mut terms = Vec::new();
        let (text, image): (Vec<_>, Vec<_>) = targets.iter().partition(|(_, t)| matches!(t, Target::Text(_)));
        if !text.is_empty() {
            let rows: Vec<usize> = text.iter().map(|(r, _)| *r).collect();
            let ht = b.g.gather(h, rows);
            let logits = self.text_head_graph(&mut b, ht);
            let tg = text
                .iter()
                .enumerate()
                .map(|(i, (_, t))| match t {
                    Target::Text(id) => (i, *id as usize),
                    Target::Image(_) => unreachable!(),
                })
                .collect();
            let ce = b.g.cross_entropy(logits, tg);
            parts.text_nll = b.g.value(ce).data[0];
            parts.text_count = text.len();
            terms.push(ce);
        }
        if !image.is_empty() {
            let rows: Vec<usize> = image.iter().map(|(r, _)| *r).collect();
            let hi = b.g.gather(h, rows);
            let logits = self.image_head_graph(&mut b, hi);
            let tg = image
                .iter()
                .enumerate()
                .map(|(i, (_, t))| match t {
                    Target::Image(id) => (i, *id as usize),
                    Target::Text(_) => unreachable!(),
                })
                .collect();
            let ce = b.g.cross_entropy(logits, tg);
            parts.image_nll = b.g.value(ce).data[0];
            parts.image_count = image.len();
            terms.push(ce);
        }
        if !want_grads {
            return Ok((parts, Gradients::zeros_like(self.params.len())));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = b.g.add(total, t);
        }
        if reduction == Reduction::Mean {
            total = b.g.scale(total, T::lift(1.0 / parts.count() as f64));
        }
        let grads = Gradients::from_pairs(self.params.len(), b.g.backward(total));
        Ok((parts, grads))
    }

    /// Loss and gradients over several sequences, each in its own attention segment.
    pub fn batch_loss(
        &self,
        seqs: &[ModalitySequence],
        trainable: GroupSet,
        reduction: Reduction,
    ) -> Result<(LossParts<T>, Gradients<T>)> {
        for s in seqs {
            self.check_ready(s)?;
        }
        self.loss_and_grads(&FlatInput::unpacked(seqs.iter().collect()), trainable, reduction, true)
    }

    /// Loss over several sequences without building gradients.
    pub fn evaluate_loss(&self, seqs: &[ModalitySequence]) -> Result<LossParts<T>> {
        for s in seqs {
            self.check_ready(s)?;
        }
        let input = FlatInput::unpacked(seqs.iter().collect());
        Ok(self.loss_and_grads(&input, GroupSet::empty(), Reduction::Sum, false)?.0)
    }

    /// Both heads at the last position of `seq`; the sampling primitive.
    pub fn last_logits(&self, seq: &ModalitySequence) -> Result<(Vec<T>, Vec<T>)> {
        self.check_ready(seq)?;
        if seq.is_empty() {
            return Err(Error::shape("cannot score an empty sequence"));
        }
        let input = FlatInput::unpacked(vec![seq]);
        let mut b = self.binder(GroupSet::empty());
        let x = self.embed_graph(&mut b, &input)?;
        let h = self.blocks_graph(&mut b, x, &input.layout);
        let last = b.g.gather(h, vec![seq.len() - 1]);
        let t = self.text_head_graph(&mut b, last);
        let i = self.image_head_graph(&mut b, last);
        Ok((b.g.value(t).data.clone(), b.g.value(i).data.clone()))
    }
}
