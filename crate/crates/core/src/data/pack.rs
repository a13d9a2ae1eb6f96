//! First-fit sequence packing into fixed-length rows.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::AttnLayout;
use crate::model::{FlatInput, Gradients, HeadOutputs, JanusModel, LossParts, ModalitySequence, Reduction, Slot};
use crate::params::GroupSet;
use crate::tensor::Scalar;

/// Sequences packed into rows of `row_len` positions. Each row holds whole
/// sequences back to back; the remainder of a row is padding.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch {
    pub sequences: Vec<ModalitySequence>,
    pub row_len: usize,
    /// Sequence indices per row, in placement order.
    pub rows: Vec<Vec<usize>>,
    /// Start offset of every segment within its row.
    pub boundaries: Vec<Vec<usize>>,
    pub fill_ratio: f64,
}

/// Greedy first-fit: each sequence goes into the first row with room, in input order.
pub fn pack(sequences: Vec<ModalitySequence>, context_window: usize) -> Result<PackedBatch> {
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut boundaries: Vec<Vec<usize>> = Vec::new();
    let mut used: Vec<usize> = Vec::new();
    for (i, s) in sequences.iter().enumerate() {
        if s.len() > context_window {
            return Err(Error::Length {
                len: s.len(),
                window: context_window,
            });
        }
        if s.is_empty() {
            return Err(Error::domain(format!("sequence {i} is empty")));
        }
        match used.iter().position(|&u| u + s.len() <= context_window) {
            Some(r) => {
                boundaries[r].push(used[r]);
                rows[r].push(i);
                used[r] += s.len();
            }
            None => {
                rows.push(vec![i]);
                boundaries.push(vec![0]);
                used.push(s.len());
            }
        }
    }
    let filled: usize = used.iter().sum();
    let fill_ratio = if rows.is_empty() {
        0.0
    } else {
        filled as f64 / (rows.len() * context_window) as f64
    };
    Ok(PackedBatch {
        sequences,
        row_len: context_window,
        rows,
        boundaries,
        fill_ratio,
    })
}

impl PackedBatch {
    /// Segment lengths per row, e.g. `[[100, 150], [60]]`.
    pub fn row_lengths(&self) -> Vec<Vec<usize>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&i| self.sequences[i].len()).collect())
            .collect()
    }

    /// Block-diagonal causal mask over all rows laid end to end. Padding forms
    /// its own segment at the end of each row.
    pub fn mask(&self) -> AttnLayout {
        self.layout(true)
    }

    fn layout(&self, include_padding: bool) -> AttnLayout {
        let mut segments = Vec::new();
        let mut at = 0;
        for r in &self.rows {
            let mut used = 0;
            for &i in r {
                let l = self.sequences[i].len();
                segments.push((at, l));
                at += l;
                used += l;
            }
            if include_padding && used < self.row_len {
                segments.push((at, self.row_len - used));
                at += self.row_len - used;
            }
        }
        AttnLayout { segments, causal: true }
    }

    pub(crate) fn flat(&self, include_padding: bool) -> FlatInput<'_> {
        let mut slots = Vec::new();
        for r in &self.rows {
            let mut used = 0;
            for &i in r {
                let l = self.sequences[i].len();
                slots.extend((0..l).map(|p| Slot::Entry { seq: i, entry: p, pos: p }));
                used += l;
            }
            if include_padding {
                slots.extend((used..self.row_len).map(|_| Slot::Pad));
            }
        }
        FlatInput {
            seqs: self.sequences.iter().collect(),
            slots,
            layout: Arc::new(self.layout(include_padding)),
        }
    }
}

impl<T: Scalar> JanusModel<T> {
    /// Loss and gradients of a packed batch. Padding rows are skipped: they sit in
    /// their own attention segment and carry no targets.
    pub fn packed_loss(
        &self,
        batch: &PackedBatch,
        trainable: GroupSet,
        reduction: Reduction,
    ) -> Result<(LossParts<T>, Gradients<T>)> {
        for s in &batch.sequences {
            s.validate(&self.config, &self.codec)?;
        }
        self.loss_and_grads(&batch.flat(false), trainable, reduction, true)
    }

    /// Both heads at every position of every row, padding included.
    pub fn forward_packed(&self, batch: &PackedBatch) -> Result<HeadOutputs<T>> {
        for s in &batch.sequences {
            s.validate(&self.config, &self.codec)?;
        }
        let input = batch.flat(true);
        let mut b = self.binder(GroupSet::empty());
        let x = self.embed_graph(&mut b, &input)?;
        let embedded = b.g.into_value(x);
        self.forward(&embedded, &input.layout)
    }
}
