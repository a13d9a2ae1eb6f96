//! Named parameter storage partitioned into the eight freezable groups.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    TextEmbedding,
    TransformerBlocks,
    TextHead,
    ImageHead,
    UndAdaptor,
    GenAdaptor,
    UndEncoder,
    GenTokenizer,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::TextEmbedding,
        ParamGroup::TransformerBlocks,
        ParamGroup::TextHead,
        ParamGroup::ImageHead,
        ParamGroup::UndAdaptor,
        ParamGroup::GenAdaptor,
        ParamGroup::UndEncoder,
        ParamGroup::GenTokenizer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::TextEmbedding => "text_embedding",
            ParamGroup::TransformerBlocks => "transformer_blocks",
            ParamGroup::TextHead => "text_head",
            ParamGroup::ImageHead => "image_head",
            ParamGroup::UndAdaptor => "und_adaptor",
            ParamGroup::GenAdaptor => "gen_adaptor",
            ParamGroup::UndEncoder => "und_encoder",
            ParamGroup::GenTokenizer => "gen_tokenizer",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of parameter groups.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const fn empty() -> Self {
        GroupSet(0)
    }

    pub fn all() -> Self {
        Self::from_groups(&ParamGroup::ALL)
    }

    pub fn from_groups(groups: &[ParamGroup]) -> Self {
        GroupSet(groups.iter().fold(0, |acc, g| acc | g.bit()))
    }

    pub fn with(self, g: ParamGroup) -> Self {
        GroupSet(self.0 | g.bit())
    }

    pub fn without(self, g: ParamGroup) -> Self {
        GroupSet(self.0 & !g.bit())
    }

    pub fn contains(self, g: ParamGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ParamGroup> {
        ParamGroup::ALL.into_iter().filter(move |g| self.contains(*g))
    }

    pub fn names(self) -> Vec<&'static str> {
        self.iter().map(ParamGroup::name).collect()
    }
}

impl fmt::Debug for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.names()).finish()
    }
}

impl Serialize for GroupSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        let mut set = GroupSet::empty();
        for n in names {
            let g = ParamGroup::from_name(&n)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown parameter group `{n}`")))?;
            set = set.with(g);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Mat<T>,
}

/// Ordered parameter tensors. A tensor's position is its stable parameter id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, group: ParamGroup, value: Mat<T>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, group, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Param<T> {
        &self.params[id]
    }

    pub fn value(&self, id: usize) -> &Mat<T> {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Mat<T> {
        &mut self.params[id].value
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Param<T>)> {
        self.params.iter().enumerate()
    }

    pub fn ids_in(&self, group: ParamGroup) -> impl Iterator<Item = usize> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.group == group)
            .map(|(i, _)| i)
    }

    pub fn group_numel(&self, group: ParamGroup) -> usize {
        self.ids_in(group).map(|i| self.params[i].value.len()).sum()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// SHA-256 over the little-endian 32-bit encoding of every tensor in `group`.
    pub fn group_digest(&self, group: ParamGroup) -> String {
        let mut h = Sha256::new();
        for id in self.ids_in(group) {
            let p = &self.params[id];
            h.update(p.name.as_bytes());
            for v in &p.value.data {
                h.update((v.as_f64() as f32).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies values from `other`, requiring identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &mut self.params {
            let id = other
                .id_of(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
            let src = &other.params[id];
            if (src.value.rows, src.value.cols) != (p.value.rows, p.value.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {}x{}, expected {}x{}",
                    p.name, src.value.rows, src.value.cols, p.value.rows, p.value.cols
                )));
            }
            p.value.data.copy_from_slice(&src.value.data);
        }
        Ok(())
    }
}
