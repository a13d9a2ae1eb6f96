//! Closed word-level vocabulary for the shapes world.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
/// Begin-of-image: the model switches to emitting image ids after this token.
pub const BOI: u32 = 3;
/// End-of-image.
pub const EOI: u32 = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<boi>", "<eoi>"];

const WORDS: &[&str] = &[
    "a", "and", "at", "of", "the", "is", "are", "there", "what", "how", "many", "where", "describe",
    "image", "color", "shape", "has", "sides", "round", "left", "right", "above", "below", "top",
    "bottom", "center", "small", "large", "red", "green", "blue", "yellow", "purple", "cyan",
    "orange", "white", "circle", "square", "triangle", "circles", "squares", "triangles", "one",
    "two", "three", "four", "zero",
];

#[derive(Debug)]
pub struct Vocab {
    tokens: Vec<&'static str>,
    index: HashMap<&'static str, u32>,
}

impl Vocab {
    pub fn standard() -> &'static Vocab {
        static V: OnceLock<Vocab> = OnceLock::new();
        V.get_or_init(|| {
            let tokens: Vec<&'static str> = SPECIALS.iter().chain(WORDS).copied().collect();
            let index = tokens.iter().enumerate().map(|(i, t)| (*t, i as u32)).collect();
            Vocab { tokens, index }
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: u32) -> Option<&'static str> {
        self.tokens.get(id as usize).copied()
    }

    /// Whitespace tokenization; unknown words are a domain error.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| {
                let w = w.to_ascii_lowercase();
                self.id(&w)
                    .ok_or_else(|| Error::domain(format!("word `{w}` is not in the vocabulary")))
            })
            .collect()
    }

    /// Joins ordinary words; special tokens are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id as usize >= SPECIALS.len())
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
