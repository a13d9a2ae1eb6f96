use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::corpus::{Sample, SampleKind, Sources};
use crate::error::{Error, Result};

/// Relative sampling weights `understanding : text : generation`, per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MixRatio {
    pub understanding: u32,
    pub text: u32,
    pub generation: u32,
}

impl MixRatio {
    pub fn new(understanding: u32, text: u32, generation: u32) -> Result<Self> {
        if understanding + text + generation == 0 {
            return Err(Error::config("mix ratio cannot be all zero"));
        }
        Ok(Self {
            understanding,
            text,
            generation,
        })
    }

    pub fn weight(&self, kind: SampleKind) -> u32 {
        match kind {
            SampleKind::Understanding => self.understanding,
            SampleKind::Text => self.text,
            SampleKind::Generation => self.generation,
        }
    }

    pub fn probabilities(&self) -> [f64; 3] {
        let total = (self.understanding + self.text + self.generation) as f64;
        SampleKind::ALL.map(|k| self.weight(k) as f64 / total)
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.understanding, self.text, self.generation)
    }
}

impl FromStr for MixRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::config(format!("mix ratio `{s}` is not of the form u:t:g"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n = |p: &str| p.trim().parse::<u32>().map_err(|_| bad());
        Self::new(n(parts[0])?, n(parts[1])?, n(parts[2])?)
    }
}

impl TryFrom<String> for MixRatio {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MixRatio> for String {
    fn from(r: MixRatio) -> String {
        r.to_string()
    }
}

/// Independent per-slot kind draws, proportional to the ratio weights.
pub fn draw_kinds<R: Rng>(ratio: &MixRatio, n: usize, rng: &mut R) -> Vec<SampleKind> {
    let dist = WeightedIndex::new(SampleKind::ALL.map(|k| ratio.weight(k))).expect("ratio has a nonzero weight");
    (0..n).map(|_| SampleKind::ALL[dist.sample(rng)]).collect()
}

/// One training batch: each slot picks a kind, then draws from that kind's source.
pub fn mix<R: Rng>(sources: &Sources, ratio: &MixRatio, batch_size: usize, rng: &mut R) -> Result<Vec<Sample>> {
    for kind in SampleKind::ALL {
        if ratio.weight(kind) > 0 && sources.get(kind).is_empty() {
            return Err(Error::config(format!(
                "ratio {ratio} gives weight to {} data but that source is empty",
                kind.dir_name()
            )));
        }
    }
    draw_kinds(ratio, batch_size, rng)
        .into_iter()
        .map(|k| sources.get(k).draw(rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::SampleSource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_and_display() {
        let r: MixRatio = "5:1:4".parse().unwrap();
        assert_eq!((r.understanding, r.text, r.generation), (5, 1, 4));
        assert_eq!(r.to_string(), "5:1:4");
        assert!("0:0:0".parse::<MixRatio>().is_err());
        assert!("1:2".parse::<MixRatio>().is_err());
        let p = r.probabilities();
        assert!((p[0] * 128.0 - 64.0).abs() < 1e-9 && (p[1] * 128.0 - 12.8).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_never_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = MixRatio::new(1, 0, 3).unwrap();
        assert!(draw_kinds(&r, 5000, &mut rng).iter().all(|&k| k != SampleKind::Text));
    }

    #[test]
    fn empty_source_with_weight_is_config_error() {
        let mut s = Sources::procedural(48);
        s.text = SampleSource::empty();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            mix(&s, &MixRatio::new(1, 1, 1).unwrap(), 4, &mut rng),
            Err(Error::Config(_))
        ));
        assert_eq!(mix(&s, &MixRatio::new(1, 0, 1).unwrap(), 4, &mut rng).unwrap().len(), 4);
    }
}
