//! Model hyperparameters and the recognition vocabulary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Total query count N (empty + text).
    pub num_queries: usize,
    /// Stride of the encoder feature map; the RoI map runs at half of it.
    pub backbone_stride: usize,
    /// Recognition character set; SOS/EOS/PAD are added on top.
    pub alphabet: String,
    pub max_text_len: usize,
    pub roi_h: usize,
    pub roi_w: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            encoder_layers: 2,
            decoder_layers: 6,
            num_queries: 20,
            backbone_stride: 8,
            alphabet: "abcdefghijkl".to_string(),
            max_text_len: 8,
            roi_h: 4,
            roi_w: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 4 != 0 {
            return Err(Error::Config(
                "d_model must be divisible by 4 for the 2-D position encoding".into(),
            ));
        }
        if self.num_queries == 0 {
            return Err(Error::Config("num_queries must be at least 1".into()));
        }
        if self.backbone_stride != 8 {
            return Err(Error::Config(format!(
                "backbone_stride {} unsupported; the backbone is built for stride 8",
                self.backbone_stride
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("encoder/decoder need at least one layer".into()));
        }
        if self.roi_h == 0 || self.roi_w == 0 {
            return Err(Error::Config("roi grid extents must be at least 1".into()));
        }
        if self.alphabet.is_empty() {
            return Err(Error::Config("alphabet must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in self.alphabet.chars() {
            if !seen.insert(c) {
                return Err(Error::Config(format!("alphabet repeats {c:?}")));
            }
        }
        if self.max_text_len == 0 {
            return Err(Error::Config("max_text_len must be at least 1".into()));
        }
        Ok(())
    }
}

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;

/// Character set plus the SOS/EOS/PAD specials.
#[derive(Debug, Clone)]
pub struct Vocab {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl Vocab {
    pub fn new(alphabet: &str) -> Vocab {
        let chars: Vec<char> = alphabet.chars().collect();
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + 3))
            .collect();
        Vocab { chars, index }
    }

    /// Specials plus characters.
    pub fn size(&self) -> usize {
        self.chars.len() + 3
    }

    pub fn char_id(&self, c: char) -> Result<usize> {
        self.index.get(&c).copied().ok_or(Error::Vocabulary(c))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.char_id(c)).collect()
    }

    /// Drops any special tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| id.checked_sub(3).and_then(|i| self.chars.get(i)))
            .collect()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelConfig::default();
        c.d_model = 30; // not divisible by n_heads=4
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.alphabet = "aab".into();
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.backbone_stride = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn vocab_round_trip_and_unknown_symbol() {
        let v = Vocab::new("abc");
        assert_eq!(v.size(), 6);
        let ids = v.encode("cab").unwrap();
        assert_eq!(ids, vec![5, 3, 4]);
        assert_eq!(v.decode(&ids), "cab");
        assert!(matches!(v.encode("xyz").unwrap_err(), Error::Vocabulary('x')));
        assert_eq!(v.decode(&[PAD, SOS, EOS]), "");
    }
}
