//! Run configuration: one JSON document covering model, losses, data
//! synthesis, tracking threshold and the training protocol. Every field is
//! validated before any work starts and the document is copied verbatim into
//! the run directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use vts_core::data::SynthConfig;
use vts_core::error::{Error, Result};
use vts_core::losses::LossWeights;
use vts_core::model::ModelConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate halfway through the schedule.
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            lr: 2e-4,
            lr_decay_factor: 0.1,
            weight_decay: 1e-4,
            grad_clip: Some(1.0),
            checkpoint_every: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub synth: SynthConfig,
    /// Track lifecycle threshold; scores at or above it count as present.
    pub tau: f64,
    pub clip_len: usize,
    pub max_interval: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            synth: SynthConfig::default(),
            tau: 0.5,
            clip_len: 6,
            max_interval: 5,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.synth.validate()?;
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::Config(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        if self.clip_len == 0 || self.max_interval == 0 {
            return Err(Error::Config("clip_len and max_interval must be at least 1".into()));
        }
        if self.synth.video_len < self.clip_len {
            return Err(Error::Config(format!(
                "video_len {} is shorter than clip_len {}",
                self.synth.video_len, self.clip_len
            )));
        }
        let vocab = vts_core::model::Vocab::new(&self.model.alphabet);
        for c in self.synth.alphabet.chars() {
            if !vocab.contains(c) {
                return Err(Error::Config(format!(
                    "synth alphabet char {c:?} is not in the model vocabulary"
                )));
            }
        }
        if self.synth.word_len_max > self.model.max_text_len {
            return Err(Error::Config(format!(
                "words up to {} chars exceed the max transcription length {}",
                self.synth.word_len_max, self.model.max_text_len
            )));
        }
        if self.train.steps == 0 || self.train.checkpoint_every == 0 {
            return Err(Error::Config("steps and checkpoint_every must be at least 1".into()));
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.train.lr)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Deterministic stream split for derived seeds (clip seeds, step seeds).
pub fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn cross_field_checks_fire() {
        let mut c = RunConfig::default();
        c.synth.alphabet = "xyz".into();
        assert!(c.validate().is_err());

        let mut c = RunConfig::default();
        c.synth.word_len_max = 99;
        assert!(c.validate().is_err());

        let mut c = RunConfig::default();
        c.clip_len = c.synth.video_len + 1;
        assert!(c.validate().is_err());
    }
}
