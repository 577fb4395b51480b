//! TOML run configuration. Every section is optional; missing keys keep
//! their library defaults and unknown keys are an error.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use relmol::encoders::EncoderConfig;
use relmol::fingerprint::{DEFAULT_RADIUS, DEFAULT_WIDTH};
use relmol::pipeline::{FinetuneConfig, PretrainConfig, SplitRatios, SyntheticConfig, DEFAULT_GAIN_THRESHOLD};
use relmol::similarity::{PpmRange, TargetOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FingerprintSection {
    pub radius: usize,
    pub width: usize,
}

impl Default for FingerprintSection {
    fn default() -> Self {
        FingerprintSection {
            radius: DEFAULT_RADIUS,
            width: DEFAULT_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitySection {
    pub threshold: f64,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection {
            threshold: DEFAULT_GAIN_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overridden by `--seed`. Propagates to every section that takes a seed.
    pub seed: Option<u64>,
    /// Shared encoder; when set it replaces both `pretrain.encoder` and
    /// `finetune.encoder` so checkpoints stay compatible.
    pub encoder: Option<EncoderConfig>,
    pub fingerprint: FingerprintSection,
    pub similarity: TargetOptions,
    pub ppm: PpmRange,
    pub split: SplitRatios,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub sensitivity: SensitivitySection,
    pub synthetic: SyntheticConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Returns the parsed config and the file text, which the manifest keeps verbatim.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = Self::parse(&text).with_context(|| format!("config {}", path.display()))?;
        Ok((cfg, text))
    }

    /// Resolve the effective seed and push it into the sections.
    pub fn apply_seed(&mut self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.seed).unwrap_or(0);
        self.seed = Some(seed);
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self.synthetic.seed = seed;
        // pretraining targets follow the similarity section
        self.pretrain.targets = self.similarity;
        if let Some(enc) = self.encoder {
            self.pretrain.encoder = enc;
            self.finetune.encoder = enc;
        }
        seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::parse("seed = 7\n[finetune]\nepochs = 3\n[fingerprint]\nwidth = 1024\n").unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.finetune.epochs, 3);
        assert_eq!(cfg.finetune.head_lr, FinetuneConfig::default().head_lr);
        assert_eq!(cfg.fingerprint.radius, DEFAULT_RADIUS);
        assert_eq!(cfg.fingerprint.width, 1024);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("sed = 1").is_err());
        assert!(RunConfig::parse("[pretrain]\nlearning_rate = 0.1").is_err());
        assert!(RunConfig::parse("[pretrain.encoder]\ndepht = 2").is_err());
    }

    #[test]
    fn flag_beats_file_seed() {
        let mut cfg = RunConfig::parse("seed = 7").unwrap();
        assert_eq!(cfg.apply_seed(Some(3)), 3);
        assert_eq!(cfg.finetune.seed, 3);
        let mut cfg = RunConfig::parse("seed = 7").unwrap();
        assert_eq!(cfg.apply_seed(None), 7);
        assert_eq!(cfg.synthetic.seed, 7);
    }

    #[test]
    fn shared_encoder_section() {
        let mut cfg = RunConfig::parse("[encoder]\ndepth = 2\nhidden_dim = 16\n").unwrap();
        cfg.apply_seed(None);
        assert_eq!(cfg.pretrain.encoder.depth, 2);
        assert_eq!(cfg.finetune.encoder, cfg.pretrain.encoder);
    }
}
