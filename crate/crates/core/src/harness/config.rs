//! Experiment configuration.
//!
//! One JSON document with a section per subsystem. Every section defaults
//! independently, unknown keys are rejected, and validation errors name the
//! offending key as `section.field`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::grpo::ToyTrainerConfig;
use crate::harness::ablation::AblationConfig;
use crate::harness::synthetic::SyntheticPairConfig;
use crate::harness::train::AlignConfig;
use crate::sequencing::DEFAULT_GROUP_DURATION;
use crate::temporal::CrteConfig;

/// Environment variable that replaces every seed in a loaded config.
pub const SEED_ENV: &str = "OMNI_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TegConfig {
    pub t_g: f64,
}

impl Default for TegConfig {
    fn default() -> Self {
        TegConfig {
            t_g: DEFAULT_GROUP_DURATION,
        }
    }
}

impl TegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_g > 0.0 && self.t_g.is_finite()) {
            return Err(OmniError::config("t_g", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub crte: CrteConfig,
    pub teg: TegConfig,
    pub align: AlignConfig,
    pub grpo: ToyTrainerConfig,
    pub data: SyntheticPairConfig,
    pub ablation: AblationConfig,
}

fn in_section(section: &str, result: Result<()>) -> Result<()> {
    result.map_err(|e| match e {
        OmniError::InvalidConfig { key, reason } => OmniError::InvalidConfig {
            key: format!("{section}.{key}"),
            reason,
        },
        other => OmniError::InvalidConfig {
            key: section.to_string(),
            reason: other.to_string(),
        },
    })
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies `OMNI_SEED` if set, then validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_slice(&std::fs::read(path)?)?;
        if let Some(seed) = seed_from_env()? {
            cfg.override_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces every seed; ablation seeds become `seed, seed + 1, …`.
    pub fn override_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.align.seed = seed;
        self.grpo.seed = seed;
        let n = self.ablation.seeds.len() as u64;
        self.ablation.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
    }

    pub fn validate(&self) -> Result<()> {
        in_section("crte", self.crte.validate())?;
        in_section("teg", self.teg.validate())?;
        in_section("align", self.align.validate())?;
        in_section("grpo", self.grpo.validate())?;
        in_section("data", self.data.validate())?;
        in_section("ablation", self.ablation.validate())?;
        if self.crte.dim != self.data.c {
            return Err(OmniError::config("crte.dim", format!("must equal data.c ({})", self.data.c)));
        }
        Ok(())
    }
}

/// `OMNI_SEED` as a number, if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| OmniError::config(SEED_ENV, format!("not an unsigned integer: {s:?}"))),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(OmniError::InvalidConfig { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"grpo": {"g": 4}, "crte": {"t_max": 60}}"#).unwrap();
        assert_eq!(cfg.grpo.g, 4);
        assert_eq!(cfg.grpo.epsilon, 0.2);
        assert_eq!(cfg.crte.t_max, 60.0);
        assert_eq!(cfg.crte.theta, 10_000.0);
    }

    #[test]
    fn invalid_values_name_their_key() {
        assert_eq!(key_of(r#"{"crte": {"dim": 31}}"#), "crte.dim");
        assert_eq!(key_of(r#"{"teg": {"t_g": 0}}"#), "teg.t_g");
        assert_eq!(key_of(r#"{"align": {"tau": -1}}"#), "align.tau");
        assert_eq!(key_of(r#"{"grpo": {"epsilon": 1.5}}"#), "grpo.epsilon");
        assert_eq!(key_of(r#"{"data": {"latent_dim": 64}}"#), "data.latent_dim");
        assert_eq!(key_of(r#"{"ablation": {"t_max": 1}}"#), "ablation.t_max");
        assert_eq!(key_of(r#"{"crte": {"dim": 16}}"#), "crte.dim");
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [r#"{"extra": 1}"#, r#"{"crte": {"dim": 32, "base": 2}}"#, r#"{"grpo": {"G": 8}}"#] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(OmniError::Json(_))), "{text}");
        }
    }

    #[test]
    fn seed_override_reaches_every_section() {
        let mut cfg = ExperimentConfig::default();
        cfg.override_seed(41);
        assert_eq!((cfg.data.seed, cfg.align.seed, cfg.grpo.seed), (41, 41, 41));
        assert_eq!(cfg.ablation.seeds, vec![41, 42, 43]);
    }
}
