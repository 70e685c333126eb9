use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::optim::OptimizerConfig;

use super::model::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Bmt,
    Pad,
    Npad1,
    Npad2,
    DaclOnly,
    FrlOnly,
    NpadDependent,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Bmt,
        Variant::Pad,
        Variant::Npad1,
        Variant::Npad2,
        Variant::DaclOnly,
        Variant::FrlOnly,
        Variant::NpadDependent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Bmt => "bmt",
            Variant::Pad => "pad",
            Variant::Npad1 => "npad1",
            Variant::Npad2 => "npad2",
            Variant::DaclOnly => "dacl-only",
            Variant::FrlOnly => "frl-only",
            Variant::NpadDependent => "npad-dependent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }

    /// Number of non-protected attributes the variant selects, if any.
    pub fn selected_attributes(self) -> Option<usize> {
        match self {
            Variant::Bmt | Variant::Pad => None,
            Variant::Npad1 | Variant::DaclOnly | Variant::FrlOnly => Some(1),
            Variant::Npad2 | Variant::NpadDependent => Some(2),
        }
    }

    pub fn uses_protected_labels(self) -> bool {
        self == Variant::Pad
    }

    /// Loss weights after the variant's ablation is applied.
    pub fn losses(self, base: LossConfig) -> LossConfig {
        match self {
            Variant::DaclOnly => LossConfig { lambda2: 0.0, ..base },
            Variant::FrlOnly => LossConfig { lambda1: 0.0, ..base },
            _ => base,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl StageConfig {
    fn validate(&self, stage: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{stage}.batch_size must be at least 1")));
        }
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("{stage}.optimizer.lr = {lr} must be positive")));
        }
        if let OptimizerConfig::Sgd { momentum, .. } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::Config(format!("{stage}.optimizer.momentum = {momentum} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub target: String,
    /// Protected attribute used as the grouping source by PAD.
    pub protected: String,
    pub seed: u64,
    pub alpha: f64,
    /// Overrides the variant's number of selected attributes.
    pub select_n: Option<usize>,
    /// Joint cross-entropy training of the baseline predictor.
    pub baseline: StageConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub freeze_extractor: bool,
    /// Start stage 1 from the baseline's extractor instead of a fresh
    /// initialization.
    pub stage1_from_baseline: bool,
    pub loss: LossConfig,
    pub model: ModelSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sgd = StageConfig {
            epochs: 10,
            batch_size: 50,
            optimizer: OptimizerConfig::Sgd {
                lr: 1e-3,
                momentum: 0.9,
            },
        };
        Self {
            variant: Variant::Npad1,
            target: crate::data::TARGET_NAME.to_string(),
            protected: crate::data::PROTECTED_NAME.to_string(),
            seed: 0,
            alpha: 0.05,
            select_n: None,
            baseline: sgd,
            stage1: StageConfig {
                epochs: 10,
                batch_size: 200,
                optimizer: OptimizerConfig::Adam { lr: 1e-4 },
            },
            stage2: sgd,
            freeze_extractor: true,
            stage1_from_baseline: true,
            loss: LossConfig::default(),
            model: ModelSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::Config("target attribute is empty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if self.select_n == Some(0) {
            return Err(Error::Config("select_n must be at least 1".into()));
        }
        self.baseline.validate("baseline")?;
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        if self.variant != Variant::Bmt {
            self.variant.losses(self.loss).validate()?;
        }
        self.model.validate()
    }

    pub fn selected_attributes(&self) -> Option<usize> {
        self.variant.selected_attributes().map(|n| self.select_n.unwrap_or(n))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }
}

/// Lowercase hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_distinguishes_variants() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            variant: Variant::Bmt,
            ..a.clone()
        };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!(Variant::parse("npad3").is_err());
    }

    #[test]
    fn ablations() {
        let base = LossConfig::default();
        assert_eq!(Variant::DaclOnly.losses(base).lambda2, 0.0);
        assert_eq!(Variant::FrlOnly.losses(base).lambda1, 0.0);
        assert_eq!(Variant::Npad2.losses(base), base);
    }
}
