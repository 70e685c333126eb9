//! Training objectives over composite attribute classes: the attribute
//! cluster loss driven by moving per-class statistics, and the filter
//! redundancy loss over the highest-magnitude filters of a layer.

mod cluster;
mod composite;
mod filter;

pub use cluster::{
    batch_summarize, dacl, dacl_step, update_moving_mean, update_moving_std, BatchClassSummary,
    ClassMoments, ClusterState, DaclStep,
};
pub use composite::{active_classes, composite_bits, composite_class_id};
pub use filter::{frl, frl_with_grad, mean_normalize_filter, FilterBank};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub top_k: usize,
    pub eps_dist: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.5,
            top_k: 8,
            eps_dist: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.lambda1 + self.lambda2 <= 0.0 {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.eps_dist > 0.0) {
            return Err(Error::Config("eps_dist must be positive".into()));
        }
        Ok(())
    }
}

/// `λ₁·L_C + λ₂·L_F`.
pub fn combined_loss(cluster_loss: f64, filter_loss: f64, config: &LossConfig) -> f64 {
    config.lambda1 * cluster_loss + config.lambda2 * filter_loss
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_weights() {
        let cfg = LossConfig::default();
        assert_eq!(combined_loss(1.0, 4.0, &cfg), 2.5);
        let dacl_only = LossConfig { lambda2: 0.0, ..cfg };
        assert_eq!(combined_loss(1.0, 4.0, &dacl_only), 0.5);
        let frl_only = LossConfig { lambda1: 0.0, ..cfg };
        assert_eq!(combined_loss(1.0, 4.0, &frl_only), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let zero = LossConfig { lambda1: 0.0, lambda2: 0.0, ..Default::default() };
        assert!(zero.validate().is_err());
        let neg = LossConfig { lambda1: -1.0, ..Default::default() };
        assert!(neg.validate().is_err());
    }
}
