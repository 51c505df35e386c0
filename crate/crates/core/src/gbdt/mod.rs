//! Histogram gradient-boosted regression trees.
//!
//! Trees grow leaf-wise (the leaf with the highest split gain is split next)
//! up to `num_leaves`. Numeric features are pre-binned into quantile bins,
//! categorical features split on a subset of their levels (every subset up to
//! eight levels, a sorted scan beyond), and missing values follow a learned
//! per-split default direction. Quantile
//! objectives renew each leaf to the leaf-local weighted quantile of the
//! residuals after the tree structure is fixed.

mod binning;
mod goss;
mod histogram;
mod model;
mod split;
mod train;
mod tree;

pub use binning::{BinnedData, FeatureBins};
pub use goss::{goss_sample, GossSample};
pub use histogram::{build_histograms, BinStat, FeatureHistogram};
pub use model::{BoostedModel, CategoricalFeature, FeatureSchema, FormatVersion, MODEL_FORMAT_MAJOR};
pub use split::{best_split, split_gain, NodeStats, SplitCandidate, SplitRule, EXHAUSTIVE_LEVELS, LAMBDA};
pub use train::{train, train_with_trace};
pub use tree::TreeNode;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GossParams {
    /// Fraction of rows kept by largest absolute gradient.
    pub top_rate: f64,
    /// Fraction of rows sampled uniformly from the remainder.
    pub other_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoosterParams {
    pub boosting_iterations: usize,
    pub learning_rate: f64,
    /// `None` means unlimited depth.
    pub max_depth: Option<usize>,
    pub num_leaves: usize,
    pub data_fraction: f64,
    pub feature_fraction: f64,
    pub min_data_in_leaf: usize,
    pub max_bins: usize,
    pub goss: Option<GossParams>,
    pub loss: LossSpec,
    pub seed: u64,
}

impl Default for BoosterParams {
    fn default() -> Self {
        BoosterParams {
            boosting_iterations: 1000,
            learning_rate: 0.05,
            max_depth: None,
            num_leaves: 15,
            data_fraction: 0.6,
            feature_fraction: 0.6,
            min_data_in_leaf: 20,
            max_bins: 255,
            goss: None,
            loss: LossSpec::Mse,
            seed: 0,
        }
    }
}

impl BoosterParams {
    pub fn with_loss(mut self, loss: LossSpec) -> Self {
        self.loss = loss;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.num_leaves < 2 {
            return bad(format!("num_leaves must be >= 2, got {}", self.num_leaves));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return bad(format!("data_fraction must be in (0, 1], got {}", self.data_fraction));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return bad(format!("feature_fraction must be in (0, 1], got {}", self.feature_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_bins < 2 || self.max_bins > u16::MAX as usize {
            return bad(format!("max_bins must be in [2, 65535], got {}", self.max_bins));
        }
        if self.min_data_in_leaf == 0 {
            return bad("min_data_in_leaf must be >= 1".into());
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be >= 1 when set".into());
        }
        if let Some(g) = self.goss {
            if !(g.top_rate > 0.0 && g.other_rate > 0.0 && g.top_rate + g.other_rate <= 1.0 + 1e-12) {
                return bad(format!("goss rates must be positive with a + b <= 1, got a = {}, b = {}", g.top_rate, g.other_rate));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = BoosterParams::default();
        p.validate().unwrap();
        assert_eq!((p.boosting_iterations, p.num_leaves, p.max_depth), (1000, 15, None));
        assert_eq!((p.data_fraction, p.feature_fraction), (0.6, 0.6));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = BoosterParams { num_leaves: 1, ..Default::default() };
        assert!(p.validate().is_err());
        let p = BoosterParams { data_fraction: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = BoosterParams { goss: Some(GossParams { top_rate: 0.7, other_rate: 0.5 }), ..Default::default() };
        assert!(p.validate().is_err());
        let p = BoosterParams { loss: LossSpec::Quantile { tau: 1.0 }, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
