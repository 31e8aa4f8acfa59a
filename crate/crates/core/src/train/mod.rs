//! Training: component shapes, sample extraction, linear SVMs with hard
//! negative mining, and bounding-box regression.

mod bbox;
mod components;
mod mining;
mod sampling;
mod svm;

pub use bbox::{
    apply_bbox_regression, bbox_targets, collect_regression_pairs, ridge_objective,
    train_bbox_regressor, BBoxRegressor, RegressionPair,
};
pub use components::{assign_components, ComponentAssignment};
pub use mining::{
    hard_negative_mine, is_negative_window, train_model, MiningReport, RoundStats, TrainImage,
    TrainOutcome,
};
pub use sampling::{extract_positive, sample_negatives, select_level, LevelChoice};
pub use svm::{svm_objective, train_svm, LinearSvm};

use crate::error::{Error, Result};

/// Where a training window came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowKey {
    pub image: usize,
    pub level_index: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `C x h x w` window, channel-major.
    pub feature: Vec<f32>,
    /// +1 or -1.
    pub label: i8,
    pub image_id: String,
    pub key: WindowKey,
    pub component_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub svm_cost: f64,
    pub mining_rounds: usize,
    pub negatives_per_image: usize,
    pub neg_iou_max: f64,
    /// Uncached negatives scoring above this are added to the cache.
    pub hard_threshold: f64,
    /// Cached negatives scoring below this are dropped.
    pub easy_prune_threshold: f64,
    /// Relative duality-gap tolerance of the SVM solver.
    pub convergence_tol: f64,
    pub rng_seed: u64,
    /// Ridge strength of the box regressor.
    pub bbox_lambda: f64,
    /// Minimum window/ground-truth IOU for regression training pairs.
    pub bbox_min_iou: f64,
    pub max_svm_epochs: usize,
    /// Most hard negatives one image may contribute per scan; the
    /// highest-scoring windows are kept.
    pub max_hard_per_image: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            svm_cost: 0.01,
            mining_rounds: 5,
            negatives_per_image: 40,
            neg_iou_max: 0.3,
            hard_threshold: -1.0,
            easy_prune_threshold: -1.1,
            convergence_tol: 1e-3,
            rng_seed: 0,
            bbox_lambda: 1000.0,
            bbox_min_iou: 0.6,
            max_svm_epochs: 2000,
            max_hard_per_image: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.neg_iou_max) {
            return Err(Error::Config("neg_iou_max must be in [0, 1)".into()));
        }
        if self.mining_rounds < 1 {
            return Err(Error::Config("mining_rounds must be >= 1".into()));
        }
        if !(self.svm_cost > 0.0) {
            return Err(Error::Config("svm_cost must be > 0".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be > 0".into()));
        }
        if self.max_hard_per_image < 1 {
            return Err(Error::Config("max_hard_per_image must be >= 1".into()));
        }
        if !(self.bbox_lambda >= 0.0) {
            return Err(Error::Config("bbox_lambda must be >= 0".into()));
        }
        Ok(())
    }
}
