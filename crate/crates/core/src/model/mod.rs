//! Root-only part model: filters, scoring, detection and the model file.

mod detect;
mod io;
mod score;

pub use detect::{Detector, DEFAULT_NMS_IOU};
pub use io::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use score::{score_level, ScoreMap};

use crate::error::{Error, Result};
use crate::postproc::Rect;
use crate::train::BBoxRegressor;

#[derive(Debug, Clone, PartialEq)]
pub struct RootFilter {
    pub component_id: usize,
    /// Height in cells.
    pub h: usize,
    /// Width in cells.
    pub w: usize,
    pub channels: usize,
    /// `channels x h x w`, channel-major.
    pub weights: Vec<f32>,
    pub bias: f32,
}

impl RootFilter {
    pub fn new(
        component_id: usize,
        h: usize,
        w: usize,
        channels: usize,
        weights: Vec<f32>,
        bias: f32,
    ) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput(format!("filter shape {h}x{w}")));
        }
        if weights.len() != h * w * channels {
            return Err(Error::InvalidInput(format!(
                "filter weights length {} != {h}x{w}x{channels}",
                weights.len()
            )));
        }
        if !bias.is_finite() || weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite filter parameter".into()));
        }
        Ok(Self {
            component_id,
            h,
            w,
            channels,
            weights,
            bias,
        })
    }

    pub fn zeros(component_id: usize, h: usize, w: usize, channels: usize) -> Self {
        Self {
            component_id,
            h,
            w,
            channels,
            weights: vec![0.0; h * w * channels],
            bias: 0.0,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.h * self.w * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpmModel {
    pub channels: usize,
    pub components: Vec<RootFilter>,
    /// Digest of the pyramid configuration the model was trained under.
    pub config_digest: [u8; 32],
    pub extractor: String,
    pub threshold: f64,
    /// One regressor per component when present.
    pub regressors: Option<Vec<BBoxRegressor>>,
    /// Free-form `key=value` lines describing the training run.
    pub metadata: String,
}

impl DpmModel {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidInput("model has no components".into()));
        }
        for (i, f) in self.components.iter().enumerate() {
            if f.channels != self.channels {
                return Err(Error::InvalidInput(format!(
                    "component {i} has {} channels, model has {}",
                    f.channels, self.channels
                )));
            }
            if f.component_id != i {
                return Err(Error::InvalidInput(format!(
                    "component at position {i} has id {}",
                    f.component_id
                )));
            }
        }
        if let Some(regs) = &self.regressors {
            if regs.len() != self.components.len() {
                return Err(Error::InvalidInput(format!(
                    "{} regressors for {} components",
                    regs.len(),
                    self.components.len()
                )));
            }
            for (f, r) in self.components.iter().zip(regs) {
                if r.feature_len() != f.feature_len() {
                    return Err(Error::InvalidInput(format!(
                        "regressor for component {} expects {} features, filter has {}",
                        f.component_id,
                        r.feature_len(),
                        f.feature_len()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: Rect,
    pub score: f64,
    pub component_id: usize,
    pub level_index: usize,
    /// Top-left cell of the scoring window at `level_index`.
    pub cell: (usize, usize),
}
