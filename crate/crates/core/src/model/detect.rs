use rayon::prelude::*;

use super::{score_level, DpmModel, Detection};
use crate::error::{Error, Result};
use crate::featex::{FeaturePyramid, Stage};
use crate::imaging::PyramidConfig;
use crate::postproc::nms;
use crate::train::apply_bbox_regression;

pub const DEFAULT_NMS_IOU: f64 = 0.3;

/// Runs a model over norm5 pyramids. Construction checks that the model was
/// trained under the same pyramid configuration and extractor.
#[derive(Debug, Clone)]
pub struct Detector<'m> {
    model: &'m DpmModel,
    nms_iou: f64,
    regression: bool,
}

impl<'m> Detector<'m> {
    pub fn new(model: &'m DpmModel, pyramid: &PyramidConfig, extractor: &str) -> Result<Self> {
        model.validate()?;
        if model.config_digest != pyramid.digest() {
            return Err(Error::Incompatible(
                "pyramid configuration digest differs from the model's".into(),
            ));
        }
        if model.extractor != extractor {
            return Err(Error::Incompatible(format!(
                "model trained with extractor {:?}, features come from {:?}",
                model.extractor, extractor
            )));
        }
        Ok(Self::unchecked(model))
    }

    /// Skips the digest checks; for callers that built the model in-process.
    pub fn unchecked(model: &'m DpmModel) -> Self {
        Self {
            model,
            nms_iou: DEFAULT_NMS_IOU,
            regression: true,
        }
    }

    pub fn with_nms_iou(mut self, iou: f64) -> Self {
        self.nms_iou = iou;
        self
    }

    pub fn with_regression(mut self, on: bool) -> Self {
        self.regression = on;
        self
    }

    /// Every window scoring strictly above `threshold`, ordered by
    /// (level, component, row, col).
    pub fn candidates(&self, fp: &FeaturePyramid, threshold: f64) -> Result<Vec<Detection>> {
        fp.require_stage(Stage::Norm5)?;
        let jobs: Vec<(usize, usize)> = (0..fp.levels.len())
            .flat_map(|l| (0..self.model.components.len()).map(move |c| (l, c)))
            .collect();
        let per_job = jobs
            .par_iter()
            .map(|&(l, c)| {
                let level = &fp.levels[l];
                let filter = &self.model.components[c];
                let sm = score_level(&level.map, filter, level.geometry.level_index)?;
                let mut hits = Vec::new();
                for r in 0..sm.rows {
                    for k in 0..sm.cols {
                        let s = sm.at(r, k);
                        if s > threshold {
                            hits.push(Detection {
                                image_id: fp.image_id.clone(),
                                bbox: level.geometry.window_box(r, k, filter.h, filter.w),
                                score: s,
                                component_id: c,
                                level_index: level.geometry.level_index,
                                cell: (r, k),
                            });
                        }
                    }
                }
                Ok(hits)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(per_job.into_iter().flatten().collect())
    }

    /// Threshold, joint NMS across components, then box regression when the
    /// model carries regressors. Output is sorted by descending score.
    pub fn detect(&self, fp: &FeaturePyramid, threshold: f64) -> Result<Vec<Detection>> {
        let kept = nms(self.candidates(fp, threshold)?, self.nms_iou);
        match (&self.model.regressors, self.regression) {
            (Some(regs), true) => kept
                .into_iter()
                .map(|d| {
                    let filter = &self.model.components[d.component_id];
                    let level = fp.level(d.level_index).ok_or_else(|| {
                        Error::Data(format!("detection at missing level {}", d.level_index))
                    })?;
                    let feat = level.map.window(d.cell.0, d.cell.1, filter.h, filter.w);
                    apply_bbox_regression(&d, &feat, &regs[d.component_id])
                })
                .collect(),
            _ => Ok(kept),
        }
    }
}
