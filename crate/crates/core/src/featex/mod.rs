//! Feature pyramids: extraction, max pooling, per-level z-score normalization
//! and the binary interchange format.

mod builtin;
mod dump;
mod norm;
mod pool;

pub use builtin::{BuiltinConfig, BuiltinExtractor};
pub use dump::{read_feature_dump, write_feature_dump, DUMP_MAGIC, DUMP_VERSION};
pub use norm::{zscore_normalize, LevelStats, NormStats, SIGMA_FLOOR};
pub use pool::{max_pool_3x3, max_pool_pyramid};

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{ImagePyramid, LevelGeometry};

/// Dense `channels x rows x cols` map stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![0.0; channels * rows * cols],
        }
    }

    pub fn from_vec(channels: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * rows * cols {
            return Err(Error::InvalidInput(format!(
                "feature data length {} != {channels}x{rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            rows,
            cols,
            data,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn at(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.rows + r) * self.cols + col]
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.rows * self.cols;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies the `h x w` window at `(row, col)` into channel-major order,
    /// the layout root-filter weights use.
    pub fn window(&self, row: usize, col: usize, h: usize, w: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for r in row..row + h {
                out.extend_from_slice(&plane[r * self.cols + col..r * self.cols + col + w]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Conv5,
    Max5,
    Norm5,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::Conv5 => 0,
            Stage::Max5 => 1,
            Stage::Norm5 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Stage::Conv5),
            1 => Some(Stage::Max5),
            2 => Some(Stage::Norm5),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Conv5 => "conv5",
            Stage::Max5 => "max5",
            Stage::Norm5 => "norm5",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub geometry: LevelGeometry,
    pub map: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub image_id: String,
    pub stage: Stage,
    pub levels: Vec<FeatureLevel>,
}

impl FeaturePyramid {
    pub fn channels(&self) -> usize {
        self.levels.first().map_or(0, |l| l.map.channels)
    }

    pub fn geometries(&self) -> Vec<LevelGeometry> {
        self.levels.iter().map(|l| l.geometry).collect()
    }

    pub fn level(&self, index: usize) -> Option<&FeatureLevel> {
        self.levels.iter().find(|l| l.geometry.level_index == index)
    }

    pub fn require_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::PipelineOrder(format!(
                "expected {} features, got {}",
                stage.name(),
                self.stage.name()
            )));
        }
        Ok(())
    }
}

/// Produces one feature map per pyramid level.
///
/// Implementations must be deterministic: the same level image always yields
/// bit-identical output.
pub trait FeatureExtractor: Send + Sync {
    /// Name plus parameter digest; stored in trained models.
    fn descriptor(&self) -> String;
    fn channels(&self) -> usize;
    fn extract_level(&self, image: &RgbImage, stride: u32) -> std::result::Result<FeatureMap, String>;
}

pub fn extract_features(
    image_id: &str,
    pyr: &ImagePyramid,
    ex: &dyn FeatureExtractor,
) -> Result<FeaturePyramid> {
    if ex.channels() == 0 {
        return Err(Error::Config("extractor produces zero channels".into()));
    }
    let levels = (0..pyr.levels.len())
        .into_par_iter()
        .map(|pos| {
            let geometry = pyr.geometry(pos);
            let map = ex
                .extract_level(&pyr.levels[pos].image, pyr.stride)
                .map_err(|message| Error::Extraction {
                    level: geometry.level_index,
                    message,
                })?;
            if (map.rows, map.cols) != geometry.feature_dims || map.channels != ex.channels() {
                return Err(Error::Extraction {
                    level: geometry.level_index,
                    message: format!(
                        "extractor returned {}x{}x{}, expected {}x{}x{}",
                        map.channels,
                        map.rows,
                        map.cols,
                        ex.channels(),
                        geometry.feature_dims.0,
                        geometry.feature_dims.1
                    ),
                });
            }
            Ok(FeatureLevel { geometry, map })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeaturePyramid {
        image_id: image_id.to_string(),
        stage: Stage::Conv5,
        levels,
    })
}

/// Image pyramid to norm5 in one call.
pub fn norm5_pyramid(
    image_id: &str,
    pyr: &ImagePyramid,
    ex: &dyn FeatureExtractor,
) -> Result<FeaturePyramid> {
    let conv5 = extract_features(image_id, pyr, ex)?;
    let max5 = max_pool_pyramid(&conv5)?;
    Ok(zscore_normalize(&max5)?.0)
}

/// Advances a pyramid of any stage to norm5.
pub fn to_norm5(fp: FeaturePyramid) -> Result<FeaturePyramid> {
    match fp.stage {
        Stage::Norm5 => Ok(fp),
        Stage::Max5 => Ok(zscore_normalize(&fp)?.0),
        Stage::Conv5 => Ok(zscore_normalize(&max_pool_pyramid(&fp)?)?.0),
    }
}
