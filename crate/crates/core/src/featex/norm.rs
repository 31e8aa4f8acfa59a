use super::{FeatureLevel, FeatureMap, FeaturePyramid, Stage};
use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-6;

/// Per-channel statistics of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub level_index: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`SIGMA_FLOOR`].
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub levels: Vec<LevelStats>,
}

/// max5 to norm5: each channel of each level is shifted by its mean and
/// divided by its standard deviation over that level's cells. Statistics are
/// computed per image. Empty levels pass through with mean 0 and std 1.
pub fn zscore_normalize(fp: &FeaturePyramid) -> Result<(FeaturePyramid, NormStats)> {
    fp.require_stage(Stage::Max5)?;
    let mut levels = Vec::with_capacity(fp.levels.len());
    let mut stats = Vec::with_capacity(fp.levels.len());
    for level in &fp.levels {
        let idx = level.geometry.level_index;
        let (map, st) = normalize_map(&level.map, idx)?;
        levels.push(FeatureLevel {
            geometry: level.geometry,
            map,
        });
        stats.push(st);
    }
    Ok((
        FeaturePyramid {
            image_id: fp.image_id.clone(),
            stage: Stage::Norm5,
            levels,
        },
        NormStats { levels: stats },
    ))
}

fn normalize_map(fm: &FeatureMap, level_index: usize) -> Result<(FeatureMap, LevelStats)> {
    let n = fm.rows * fm.cols;
    let mut out = fm.clone();
    let mut mean = vec![0.0; fm.channels];
    let mut std = vec![1.0; fm.channels];
    if n == 0 {
        return Ok((
            out,
            LevelStats {
                level_index,
                mean,
                std,
            },
        ));
    }
    for c in 0..fm.channels {
        let plane = fm.plane(c);
        if plane.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                level: level_index,
                channel: c,
            });
        }
        // f32 inputs summed in f64 are exact for constant planes, so a
        // constant level maps to exactly zero.
        let mu = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = plane
            .iter()
            .map(|&v| {
                let d = v as f64 - mu;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let sigma = var.sqrt().max(SIGMA_FLOOR);
        for (o, &v) in out.plane_mut(c).iter_mut().zip(plane) {
            *o = ((v as f64 - mu) / sigma) as f32;
        }
        mean[c] = mu;
        std[c] = sigma;
    }
    Ok((
        out,
        LevelStats {
            level_index,
            mean,
            std,
        },
    ))
}
