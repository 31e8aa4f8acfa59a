use super::{FeatureLevel, FeatureMap, FeaturePyramid, Stage};
use crate::error::Result;

/// 3x3 max filter at stride one with windows clipped at the borders.
///
/// Computed separably: a horizontal 3-max followed by a vertical one, which
/// is exact for max over a rectangle.
pub fn max_pool_3x3(fm: &FeatureMap) -> FeatureMap {
    let (rows, cols) = (fm.rows, fm.cols);
    let mut out = FeatureMap::zeros(fm.channels, rows, cols);
    if fm.is_empty() {
        return out;
    }
    let mut tmp = vec![0f32; rows * cols];
    for c in 0..fm.channels {
        let src = fm.plane(c);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let dst = &mut tmp[r * cols..(r + 1) * cols];
            for k in 0..cols {
                let lo = k.saturating_sub(1);
                let hi = (k + 1).min(cols - 1);
                dst[k] = row[lo..=hi].iter().copied().fold(f32::NEG_INFINITY, f32::max);
            }
        }
        let dst = out.plane_mut(c);
        for r in 0..rows {
            let lo = r.saturating_sub(1);
            let hi = (r + 1).min(rows - 1);
            for k in 0..cols {
                let mut m = f32::NEG_INFINITY;
                for rr in lo..=hi {
                    m = m.max(tmp[rr * cols + k]);
                }
                dst[r * cols + k] = m;
            }
        }
    }
    out
}

/// conv5 to max5.
pub fn max_pool_pyramid(fp: &FeaturePyramid) -> Result<FeaturePyramid> {
    fp.require_stage(Stage::Conv5)?;
    Ok(FeaturePyramid {
        image_id: fp.image_id.clone(),
        stage: Stage::Max5,
        levels: fp
            .levels
            .iter()
            .map(|l| FeatureLevel {
                geometry: l.geometry,
                map: max_pool_3x3(&l.map),
            })
            .collect(),
    })
}
