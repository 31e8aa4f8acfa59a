use std::collections::HashSet;

use rand::Rng;

use super::{TrainingSample, WindowKey};
use crate::error::{Error, Result};
use crate::featex::FeaturePyramid;
use crate::imaging::LevelGeometry;
use crate::postproc::{iou, Rect};

/// Budget of draws per requested negative.
const ATTEMPTS_PER_NEGATIVE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelChoice {
    /// Position in the geometry slice.
    pub position: usize,
    pub level_index: usize,
    /// |b_y - h| + |b_x - w| in cells.
    pub cost: f64,
}

/// Picks the level where the box's cell dims are closest (L1) to the
/// filter's. Ties go to the smaller level index.
pub fn select_level(gt: &Rect, geometry: &[LevelGeometry], filter: (usize, usize)) -> Result<LevelChoice> {
    let mut order: Vec<usize> = (0..geometry.len()).collect();
    order.sort_by_key(|&i| geometry[i].level_index);
    let costs = order
        .iter()
        .map(|&pos| {
            let b = geometry[pos].image_box_to_level_box(gt)?;
            Ok(l1_cost((b.h, b.w), filter))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (i, cost) =
        argmin_first(&costs).ok_or_else(|| Error::InvalidInput("no pyramid levels".into()))?;
    Ok(LevelChoice {
        position: order[i],
        level_index: geometry[order[i]].level_index,
        cost,
    })
}

fn l1_cost(dims: (f64, f64), filter: (usize, usize)) -> f64 {
    (dims.0 - filter.0 as f64).abs() + (dims.1 - filter.1 as f64).abs()
}

fn argmin_first(costs: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &c) in costs.iter().enumerate() {
        if best.map_or(true, |(_, b)| c < b) {
            best = Some((i, c));
        }
    }
    best
}

/// Extracts the `h x w` window centered on the ground truth at its selected
/// level. Returns `Ok(None)` when that level is smaller than the filter.
pub fn extract_positive(
    fp: &FeaturePyramid,
    image: usize,
    gt: &Rect,
    filter: (usize, usize),
    component_id: usize,
) -> Result<Option<TrainingSample>> {
    let geoms = fp.geometries();
    let choice = select_level(gt, &geoms, filter)?;
    let level = &fp.levels[choice.position];
    let (rows, cols) = (level.map.rows, level.map.cols);
    let (h, w) = filter;
    if rows < h || cols < w {
        log::debug!(
            "{}: level {} is {rows}x{cols}, filter {h}x{w}; positive skipped",
            fp.image_id,
            choice.level_index
        );
        return Ok(None);
    }
    let b = level.geometry.image_box_to_level_box(gt)?;
    let (cy, cx) = (b.y + b.h / 2.0, b.x + b.w / 2.0);
    let place = |center: f64, size: usize, extent: usize| {
        let start = (center - size as f64 / 2.0).round();
        start.clamp(0.0, (extent - size) as f64) as usize
    };
    let row = place(cy, h, rows);
    let col = place(cx, w, cols);
    Ok(Some(TrainingSample {
        feature: level.map.window(row, col, h, w),
        label: 1,
        image_id: fp.image_id.clone(),
        key: WindowKey {
            image,
            level_index: choice.level_index,
            row,
            col,
        },
        component_id,
    }))
}

/// Random filter-sized windows whose image-space box overlaps every ground
/// truth with IOU below `iou_max`. A level is drawn uniformly among those the
/// filter fits, then a placement uniformly within it.
#[allow(clippy::too_many_arguments)]
pub fn sample_negatives<R: Rng>(
    fp: &FeaturePyramid,
    image: usize,
    gts: &[Rect],
    filter: (usize, usize),
    component_id: usize,
    n: usize,
    iou_max: f64,
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let (h, w) = filter;
    let fitting: Vec<usize> = fp
        .levels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.map.rows >= h && l.map.cols >= w)
        .map(|(i, _)| i)
        .collect();
    let budget = ATTEMPTS_PER_NEGATIVE * n;
    if fitting.is_empty() {
        return Err(Error::SamplingExhausted { attempts: 0 });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for _ in 0..budget {
        if out.len() == n {
            break;
        }
        let level = &fp.levels[fitting[rng.gen_range(0..fitting.len())]];
        let row = rng.gen_range(0..=level.map.rows - h);
        let col = rng.gen_range(0..=level.map.cols - w);
        let key = WindowKey {
            image,
            level_index: level.geometry.level_index,
            row,
            col,
        };
        if !seen.insert(key) {
            continue;
        }
        let bx = level.geometry.window_box(row, col, h, w);
        if gts.iter().all(|g| iou(&bx, g) < iou_max) {
            out.push(TrainingSample {
                feature: level.map.window(row, col, h, w),
                label: -1,
                image_id: fp.image_id.clone(),
                key,
                component_id,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::SamplingExhausted { attempts: budget });
    }
    Ok(out)
}
