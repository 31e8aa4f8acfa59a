use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    collect_regression_pairs, extract_positive, sample_negatives, svm_objective, train_bbox_regressor,
    train_svm, BBoxRegressor, LinearSvm, TrainConfig, TrainingSample, WindowKey,
};
use crate::error::{Error, Result};
use crate::featex::{FeaturePyramid, Stage};
use crate::imaging::PyramidConfig;
use crate::model::{score_level, DpmModel, RootFilter};
use crate::postproc::{iou, Rect};

#[derive(Debug, Clone)]
pub struct TrainImage {
    /// norm5 pyramid.
    pub pyramid: FeaturePyramid,
    pub gts: Vec<Rect>,
    /// Component of each ground truth.
    pub gt_components: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Objective of this round's solution on the cache it was trained on.
    pub objective: f64,
    /// Previous cache after pruning, evaluated under the previous and the
    /// current weights. The current cache contains it, so the second value
    /// should not fall below the first.
    pub carried: Option<(f64, f64)>,
    /// Hard negatives found by the scan after this training.
    pub added: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningReport {
    pub component_id: usize,
    pub rounds: Vec<RoundStats>,
    /// True when the last scan found no new hard negative.
    pub converged: bool,
    /// Negative windows in the cache the final filter was trained on.
    pub cache: Vec<WindowKey>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DpmModel,
    pub reports: Vec<MiningReport>,
    /// Regression pairs used per component.
    pub regression_pairs: Vec<usize>,
}

/// A window can serve as a negative when it overlaps every ground truth with
/// IOU below `iou_max`.
pub fn is_negative_window(bx: &Rect, gts: &[Rect], iou_max: f64) -> bool {
    gts.iter().all(|g| iou(bx, g) < iou_max)
}

fn to_filter(svm: &LinearSvm, component_id: usize, shape: (usize, usize), channels: usize) -> Result<RootFilter> {
    RootFilter::new(
        component_id,
        shape.0,
        shape.1,
        channels,
        svm.weights.iter().map(|&v| v as f32).collect(),
        svm.bias as f32,
    )
}

/// Uncached negative windows of one image scoring above the hard threshold,
/// highest first, at most `cfg.max_hard_per_image`.
fn scan_image(
    image: usize,
    img: &TrainImage,
    filter: &RootFilter,
    cache: &HashSet<WindowKey>,
    cfg: &TrainConfig,
) -> Result<Vec<(f64, TrainingSample)>> {
    let mut hits = Vec::new();
    for level in &img.pyramid.levels {
        let sm = score_level(&level.map, filter, level.geometry.level_index)?;
        for r in 0..sm.rows {
            for c in 0..sm.cols {
                let s = sm.at(r, c);
                if !(s > cfg.hard_threshold) {
                    continue;
                }
                let key = WindowKey {
                    image,
                    level_index: level.geometry.level_index,
                    row: r,
                    col: c,
                };
                if cache.contains(&key) {
                    continue;
                }
                let bx = level.geometry.window_box(r, c, filter.h, filter.w);
                if !is_negative_window(&bx, &img.gts, cfg.neg_iou_max) {
                    continue;
                }
                hits.push((
                    s,
                    TrainingSample {
                        feature: level.map.window(r, c, filter.h, filter.w),
                        label: -1,
                        image_id: img.pyramid.image_id.clone(),
                        key,
                        component_id: filter.component_id,
                    },
                ));
            }
        }
    }
    hits.sort_by(|a, b| b.0.total_cmp(&a.0));
    hits.truncate(cfg.max_hard_per_image);
    Ok(hits)
}

/// Trains one component's root filter: a cache of positives and random
/// negatives is alternately fit and grown with every uncached negative
/// window the current filter scores above `hard_threshold`, while cached
/// negatives below `easy_prune_threshold` are dropped.
pub fn hard_negative_mine(
    images: &[TrainImage],
    component_id: usize,
    shape: (usize, usize),
    cfg: &TrainConfig,
) -> Result<(RootFilter, MiningReport)> {
    cfg.validate()?;
    let channels = images
        .first()
        .map(|i| i.pyramid.channels())
        .ok_or_else(|| Error::Config("no training images".into()))?;
    for img in images {
        img.pyramid.require_stage(Stage::Norm5)?;
        if img.gts.len() != img.gt_components.len() {
            return Err(Error::InvalidInput(format!(
                "{}: {} boxes but {} component labels",
                img.pyramid.image_id,
                img.gts.len(),
                img.gt_components.len()
            )));
        }
    }

    let mut cache: Vec<TrainingSample> = Vec::new();
    for (i, img) in images.iter().enumerate() {
        for (gt, &c) in img.gts.iter().zip(&img.gt_components) {
            if c == component_id {
                if let Some(s) = extract_positive(&img.pyramid, i, gt, shape, component_id)? {
                    cache.push(s);
                }
            }
        }
    }
    if cache.is_empty() {
        return Err(Error::Config(format!("component {component_id} has no usable positives")));
    }
    let positives = cache.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ (component_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for (i, img) in images.iter().enumerate() {
        match sample_negatives(
            &img.pyramid,
            i,
            &img.gts,
            shape,
            component_id,
            cfg.negatives_per_image,
            cfg.neg_iou_max,
            &mut rng,
        ) {
            Ok(negs) => cache.extend(negs),
            Err(Error::SamplingExhausted { attempts }) => {
                log::warn!("{}: no random negatives after {attempts} draws", img.pyramid.image_id)
            }
            Err(e) => return Err(e),
        }
    }
    let mut keys: HashSet<WindowKey> = cache[positives..].iter().map(|s| s.key).collect();

    let mut rounds = Vec::new();
    // prefix of the cache that survived the previous prune, with the
    // previous weights' objective on it
    let mut carried: Option<(usize, f64)> = None;
    let mut converged = false;
    let mut svm = train_svm(&cache, cfg)?;
    for round in 1..=cfg.mining_rounds {
        if round > 1 {
            svm = train_svm(&cache, cfg)?;
        }
        let filter = to_filter(&svm, component_id, shape, channels)?;
        let mut stats = RoundStats {
            round,
            positives,
            negatives: cache.len() - positives,
            objective: svm.objective,
            carried: carried.map(|(k, before)| {
                (before, svm_objective(&svm.weights, svm.bias, &cache[..k], cfg.svm_cost))
            }),
            added: 0,
            pruned: 0,
        };

        let found = images
            .par_iter()
            .enumerate()
            .map(|(i, img)| scan_image(i, img, &filter, &keys, cfg))
            .collect::<Result<Vec<_>>>()?;
        let added: Vec<TrainingSample> = found.into_iter().flatten().map(|(_, s)| s).collect();
        stats.added = added.len();
        log::info!(
            "component {component_id} round {round}: {} negatives, objective {:.6}, {} hard",
            stats.negatives,
            stats.objective,
            stats.added
        );
        if added.is_empty() {
            rounds.push(stats);
            converged = true;
            break;
        }

        let before = cache.len();
        let mut kept = Vec::with_capacity(before);
        for (j, s) in cache.into_iter().enumerate() {
            if j >= positives && svm.decision(&s.feature) < cfg.easy_prune_threshold {
                keys.remove(&s.key);
            } else {
                kept.push(s);
            }
        }
        stats.pruned = before - kept.len();
        cache = kept;
        carried = Some((
            cache.len(),
            svm_objective(&svm.weights, svm.bias, &cache, cfg.svm_cost),
        ));
        keys.extend(added.iter().map(|s| s.key));
        cache.extend(added);
        rounds.push(stats);
    }
    if !converged {
        log::warn!(
            "component {component_id}: mining still finding hard negatives after {} rounds",
            cfg.mining_rounds
        );
        svm = train_svm(&cache, cfg)?;
        let (k, before) = carried.expect("an unconverged run has pruned at least once");
        rounds.push(RoundStats {
            round: cfg.mining_rounds + 1,
            positives,
            negatives: cache.len() - positives,
            objective: svm.objective,
            carried: Some((before, svm_objective(&svm.weights, svm.bias, &cache[..k], cfg.svm_cost))),
            added: 0,
            pruned: 0,
        });
    }
    let filter = to_filter(&svm, component_id, shape, channels)?;
    Ok((
        filter,
        MiningReport {
            component_id,
            rounds,
            converged,
            cache: cache[positives..].iter().map(|s| s.key).collect(),
        },
    ))
}

/// Mines every component, then fits one box regressor per component when
/// `regress` is set.
pub fn train_model(
    images: &[TrainImage],
    shapes: &[(usize, usize)],
    cfg: &TrainConfig,
    pyramid: &PyramidConfig,
    extractor: &str,
    regress: bool,
) -> Result<TrainOutcome> {
    if shapes.is_empty() {
        return Err(Error::Config("no components".into()));
    }
    let mut filters = Vec::new();
    let mut reports = Vec::new();
    for (c, &shape) in shapes.iter().enumerate() {
        let (f, r) = hard_negative_mine(images, c, shape, cfg)?;
        filters.push(f);
        reports.push(r);
    }
    let channels = filters[0].channels;

    let mut regression_pairs = Vec::new();
    let regressors = if regress {
        let mut regs = Vec::new();
        for (c, &shape) in shapes.iter().enumerate() {
            let per_image: Vec<_> = images
                .par_iter()
                .map(|img| {
                    let gts: Vec<Rect> = img
                        .gts
                        .iter()
                        .zip(&img.gt_components)
                        .filter(|(_, &k)| k == c)
                        .map(|(g, _)| *g)
                        .collect();
                    collect_regression_pairs(&img.pyramid, &gts, shape, cfg.bbox_min_iou)
                })
                .collect();
            let pairs: Vec<_> = per_image.into_iter().flatten().collect();
            regression_pairs.push(pairs.len());
            if pairs.is_empty() {
                log::warn!("component {c}: no regression pairs, using the identity regressor");
                regs.push(BBoxRegressor::zeros(filters[c].feature_len()));
            } else {
                regs.push(train_bbox_regressor(&pairs, cfg.bbox_lambda)?);
            }
        }
        Some(regs)
    } else {
        None
    };

    let mut metadata = format!(
        "svm_cost={:?}\nmining_rounds={}\nnegatives_per_image={}\nneg_iou_max={:?}\nhard_threshold={:?}\neasy_prune_threshold={:?}\nconvergence_tol={:?}\nrng_seed={}\nbbox_lambda={:?}\nbbox_min_iou={:?}\nimages={}\n",
        cfg.svm_cost,
        cfg.mining_rounds,
        cfg.negatives_per_image,
        cfg.neg_iou_max,
        cfg.hard_threshold,
        cfg.easy_prune_threshold,
        cfg.convergence_tol,
        cfg.rng_seed,
        cfg.bbox_lambda,
        cfg.bbox_min_iou,
        images.len()
    );
    for r in &reports {
        metadata.push_str(&format!(
            "component.{}=rounds:{},converged:{},cache:{}\n",
            r.component_id,
            r.rounds.len(),
            r.converged,
            r.cache.len()
        ));
    }

    let model = DpmModel {
        channels,
        components: filters,
        config_digest: pyramid.digest(),
        extractor: extractor.to_string(),
        threshold: 0.0,
        regressors,
        metadata,
    };
    model.validate()?;
    Ok(TrainOutcome {
        model,
        reports,
        regression_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featex::{FeatureLevel, FeatureMap};
    use crate::imaging::LevelGeometry;
    use rand::Rng;

    /// One-level, one-channel image: noise with a bright 3x3 block at the gt.
    fn toy(id: usize, rows: usize, cols: usize, at: (usize, usize), seed: u64) -> TrainImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f32> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for r in at.0..at.0 + 3 {
            for c in at.1..at.1 + 3 {
                data[r * cols + c] = 4.0;
            }
        }
        TrainImage {
            pyramid: FeaturePyramid {
                image_id: format!("toy{id}"),
                stage: Stage::Norm5,
                levels: vec![FeatureLevel {
                    geometry: LevelGeometry::new(1, 1.0, 16, cols as u32 * 16, rows as u32 * 16),
                    map: FeatureMap::from_vec(1, rows, cols, data).unwrap(),
                }],
            },
            gts: vec![Rect::new(at.1 as f64 * 16.0, at.0 as f64 * 16.0, 48.0, 48.0)],
            gt_components: vec![0],
        }
    }

    fn corpus() -> Vec<TrainImage> {
        (0..8).map(|i| toy(i, 12, 12, (i % 6 + 1, (i * 5) % 8 + 1), i as u64)).collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            svm_cost: 1.0,
            negatives_per_image: 5,
            mining_rounds: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn mines_to_convergence_and_rescan_is_clean() {
        let imgs = corpus();
        let (filter, rep) = hard_negative_mine(&imgs, 0, (3, 3), &cfg()).unwrap();
        assert!(rep.converged);
        let cached: HashSet<_> = rep.cache.iter().copied().collect();
        for (i, img) in imgs.iter().enumerate() {
            let l = &img.pyramid.levels[0];
            let sm = score_level(&l.map, &filter, 1).unwrap();
            for r in 0..sm.rows {
                for c in 0..sm.cols {
                    let key = WindowKey { image: i, level_index: 1, row: r, col: c };
                    if is_negative_window(&l.geometry.window_box(r, c, 3, 3), &img.gts, 0.3)
                        && !cached.contains(&key)
                    {
                        assert!(sm.at(r, c) <= cfg().hard_threshold + 1e-3);
                    }
                }
            }
        }
    }

    #[test]
    fn carried_objective_does_not_drop() {
        let (_, rep) = hard_negative_mine(&corpus(), 0, (3, 3), &cfg()).unwrap();
        for r in &rep.rounds {
            if let Some((before, after)) = r.carried {
                assert!(after >= before * (1.0 - 1e-2) - 1e-9, "round {}: {after} < {before}", r.round);
            }
        }
    }

    #[test]
    fn easy_dataset_stops_after_first_scan() {
        // after one training every uncached negative is far below threshold
        let imgs = corpus();
        let c = TrainConfig { hard_threshold: 100.0, ..cfg() };
        let (_, rep) = hard_negative_mine(&imgs, 0, (3, 3), &c).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.rounds.len(), 1);
        assert_eq!(rep.rounds[0].added, 0);
    }

    #[test]
    fn no_positives_is_config_error() {
        let imgs = corpus();
        assert!(matches!(
            hard_negative_mine(&imgs, 1, (3, 3), &cfg()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn train_model_is_deterministic() {
        let imgs = corpus();
        let p = PyramidConfig::default();
        let a = train_model(&imgs, &[(3, 3)], &cfg(), &p, "toy", true).unwrap();
        let b = train_model(&imgs, &[(3, 3)], &cfg(), &p, "toy", true).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.config_digest, p.digest());
        assert!(a.model.regressors.is_some());
    }
}
