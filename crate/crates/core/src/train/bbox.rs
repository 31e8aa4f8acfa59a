//! Ridge regression from window features to box corrections.
//!
//! Targets use center offsets scaled by the detected size and log size
//! ratios: `tx = (gx - dx) / dw`, `ty = (gy - dy) / dh`, `tw = ln(gw / dw)`,
//! `th = ln(gh / dh)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Detection;
use crate::postproc::Rect;

#[derive(Debug, Clone, PartialEq)]
pub struct BBoxRegressor {
    /// One weight vector per target, in (tx, ty, tw, th) order.
    pub weights: [Vec<f64>; 4],
    pub intercepts: [f64; 4],
    pub lambda: f64,
}

impl BBoxRegressor {
    pub fn zeros(len: usize) -> Self {
        Self {
            weights: std::array::from_fn(|_| vec![0.0; len]),
            intercepts: [0.0; 4],
            lambda: 0.0,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.weights[0].len()
    }

    pub fn predict(&self, feature: &[f32]) -> Result<[f64; 4]> {
        if feature.len() != self.feature_len() {
            return Err(Error::Incompatible(format!(
                "regressor expects {} features, got {}",
                self.feature_len(),
                feature.len()
            )));
        }
        Ok(std::array::from_fn(|t| {
            self.intercepts[t]
                + self.weights[t]
                    .iter()
                    .zip(feature)
                    .map(|(w, &x)| w * x as f64)
                    .sum::<f64>()
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPair {
    pub feature: Vec<f32>,
    pub detected: Rect,
    pub truth: Rect,
}

pub fn bbox_targets(detected: &Rect, truth: &Rect) -> Result<[f64; 4]> {
    let (dx, dy) = detected.center();
    let (gx, gy) = truth.center();
    let t = [
        (gx - dx) / detected.w,
        (gy - dy) / detected.h,
        (truth.w / detected.w).ln(),
        (truth.h / detected.h).ln(),
    ];
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite regression targets for {detected:?} -> {truth:?}"
        )));
    }
    Ok(t)
}

/// Inverse of [`bbox_targets`].
pub fn apply_targets(b: &Rect, t: &[f64; 4]) -> Rect {
    let (cx, cy) = b.center();
    let ncx = cx + t[0] * b.w;
    let ncy = cy + t[1] * b.h;
    let nw = b.w * t[2].exp();
    let nh = b.h * t[3].exp();
    Rect::new(ncx - nw / 2.0, ncy - nh / 2.0, nw, nh)
}

pub fn apply_bbox_regression(det: &Detection, feature: &[f32], reg: &BBoxRegressor) -> Result<Detection> {
    let t = reg.predict(feature)?;
    Ok(Detection {
        bbox: apply_targets(&det.bbox, &t),
        ..det.clone()
    })
}

/// `sum |X w_t + b_t - y_t|^2 + lambda * sum |w_t|^2` over the four targets;
/// intercepts are not penalized.
pub fn ridge_objective(reg: &BBoxRegressor, pairs: &[RegressionPair], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let pred = reg.predict(&p.feature)?;
        let t = bbox_targets(&p.detected, &p.truth)?;
        total += pred.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let penalty: f64 = reg
        .weights
        .iter()
        .map(|w| w.iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(total + lambda * penalty)
}

/// Closed-form ridge fit on centered data. Uses the `n x n` kernel system
/// when there are fewer pairs than features, the `d x d` normal equations
/// otherwise.
pub fn train_bbox_regressor(pairs: &[RegressionPair], lambda: f64) -> Result<BBoxRegressor> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no regression pairs".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("ridge lambda {lambda}")));
    }
    let n = pairs.len();
    let d = pairs[0].feature.len();
    if pairs.iter().any(|p| p.feature.len() != d) {
        return Err(Error::InvalidInput("regression features differ in length".into()));
    }
    for p in pairs {
        if !(p.detected.w > 0.0 && p.detected.h > 0.0 && p.truth.w > 0.0 && p.truth.h > 0.0) {
            return Err(Error::Data("degenerate box in regression pair".into()));
        }
    }
    let targets = pairs
        .iter()
        .map(|p| bbox_targets(&p.detected, &p.truth))
        .collect::<Result<Vec<_>>>()?;

    let mut mean_x = vec![0.0; d];
    for p in pairs {
        for (m, &v) in mean_x.iter_mut().zip(&p.feature) {
            *m += v as f64;
        }
    }
    mean_x.iter_mut().for_each(|m| *m /= n as f64);
    let mean_t: [f64; 4] =
        std::array::from_fn(|k| targets.iter().map(|t| t[k]).sum::<f64>() / n as f64);

    let xc = DMatrix::from_fn(n, d, |i, j| pairs[i].feature[j] as f64 - mean_x[j]);
    let tc = DMatrix::from_fn(n, 4, |i, k| targets[i][k] - mean_t[k]);

    let w = if n < d {
        let mut gram = &xc * xc.transpose();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let a = solve_spd(gram, &tc)?;
        xc.transpose() * a
    } else {
        let mut gram = xc.transpose() * &xc;
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let rhs = xc.transpose() * &tc;
        solve_spd(gram, &rhs)?
    };

    let weights: [Vec<f64>; 4] = std::array::from_fn(|k| w.column(k).iter().copied().collect());
    let intercepts = std::array::from_fn(|k| {
        mean_t[k] - weights[k].iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>()
    });
    Ok(BBoxRegressor {
        weights,
        intercepts,
        lambda,
    })
}

/// Cholesky when positive definite; SVD least squares for the singular
/// `lambda = 0` case.
fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    let svd = a.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(1.0);
    svd.solve(b, eps)
        .map_err(|e| Error::Data(format!("ridge system unsolvable: {e}")))
}

/// Regression pairs for one image: every window whose image box overlaps a
/// ground truth with IOU at least `min_iou`, paired with that ground truth.
pub fn collect_regression_pairs(
    fp: &crate::featex::FeaturePyramid,
    gts: &[Rect],
    filter: (usize, usize),
    min_iou: f64,
) -> Vec<RegressionPair> {
    let (h, w) = filter;
    let mut out = Vec::new();
    for level in &fp.levels {
        let m = &level.map;
        if m.rows < h || m.cols < w {
            continue;
        }
        for r in 0..=m.rows - h {
            for c in 0..=m.cols - w {
                let bx = level.geometry.window_box(r, c, h, w);
                let best = gts
                    .iter()
                    .map(|g| (crate::postproc::iou(&bx, g), g))
                    .max_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((o, g)) = best {
                    if o >= min_iou {
                        out.push(RegressionPair {
                            feature: m.window(r, c, h, w),
                            detected: bx,
                            truth: *g,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(b: Rect) -> Detection {
        Detection {
            image_id: "x".into(),
            bbox: b,
            score: 1.5,
            component_id: 2,
            level_index: 3,
            cell: (1, 1),
        }
    }

    #[test]
    fn identical_boxes_have_zero_targets() {
        let b = Rect::new(3.0, 4.0, 20.0, 30.0);
        assert_eq!(bbox_targets(&b, &b).unwrap(), [0.0; 4]);
    }

    #[test]
    fn degenerate_targets_rejected() {
        let d = Rect::new(0.0, 0.0, 10.0, 10.0);
        assert!(bbox_targets(&d, &Rect::new(0.0, 0.0, 0.0, 5.0)).is_err());
    }

    #[test]
    fn zero_regressor_is_identity() {
        let d = det(Rect::new(5.0, 6.0, 40.0, 50.0));
        let out = apply_bbox_regression(&d, &[0.3; 6], &BBoxRegressor::zeros(6)).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn constant_log2_doubles_width() {
        let mut reg = BBoxRegressor::zeros(3);
        reg.intercepts[2] = 2f64.ln();
        let d = det(Rect::new(10.0, 10.0, 20.0, 20.0));
        let out = apply_bbox_regression(&d, &[1.0, 2.0, 3.0], &reg).unwrap();
        assert!((out.bbox.w - 40.0).abs() < 1e-12);
        assert_eq!(out.bbox.h, 20.0);
        assert_eq!(out.bbox.center(), d.bbox.center());
        assert_eq!((out.score, out.component_id), (1.5, 2));
    }

    #[test]
    fn length_mismatch() {
        let d = det(Rect::new(0.0, 0.0, 1.0, 1.0));
        assert!(matches!(
            apply_bbox_regression(&d, &[1.0], &BBoxRegressor::zeros(2)),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn targets_round_trip_through_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let b = Rect::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(1.0..100.0),
                rng.gen_range(1.0..100.0),
            );
            let t = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let back = bbox_targets(&b, &apply_targets(&b, &t)).unwrap();
            for k in 0..4 {
                assert!((back[k] - t[k]).abs() < 1e-6);
            }
        }
    }

    /// Pairs whose targets are an exact affine function of the features.
    fn planted(n: usize, d: usize, seed: u64) -> (Vec<RegressionPair>, Vec<[f64; 4]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<Vec<f64>> = (0..4).map(|_| (0..d).map(|_| rng.gen_range(-0.05..0.05)).collect()).collect();
        let mut pairs = Vec::new();
        let mut ts = Vec::new();
        for _ in 0..n {
            let feature: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let t: [f64; 4] = std::array::from_fn(|k| {
                0.01 * k as f64 + w[k].iter().zip(&feature).map(|(a, &b)| a * b as f64).sum::<f64>()
            });
            let detected = Rect::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), 40.0, 60.0);
            pairs.push(RegressionPair {
                feature,
                detected,
                truth: apply_targets(&detected, &t),
            });
            ts.push(t);
        }
        (pairs, ts)
    }

    #[test]
    fn exact_linear_recovery() {
        let (pairs, ts) = planted(60, 8, 1);
        let reg = train_bbox_regressor(&pairs, 0.0).unwrap();
        for (p, t) in pairs.iter().zip(&ts) {
            let pred = reg.predict(&p.feature).unwrap();
            for k in 0..4 {
                assert!((pred[k] - t[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn kernel_path_with_few_pairs() {
        // n < d: the dual system; with tiny lambda it interpolates
        let (pairs, ts) = planted(10, 30, 2);
        let reg = train_bbox_regressor(&pairs, 1e-9).unwrap();
        for (p, t) in pairs.iter().zip(&ts) {
            let pred = reg.predict(&p.feature).unwrap();
            for k in 0..4 {
                assert!((pred[k] - t[k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn larger_lambda_never_lowers_objective() {
        let (pairs, _) = planted(40, 6, 5);
        let mut prev_opt = 0.0;
        for (i, lambda) in [0.0, 0.1, 1.0, 10.0, 100.0].into_iter().enumerate() {
            let reg = train_bbox_regressor(&pairs, lambda).unwrap();
            let here = ridge_objective(&reg, &pairs, lambda).unwrap();
            let stronger = ridge_objective(&reg, &pairs, lambda * 10.0 + 1.0).unwrap();
            assert!(stronger >= here);
            if i > 0 {
                assert!(here >= prev_opt - 1e-9);
            }
            prev_opt = here;
        }
    }
}
