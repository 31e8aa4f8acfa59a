//! L1-loss linear SVM via dual coordinate descent.
//!
//! The solver runs on features augmented with a constant bias column of
//! magnitude `B` (the largest sample norm). That regularizes the bias by
//! `b^2 / (2 B^2)`; a final exact line search over `b` with `w` fixed removes
//! most of that distortion, so the returned solution targets the objective
//! with an unregularized bias:
//!
//! `1/2 |w|^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainingSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective value at the returned solution.
    pub objective: f64,
    pub epochs: usize,
    /// Relative duality gap of the augmented problem at termination.
    pub gap: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f32]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[inline]
fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(a, &b)| a * b as f64).sum()
}

/// `1/2 |w|^2 + cost * sum hinge`, with the bias unregularized.
pub fn svm_objective(weights: &[f64], bias: f64, samples: &[TrainingSample], cost: f64) -> f64 {
    let reg = 0.5 * weights.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = samples
        .iter()
        .map(|s| (1.0 - s.label as f64 * (dot(weights, &s.feature) + bias)).max(0.0))
        .sum();
    reg + cost * loss
}

pub fn train_svm(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<LinearSvm> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Degenerate("no training samples".into()));
    }
    let d = samples[0].feature.len();
    if samples.iter().any(|s| s.feature.len() != d) {
        return Err(Error::InvalidInput("training samples differ in length".into()));
    }
    let has_pos = samples.iter().any(|s| s.label > 0);
    let has_neg = samples.iter().any(|s| s.label < 0);
    if !(has_pos && has_neg) {
        return Err(Error::Degenerate("training set has a single class".into()));
    }
    if samples.iter().any(|s| s.feature.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("non-finite training feature".into()));
    }

    let cost = cfg.svm_cost;
    let ys: Vec<f64> = samples.iter().map(|s| s.label.signum() as f64).collect();
    let sq: Vec<f64> = samples
        .iter()
        .map(|s| s.feature.iter().map(|&v| (v as f64) * (v as f64)).sum())
        .collect();
    let big_b = sq.iter().copied().fold(1.0f64, f64::max).sqrt();
    let qii: Vec<f64> = sq.iter().map(|s| s + big_b * big_b).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    // bias weight in the augmented space; the bias itself is v * B
    let mut v = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut gap = f64::INFINITY;
    let mut epochs = 0;

    while epochs < cfg.max_svm_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &samples[i].feature;
            let g = ys[i] * (dot(&w, x) + v * big_b) - 1.0;
            let a = alpha[i];
            let pg = if a <= 0.0 {
                g.min(0.0)
            } else if a >= cost {
                g.max(0.0)
            } else {
                g
            };
            if pg == 0.0 {
                continue;
            }
            let na = (a - g / qii[i]).clamp(0.0, cost);
            let delta = (na - a) * ys[i];
            if delta != 0.0 {
                for (wj, &xj) in w.iter_mut().zip(x) {
                    *wj += delta * xj as f64;
                }
                v += delta * big_b;
                alpha[i] = na;
            }
        }

        let norm2 = w.iter().map(|x| x * x).sum::<f64>() + v * v;
        let hinge: f64 = samples
            .iter()
            .zip(&ys)
            .map(|(s, &y)| (1.0 - y * (dot(&w, &s.feature) + v * big_b)).max(0.0))
            .sum();
        let primal = 0.5 * norm2 + cost * hinge;
        let dual = alpha.iter().sum::<f64>() - 0.5 * norm2;
        gap = (primal - dual) / primal.abs().max(f64::MIN_POSITIVE);
        if gap < cfg.convergence_tol {
            break;
        }
    }
    if gap >= cfg.convergence_tol {
        log::warn!("svm stopped after {epochs} epochs with relative gap {gap:.3e}");
    }

    let scores: Vec<f64> = samples.iter().map(|s| dot(&w, &s.feature)).collect();
    let bias = best_bias(&scores, &ys, v * big_b);
    let objective = svm_objective(&w, bias, samples, cost);
    Ok(LinearSvm {
        weights: w,
        bias,
        objective,
        epochs,
        gap,
    })
}

/// Minimizes `sum_i max(0, 1 - y_i (s_i + b))` over `b`. The minimizers form
/// an interval; the point of it closest to `current` is returned.
fn best_bias(scores: &[f64], ys: &[f64], current: f64) -> f64 {
    // positives contribute max(0, a - b) with a = 1 - s,
    // negatives max(0, b - c) with c = -1 - s
    let mut a: Vec<f64> = Vec::new();
    let mut c: Vec<f64> = Vec::new();
    for (&s, &y) in scores.iter().zip(ys) {
        if y > 0.0 {
            a.push(1.0 - s);
        } else {
            c.push(-1.0 - s);
        }
    }
    a.sort_by(f64::total_cmp);
    c.sort_by(f64::total_cmp);
    let prefix = |v: &[f64]| {
        let mut p = Vec::with_capacity(v.len() + 1);
        p.push(0.0);
        for x in v {
            p.push(p.last().unwrap() + x);
        }
        p
    };
    let (pa, pc) = (prefix(&a), prefix(&c));
    let loss = |b: f64| {
        // a_i > b
        let ia = a.partition_point(|&x| x <= b);
        let above = (pa[a.len()] - pa[ia]) - b * (a.len() - ia) as f64;
        // c_j < b
        let ic = c.partition_point(|&x| x < b);
        let below = b * ic as f64 - pc[ic];
        above + below
    };
    let mut cands: Vec<f64> = a.iter().chain(&c).copied().collect();
    cands.sort_by(f64::total_cmp);
    let losses: Vec<f64> = cands.iter().map(|&b| loss(b)).collect();
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs().max(1.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&b, &l) in cands.iter().zip(&losses) {
        if l <= min + tol {
            lo = lo.min(b);
            hi = hi.max(b);
        }
    }
    if loss(current) <= min + tol {
        return current;
    }
    current.clamp(lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::WindowKey;
    use rand::Rng;

    fn sample(x: Vec<f32>, label: i8) -> TrainingSample {
        TrainingSample {
            feature: x,
            label,
            image_id: String::new(),
            key: WindowKey {
                image: 0,
                level_index: 0,
                row: 0,
                col: 0,
            },
            component_id: 0,
        }
    }

    fn cfg(cost: f64) -> TrainConfig {
        TrainConfig {
            svm_cost: cost,
            convergence_tol: 1e-6,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn two_point_separable() {
        let s = vec![sample(vec![1.0, 0.0], 1), sample(vec![-1.0, 0.0], -1)];
        let m = train_svm(&s, &cfg(10.0)).unwrap();
        assert!(m.decision(&s[0].feature) > 0.0);
        assert!(m.decision(&s[1].feature) < 0.0);
    }

    #[test]
    fn conflicting_duplicates_are_finite() {
        let s = vec![sample(vec![0.5, 0.5], 1), sample(vec![0.5, 0.5], -1)];
        let m = train_svm(&s, &cfg(1.0)).unwrap();
        assert!(m.objective.is_finite());
        // any w gives total hinge >= 2 on this pair
        assert!(m.objective >= 2.0 - 1e-9);
    }

    #[test]
    fn single_class_rejected() {
        let s = vec![sample(vec![1.0], 1), sample(vec![2.0], 1)];
        assert!(matches!(train_svm(&s, &cfg(1.0)), Err(Error::Degenerate(_))));
        assert!(matches!(train_svm(&[], &cfg(1.0)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<_> = (0..40)
            .map(|i| {
                let y = if i % 2 == 0 { 1 } else { -1 };
                sample((0..5).map(|_| rng.gen_range(-1.0..1.0) + y as f32 * 0.3).collect(), y)
            })
            .collect();
        let a = train_svm(&s, &cfg(1.0)).unwrap();
        let b = train_svm(&s, &cfg(1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bias_line_search_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.gen_range(2..30);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let ys: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let loss = |b: f64| -> f64 {
                scores
                    .iter()
                    .zip(&ys)
                    .map(|(s, y)| (1.0 - y * (s + b)).max(0.0))
                    .sum()
            };
            let b = best_bias(&scores, &ys, rng.gen_range(-2.0..2.0));
            let grid_min = (-4000..=4000)
                .map(|k| loss(k as f64 * 1e-3))
                .fold(f64::INFINITY, f64::min);
            assert!(loss(b) <= grid_min + 1e-9, "{} > {}", loss(b), grid_min);
        }
    }
}
