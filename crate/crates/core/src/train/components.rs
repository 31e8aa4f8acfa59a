use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::postproc::Rect;

const RESTARTS: usize = 20;
const MAX_LLOYD_ITERS: usize = 200;
const MIN_FILTER_CELLS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentAssignment {
    /// Component of each input box.
    pub labels: Vec<usize>,
    /// Filter (h, w) in cells per component, ordered by increasing aspect
    /// ratio (width / height).
    pub shapes: Vec<(usize, usize)>,
    /// Cluster centers in log(width / height).
    pub centers: Vec<f64>,
    /// Within-cluster sum of squares of the chosen clustering.
    pub sse: f64,
}

/// Clusters boxes by log aspect ratio with seeded 1-D k-means and sizes one
/// root filter per cluster from its median box dims.
pub fn assign_components(
    boxes: &[Rect],
    count: usize,
    filter_scaledown: f64,
    seed: u64,
) -> Result<ComponentAssignment> {
    if count == 0 {
        return Err(Error::Config("component count must be >= 1".into()));
    }
    if boxes.len() < count {
        return Err(Error::Degenerate(format!(
            "{} boxes for {count} components",
            boxes.len()
        )));
    }
    if boxes.iter().any(|b| !(b.w > 0.0 && b.h > 0.0)) {
        return Err(Error::InvalidInput("degenerate annotation box".into()));
    }
    let ratios: Vec<f64> = boxes.iter().map(|b| (b.w / b.h).ln()).collect();
    let mut distinct = ratios.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < count {
        return Err(Error::Degenerate(format!(
            "{count} components but only {} distinct aspect ratios",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..RESTARTS {
        let init: Vec<f64> = sample(&mut rng, distinct.len(), count)
            .into_iter()
            .map(|i| distinct[i])
            .collect();
        if let Some((sse, centers)) = lloyd(&ratios, init) {
            if best.as_ref().map_or(true, |(b, _)| sse < *b) {
                best = Some((sse, centers));
            }
        }
    }
    let (sse, mut centers) =
        best.ok_or_else(|| Error::Degenerate("every k-means restart lost a cluster".into()))?;
    centers.sort_by(f64::total_cmp);
    let labels: Vec<usize> = ratios.iter().map(|&r| nearest(&centers, r)).collect();

    let shapes = (0..count)
        .map(|c| {
            let mut hs: Vec<f64> = Vec::new();
            let mut ws: Vec<f64> = Vec::new();
            for (b, &l) in boxes.iter().zip(&labels) {
                if l == c {
                    hs.push(b.h);
                    ws.push(b.w);
                }
            }
            let cells = |v: f64| ((v / filter_scaledown).round() as usize).max(MIN_FILTER_CELLS);
            (cells(median(&mut hs)), cells(median(&mut ws)))
        })
        .collect();

    Ok(ComponentAssignment {
        labels,
        shapes,
        centers,
        sse,
    })
}

fn nearest(centers: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate() {
        if (v - c).abs() < (v - centers[best]).abs() {
            best = i;
        }
    }
    best
}

/// Lloyd iterations from `centers`; `None` if a cluster empties.
fn lloyd(values: &[f64], mut centers: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    let k = centers.len();
    let mut labels = vec![usize::MAX; values.len()];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (l, &v) in labels.iter_mut().zip(values) {
            let n = nearest(&centers, v);
            if *l != n {
                *l = n;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&l, &v) in labels.iter().zip(values) {
            sums[l] += v;
            counts[l] += 1;
        }
        if counts.contains(&0) {
            return None;
        }
        for c in 0..k {
            centers[c] = sums[c] / counts[c] as f64;
        }
        if !changed {
            break;
        }
    }
    let sse = labels
        .iter()
        .zip(values)
        .map(|(&l, &v)| (v - centers[l]).powi(2))
        .sum();
    Some((sse, centers))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
