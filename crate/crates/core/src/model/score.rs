use super::RootFilter;
use crate::error::{Error, Result};
use crate::featex::FeatureMap;

/// Filter responses at every valid placement over one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub level_index: usize,
    pub component_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f64>,
}

impl ScoreMap {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.scores[r * self.cols + c]
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Valid (unpadded) cross-correlation of `filter` with `fm`, plus the bias.
/// Returns an empty map when the filter does not fit.
pub fn score_level(fm: &FeatureMap, filter: &RootFilter, level_index: usize) -> Result<ScoreMap> {
    if fm.channels != filter.channels {
        return Err(Error::Incompatible(format!(
            "feature map has {} channels, filter {} expects {}",
            fm.channels, filter.component_id, filter.channels
        )));
    }
    let empty = ScoreMap {
        level_index,
        component_id: filter.component_id,
        rows: 0,
        cols: 0,
        scores: Vec::new(),
    };
    if fm.rows < filter.h || fm.cols < filter.w {
        return Ok(empty);
    }
    let (or, oc) = (fm.rows - filter.h + 1, fm.cols - filter.w + 1);
    let mut out = vec![filter.bias as f64; or * oc];
    let (h, w) = (filter.h, filter.w);
    for c in 0..fm.channels {
        let plane = fm.plane(c);
        let wc = &filter.weights[c * h * w..(c + 1) * h * w];
        for dy in 0..h {
            for dx in 0..w {
                let wv = wc[dy * w + dx] as f64;
                if wv == 0.0 {
                    continue;
                }
                for r in 0..or {
                    let src = &plane[(r + dy) * fm.cols + dx..][..oc];
                    let dst = &mut out[r * oc..(r + 1) * oc];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wv * s as f64;
                    }
                }
            }
        }
    }
    Ok(ScoreMap {
        level_index,
        component_id: filter.component_id,
        rows: or,
        cols: oc,
        scores: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(fm: &FeatureMap, f: &RootFilter) -> Vec<f64> {
        let mut out = Vec::new();
        for r in 0..=fm.rows - f.h {
            for c in 0..=fm.cols - f.w {
                let mut s = f.bias as f64;
                for ch in 0..fm.channels {
                    for dy in 0..f.h {
                        for dx in 0..f.w {
                            s += f.weights[(ch * f.h + dy) * f.w + dx] as f64
                                * fm.at(ch, r + dy, c + dx) as f64;
                        }
                    }
                }
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn zero_weights_give_bias() {
        let fm = FeatureMap::from_vec(2, 4, 5, (0..40).map(|v| v as f32).collect()).unwrap();
        let mut f = RootFilter::zeros(0, 2, 3, 2);
        f.bias = -0.75;
        let sm = score_level(&fm, &f, 3).unwrap();
        assert_eq!((sm.rows, sm.cols, sm.level_index), (3, 3, 3));
        assert!(sm.scores.iter().all(|&s| s == -0.75));
    }

    #[test]
    fn delta_filter_reads_one_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fm = FeatureMap::from_vec(4, 5, 6, (0..120).map(|_| rng.gen()).collect()).unwrap();
        let mut f = RootFilter::zeros(0, 2, 2, 4);
        f.weights[3 * 4] = 1.0;
        f.bias = 0.5;
        let sm = score_level(&fm, &f, 1).unwrap();
        for r in 0..sm.rows {
            for c in 0..sm.cols {
                assert_eq!(sm.at(r, c), fm.at(3, r, c) as f64 + 0.5);
            }
        }
    }

    #[test]
    fn random_4x4x2_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fm = FeatureMap::from_vec(2, 4, 4, (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let f = RootFilter::new(0, 2, 2, 2, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.1)
            .unwrap();
        let sm = score_level(&fm, &f, 1).unwrap();
        assert_eq!(sm.scores.len(), 9);
        for (a, b) in sm.scores.iter().zip(naive(&fm, &f)) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn oversized_filter_gives_empty_map() {
        let fm = FeatureMap::zeros(1, 3, 3);
        let sm = score_level(&fm, &RootFilter::zeros(0, 4, 2, 1), 1).unwrap();
        assert!(sm.is_empty());
    }

    #[test]
    fn channel_mismatch() {
        let fm = FeatureMap::zeros(2, 3, 3);
        let err = score_level(&fm, &RootFilter::zeros(0, 1, 1, 3), 1).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
    }
}
