//! Detection evaluation: greedy matching, discrete/continuous crediting,
//! PR / ROC / TPR-vs-FPPI sweeps and average precision.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Detection;
use crate::postproc::{iou, Rect};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// A match earns credit 1.
    Discrete,
    /// A match earns its IOU.
    Continuous,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(Self::Discrete),
            "continuous" => Ok(Self::Continuous),
            _ => Err(Error::Config(format!("unknown protocol {s:?}"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Discrete => "discrete",
            Self::Continuous => "continuous",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Matching outcome for one image. Indices refer to the inputs of
/// [`match_detections`].
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub scores: Vec<f64>,
    pub matched: Vec<MatchedPair>,
    pub false_positives: Vec<usize>,
    pub missed: Vec<usize>,
}

/// Greedy matching in descending score order (ties keep input order): each
/// detection takes the unmatched ground truth of highest IOU if that IOU is
/// at least `iou_min`, and is a false positive otherwise.
pub fn match_detections(dets: &[Detection], gts: &[Rect], iou_min: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    let mut matched = Vec::new();
    let mut false_positives = Vec::new();
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let o = iou(&dets[d].bbox, gt);
            if best.map_or(true, |(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, o)) if o >= iou_min => {
                taken[g] = true;
                matched.push(MatchedPair { det: d, gt: g, iou: o });
            }
            _ => false_positives.push(d),
        }
    }
    MatchResult {
        scores: dets.iter().map(|d| d.score).collect(),
        matched,
        false_positives,
        missed: (0..gts.len()).filter(|&g| !taken[g]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    pub score: f64,
    pub credit: f64,
    pub matched: bool,
}

/// Per-detection credit, in input order.
pub fn score_matches(mr: &MatchResult, protocol: Protocol) -> Vec<ScoredDetection> {
    let mut out: Vec<ScoredDetection> = mr
        .scores
        .iter()
        .map(|&score| ScoredDetection {
            score,
            credit: 0.0,
            matched: false,
        })
        .collect();
    for m in &mr.matched {
        out[m.det].matched = true;
        out[m.det].credit = match protocol {
            Protocol::Discrete => 1.0,
            Protocol::Continuous => m.iou,
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    /// x = recall, y = precision.
    Pr,
    /// x = false-positive count, y = true-positive rate.
    RocDiscrete,
    RocContinuous,
    /// x = false positives per image, y = true-positive rate.
    TprFppi,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pr => "PR",
            Self::RocDiscrete => "ROC-discrete",
            Self::RocContinuous => "ROC-continuous",
            Self::TprFppi => "TPR-FPPI",
        }
    }

    pub fn axes(self) -> (&'static str, &'static str) {
        match self {
            Self::Pr => ("recall", "precision"),
            Self::RocDiscrete | Self::RocContinuous => ("false_positives", "true_positive_rate"),
            Self::TprFppi => ("false_positives_per_image", "true_positive_rate"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub kind: CurveKind,
    /// One point per distinct score, thresholds strictly decreasing.
    pub points: Vec<CurvePoint>,
}

impl Curve {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let (x, y) = self.kind.axes();
        writeln!(out, "# curve={}", self.kind.name())?;
        writeln!(out, "threshold,{x},{y}")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.x, p.y)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub protocol: Protocol,
    pub pr: Curve,
    pub roc: Curve,
    pub tpr_fppi: Curve,
    pub ap: f64,
}

impl Evaluation {
    pub fn curves(&self) -> [&Curve; 3] {
        [&self.pr, &self.roc, &self.tpr_fppi]
    }
}

/// Sweeps the acceptance threshold down through every distinct score. A
/// detection is kept at threshold `t` when its score is at least `t`.
pub fn sweep_curves(
    scored: &[ScoredDetection],
    total_gts: usize,
    total_images: usize,
    protocol: Protocol,
) -> Result<Evaluation> {
    if total_gts == 0 {
        return Err(Error::NoGroundTruth);
    }
    if total_images == 0 {
        return Err(Error::InvalidInput("no images".into()));
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut pr = Vec::new();
    let mut roc = Vec::new();
    let mut fppi = Vec::new();
    let (mut credit, mut kept, mut fps) = (0.0, 0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            credit += sorted[i].credit;
            kept += 1;
            if !sorted[i].matched {
                fps += 1;
            }
            i += 1;
        }
        let recall = credit / total_gts as f64;
        pr.push(CurvePoint {
            threshold: t,
            x: recall,
            y: credit / kept as f64,
        });
        roc.push(CurvePoint {
            threshold: t,
            x: fps as f64,
            y: recall,
        });
        fppi.push(CurvePoint {
            threshold: t,
            x: fps as f64 / total_images as f64,
            y: recall,
        });
    }
    let recalls: Vec<f64> = pr.iter().map(|p| p.x).collect();
    let precisions: Vec<f64> = pr.iter().map(|p| p.y).collect();
    Ok(Evaluation {
        protocol,
        ap: average_precision(&recalls, &precisions),
        pr: Curve {
            kind: CurveKind::Pr,
            points: pr,
        },
        roc: Curve {
            kind: match protocol {
                Protocol::Discrete => CurveKind::RocDiscrete,
                Protocol::Continuous => CurveKind::RocContinuous,
            },
            points: roc,
        },
        tpr_fppi: Curve {
            kind: CurveKind::TprFppi,
            points: fppi,
        },
    })
}

/// All-points interpolated AP: the area under the precision envelope
/// `p(r) = max { p_k : r_k >= r }`, for recalls in sweep order.
pub fn average_precision(recalls: &[f64], precisions: &[f64]) -> f64 {
    assert_eq!(recalls.len(), precisions.len());
    let mut env = precisions.to_vec();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (&r, &p) in recalls.iter().zip(&env) {
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Matches and credits every image, then sweeps. Each entry pairs one
/// image's detections with its ground truth.
pub fn evaluate(
    images: &[(&[Detection], &[Rect])],
    protocol: Protocol,
    iou_min: f64,
) -> Result<Evaluation> {
    let mut scored = Vec::new();
    let mut total_gts = 0;
    for (dets, gts) in images {
        scored.extend(score_matches(&match_detections(dets, gts, iou_min), protocol));
        total_gts += gts.len();
    }
    sweep_curves(&scored, total_gts, images.len(), protocol)
}

/// Mean IOU over matched pairs; `None` without matches.
pub fn mean_matched_iou(results: &[MatchResult]) -> Option<f64> {
    let ious: Vec<f64> = results.iter().flat_map(|r| r.matched.iter().map(|m| m.iou)).collect();
    if ious.is_empty() {
        None
    } else {
        Some(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}
