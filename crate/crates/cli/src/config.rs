//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pyrdpm::eval::Protocol;
use pyrdpm::featex::{BuiltinConfig, Stage};
use pyrdpm::imaging::PyramidConfig;
use pyrdpm::model::DEFAULT_NMS_IOU;
use pyrdpm::train::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Detections must score strictly above this.
    pub threshold: f64,
    pub nms_iou: f64,
    pub pyramid: PyramidSection,
    pub extractor: ExtractorSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            nms_iou: DEFAULT_NMS_IOU,
            pyramid: PyramidSection::default(),
            extractor: ExtractorSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidSection {
    pub num_levels: usize,
    pub scale_step: f64,
    pub canvas_side: u32,
    pub stride: u32,
    pub receptive_field: u32,
    pub filter_scaledown: f64,
}

impl Default for PyramidSection {
    fn default() -> Self {
        let p = PyramidConfig::default();
        Self {
            num_levels: p.num_levels,
            scale_step: p.scale_step,
            canvas_side: p.canvas_side,
            stride: p.stride,
            receptive_field: p.receptive_field,
            filter_scaledown: p.filter_scaledown,
        }
    }
}

impl PyramidSection {
    pub fn to_core(&self) -> PyramidConfig {
        PyramidConfig {
            num_levels: self.num_levels,
            scale_step: self.scale_step,
            canvas_side: self.canvas_side,
            stride: self.stride,
            receptive_field: self.receptive_field,
            filter_scaledown: self.filter_scaledown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpStage {
    Conv5,
    Norm5,
}

impl DumpStage {
    pub fn stage(self) -> Stage {
        match self {
            DumpStage::Conv5 => Stage::Conv5,
            DumpStage::Norm5 => Stage::Norm5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// Features computed in-process from the images.
    Builtin,
    /// Features read from FPD1 dumps in `features_dir`.
    Dump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSection {
    pub kind: ExtractorKind,
    pub seed: u64,
    pub channels: usize,
    pub hidden: usize,
    /// Stage written by `extract`.
    pub dump_stage: DumpStage,
    pub features_dir: Option<PathBuf>,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        let b = BuiltinConfig::default();
        Self {
            kind: ExtractorKind::Builtin,
            seed: b.seed,
            channels: b.channels,
            hidden: b.hidden,
            dump_stage: DumpStage::Norm5,
            features_dir: None,
        }
    }
}

impl ExtractorSection {
    pub fn builtin(&self) -> BuiltinConfig {
        BuiltinConfig {
            seed: self.seed,
            channels: self.channels,
            hidden: self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub components: usize,
    pub bbox_regression: bool,
    pub svm_cost: f64,
    pub mining_rounds: usize,
    pub negatives_per_image: usize,
    pub neg_iou_max: f64,
    pub hard_threshold: f64,
    pub easy_prune_threshold: f64,
    pub convergence_tol: f64,
    pub seed: u64,
    pub bbox_lambda: f64,
    pub bbox_min_iou: f64,
    pub max_svm_epochs: usize,
    pub max_hard_per_image: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            components: 1,
            bbox_regression: true,
            svm_cost: t.svm_cost,
            mining_rounds: t.mining_rounds,
            negatives_per_image: t.negatives_per_image,
            neg_iou_max: t.neg_iou_max,
            hard_threshold: t.hard_threshold,
            easy_prune_threshold: t.easy_prune_threshold,
            convergence_tol: t.convergence_tol,
            seed: t.rng_seed,
            bbox_lambda: t.bbox_lambda,
            bbox_min_iou: t.bbox_min_iou,
            max_svm_epochs: t.max_svm_epochs,
            max_hard_per_image: t.max_hard_per_image,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            svm_cost: self.svm_cost,
            mining_rounds: self.mining_rounds,
            negatives_per_image: self.negatives_per_image,
            neg_iou_max: self.neg_iou_max,
            hard_threshold: self.hard_threshold,
            easy_prune_threshold: self.easy_prune_threshold,
            convergence_tol: self.convergence_tol,
            rng_seed: self.seed,
            bbox_lambda: self.bbox_lambda,
            bbox_min_iou: self.bbox_min_iou,
            max_svm_epochs: self.max_svm_epochs,
            max_hard_per_image: self.max_hard_per_image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `discrete` or `continuous`.
    pub protocol: String,
    pub match_iou: f64,
    /// Keep only ground truths carrying this tag.
    pub tag: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            protocol: Protocol::Discrete.to_string(),
            match_iou: pyrdpm::eval::DEFAULT_MATCH_IOU,
            tag: None,
        }
    }
}

/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub images: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    /// Directory receiving curve CSVs and the AP report.
    pub curves: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub nms_iou: Option<f64>,
    pub components: Option<usize>,
    pub features_dir: Option<PathBuf>,
    pub protocol: Option<Protocol>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::input(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        let p = &mut self.paths;
        for slot in [
            &mut p.images,
            &mut p.annotations,
            &mut p.model,
            &mut p.detections,
            &mut p.curves,
        ] {
            fix(slot);
        }
        fix(&mut self.extractor.features_dir);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(t) = o.threshold {
            self.threshold = t;
        }
        if let Some(v) = o.nms_iou {
            self.nms_iou = v;
        }
        if let Some(c) = o.components {
            self.train.components = c;
        }
        if let Some(d) = &o.features_dir {
            self.extractor.kind = ExtractorKind::Dump;
            self.extractor.features_dir = Some(d.clone());
        }
        if let Some(p) = o.protocol {
            self.eval.protocol = p.to_string();
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::BadInput(m));
        self.pyramid.to_core().validate()?;
        self.train.to_core().validate()?;
        if self.train.components == 0 {
            return bad("train.components must be >= 1".into());
        }
        if self.threshold.is_nan() {
            return bad("threshold is NaN".into());
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return bad(format!("nms_iou {} outside [0, 1]", self.nms_iou));
        }
        if !(self.eval.match_iou > 0.0 && self.eval.match_iou <= 1.0) {
            return bad(format!("eval.match_iou {} outside (0, 1]", self.eval.match_iou));
        }
        self.protocol()?;
        match (self.extractor.kind, &self.extractor.features_dir) {
            (ExtractorKind::Dump, None) => bad("extractor.kind = \"dump\" needs extractor.features_dir".into()),
            (ExtractorKind::Builtin, Some(_)) => {
                bad("extractor.features_dir is set but extractor.kind is \"builtin\"".into())
            }
            (ExtractorKind::Builtin, None) if self.extractor.channels == 0 || self.extractor.hidden == 0 => {
                bad("builtin extractor needs channels >= 1 and hidden >= 1".into())
            }
            _ => Ok(()),
        }
    }

    pub fn protocol(&self) -> CliResult<Protocol> {
        self.eval
            .protocol
            .parse()
            .map_err(|_| CliError::BadInput(format!("unknown protocol {:?}", self.eval.protocol)))
    }

    /// SHA-256 of the TOML form of everything except file locations, so the
    /// same settings give the same digest wherever the inputs live.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsSection::default();
        c.extractor.features_dir = None;
        let text = toml::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.pyramid.to_core(), PyramidConfig::default());
        assert_eq!(cfg.train.to_core(), TrainConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("thresold = 1.0").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\ncost = 1.0").is_err());
    }

    #[test]
    fn digest_ignores_paths_but_not_settings() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.images = Some("/elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        b.train.seed = 9;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(3),
            threshold: Some(f64::INFINITY),
            features_dir: Some("f".into()),
            protocol: Some(Protocol::Continuous),
            ..Overrides::default()
        });
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.threshold, f64::INFINITY);
        assert_eq!(cfg.extractor.kind, ExtractorKind::Dump);
        assert_eq!(cfg.protocol().unwrap(), Protocol::Continuous);
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn exactly_one_extractor_source() {
        let mut cfg = RunConfig::default();
        cfg.extractor.kind = ExtractorKind::Dump;
        assert!(cfg.validate().is_err());
        cfg.extractor.kind = ExtractorKind::Builtin;
        cfg.extractor.features_dir = Some("d".into());
        assert!(cfg.validate().is_err());
    }
}
