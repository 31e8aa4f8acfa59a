use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use pyrdpm::annotations::{parse_annotations, parse_detections, write_detections, Annotation};
use pyrdpm::eval::evaluate;
use pyrdpm::featex::{
    extract_features, max_pool_pyramid, to_norm5, write_feature_dump, BuiltinExtractor, FeatureExtractor,
};
use pyrdpm::imaging::build_image_pyramid;
use pyrdpm::model::{read_model, write_model, Detection, Detector};
use pyrdpm::postproc::Rect;
use pyrdpm::train::{assign_components, train_model, TrainImage};

use crate::config::{DumpStage, ExtractorKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::files::{
    list_images, load_image, output_path, read_text, require_dir, require_file, sha256_hex, write_atomic,
    FeatureSource, Manifest, ManifestEntry, DUMP_EXT, MANIFEST,
};

pub fn extract(cfg: &RunConfig, out: Option<&PathBuf>) -> CliResult<()> {
    if cfg.extractor.kind != ExtractorKind::Builtin {
        return Err(CliError::BadInput("extract needs the builtin extractor".into()));
    }
    let images = list_images(&require_dir(cfg.paths.images.as_ref(), "images")?)?;
    let out_dir = output_path(out, None, "features")?;
    let pyramid = cfg.pyramid.to_core();
    let ex = BuiltinExtractor::new(cfg.extractor.builtin());
    let mut files = Vec::new();
    let mut failures = Vec::new();
    for (id, path) in &images {
        let result = (|| -> CliResult<ManifestEntry> {
            let img = load_image(path)?;
            let pyr = build_image_pyramid(&img, &pyramid).map_err(|e| CliError::input(path, e))?;
            let conv5 = extract_features(id, &pyr, &ex).map_err(|e| CliError::input(path, e))?;
            let fp = match cfg.extractor.dump_stage {
                DumpStage::Conv5 => conv5,
                DumpStage::Norm5 => to_norm5(max_pool_pyramid(&conv5)?)?,
            };
            let mut bytes = Vec::new();
            write_feature_dump(&fp, &mut bytes)?;
            let file = format!("{id}.{DUMP_EXT}");
            write_atomic(&out_dir.join(&file), &bytes)?;
            Ok(ManifestEntry {
                id: id.clone(),
                file,
                sha256: sha256_hex(&bytes),
            })
        })();
        match result {
            Ok(entry) => {
                info!("extracted {id}");
                files.push(entry);
            }
            Err(e) => {
                eprintln!("{id}: {e}");
                failures.push(e);
            }
        }
    }
    let manifest = Manifest {
        pyramid_digest: hex::encode(pyramid.digest()),
        extractor: ex.descriptor(),
        stage: cfg.extractor.dump_stage.stage().name().to_string(),
        config_digest: cfg.digest(),
        files,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(&out_dir.join(MANIFEST), text.as_bytes())?;
    println!(
        "extracted {} of {} images into {}",
        manifest.files.len(),
        images.len(),
        out_dir.display()
    );
    match failures.into_iter().next() {
        None => Ok(()),
        Some(first) if first.exit_code() == 1 => Err(first),
        Some(_) => Err(CliError::BadInput("some images failed; see messages above".into())),
    }
}

fn read_annotations(cfg: &RunConfig) -> CliResult<Vec<Annotation>> {
    let path = require_file(cfg.paths.annotations.as_ref(), "annotations")?;
    parse_annotations(&read_text(&path)?).map_err(|e| CliError::input(&path, e))
}

pub fn train(cfg: &RunConfig, out: Option<&PathBuf>) -> CliResult<()> {
    let anns = read_annotations(cfg)?;
    let model_path = output_path(out, cfg.paths.model.as_ref(), "model")?;
    let source = FeatureSource::open(cfg)?;
    let mut by_image: BTreeMap<&str, Vec<Rect>> = BTreeMap::new();
    for a in &anns {
        by_image.entry(&a.image_id).or_default().push(a.bbox);
    }
    let mut pyramids = Vec::new();
    let mut skipped = Vec::new();
    for (id, gts) in &by_image {
        match source.load(id)? {
            Some(fp) => pyramids.push((fp, gts.clone())),
            None => {
                warn!("no image or features for annotated id {id:?}; skipping");
                skipped.push(id.to_string());
            }
        }
    }
    if pyramids.is_empty() {
        return Err(CliError::BadInput("none of the annotated images could be found".into()));
    }
    let pyramid = cfg.pyramid.to_core();
    let boxes: Vec<Rect> = pyramids.iter().flat_map(|(_, g)| g.iter().copied()).collect();
    let assignment = assign_components(&boxes, cfg.train.components, pyramid.filter_scaledown, cfg.train.seed)?;
    let mut labels = assignment.labels.iter().copied();
    let images: Vec<TrainImage> = pyramids
        .into_iter()
        .map(|(fp, gts)| TrainImage {
            gt_components: labels.by_ref().take(gts.len()).collect(),
            pyramid: fp,
            gts,
        })
        .collect();
    let outcome = train_model(
        &images,
        &assignment.shapes,
        &cfg.train.to_core(),
        &pyramid,
        &source.descriptor(),
        cfg.train.bbox_regression,
    )?;
    let mut model = outcome.model;
    model.threshold = cfg.threshold;
    let _ = write!(model.metadata, "config_digest={}\nskipped={}\n", cfg.digest(), skipped.join(","));
    let mut bytes = Vec::new();
    write_model(&model, &mut bytes)?;
    write_atomic(&model_path, &bytes)?;

    println!("trained on {} images ({} boxes)", images.len(), boxes.len());
    if !skipped.is_empty() {
        println!("skipped {} missing: {}", skipped.len(), skipped.join(", "));
    }
    for (r, shape) in outcome.reports.iter().zip(&assignment.shapes) {
        println!(
            "component {}: filter {}x{}, {} rounds, converged {}, cache {}",
            r.component_id,
            shape.0,
            shape.1,
            r.rounds.len(),
            r.converged,
            r.cache.len()
        );
    }
    if cfg.train.bbox_regression {
        println!("regression pairs per component: {:?}", outcome.regression_pairs);
    }
    println!("model written to {}", model_path.display());
    Ok(())
}

pub fn detect(cfg: &RunConfig, out: Option<&PathBuf>) -> CliResult<()> {
    let model_file = require_file(cfg.paths.model.as_ref(), "model")?;
    let out_path = output_path(out, cfg.paths.detections.as_ref(), "detections")?;
    let source = FeatureSource::open(cfg)?;
    let bytes = std::fs::read(&model_file).map_err(|e| CliError::input(&model_file, e))?;
    let model = read_model(&mut bytes.as_slice()).map_err(|e| CliError::input(&model_file, e))?;
    let descriptor = source.descriptor();
    let detector = Detector::new(&model, &cfg.pyramid.to_core(), &descriptor)?.with_nms_iou(cfg.nms_iou);
    let mut dets: Vec<Detection> = Vec::new();
    let ids = source.ids();
    for id in &ids {
        let fp = source
            .load(id)?
            .ok_or_else(|| CliError::BadInput(format!("features for {id:?} disappeared")))?;
        dets.extend(detector.detect(&fp, cfg.threshold)?);
    }
    let pyramid_digest = hex::encode(model.config_digest);
    let config_digest = cfg.digest();
    let threshold = cfg.threshold.to_string();
    let mut text = Vec::new();
    write_detections(
        &dets,
        &[
            ("config_digest", config_digest.as_str()),
            ("pyramid_digest", pyramid_digest.as_str()),
            ("threshold", threshold.as_str()),
        ],
        &mut text,
    )?;
    write_atomic(&out_path, &text)?;
    println!("{} detections over {} images written to {}", dets.len(), ids.len(), out_path.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: Option<&PathBuf>) -> CliResult<()> {
    let anns = read_annotations(cfg)?;
    let det_path = require_file(cfg.paths.detections.as_ref(), "detections")?;
    let dets = parse_detections(&read_text(&det_path)?).map_err(|e| CliError::input(&det_path, e))?;
    let curves_dir = out.or(cfg.paths.curves.as_ref());
    let protocol = cfg.protocol()?;

    let mut ids: BTreeSet<&str> = anns.iter().map(|a| a.image_id.as_str()).collect();
    ids.extend(dets.iter().map(|d| d.image_id.as_str()));
    let mut gts: BTreeMap<&str, Vec<Rect>> = ids.iter().map(|&i| (i, Vec::new())).collect();
    for a in &anns {
        if cfg.eval.tag.is_none() || a.tag == cfg.eval.tag {
            gts.get_mut(a.image_id.as_str()).unwrap().push(a.bbox);
        }
    }
    let mut per_image: BTreeMap<&str, Vec<Detection>> = ids.iter().map(|&i| (i, Vec::new())).collect();
    for d in &dets {
        per_image.get_mut(d.image_id.as_str()).unwrap().push(d.clone());
    }
    let pairs: Vec<(&[Detection], &[Rect])> = ids
        .iter()
        .map(|i| (per_image[i].as_slice(), gts[i].as_slice()))
        .collect();
    let ev = evaluate(&pairs, protocol, cfg.eval.match_iou)?;
    let total_gts: usize = gts.values().map(Vec::len).sum();
    println!(
        "AP={:.6} protocol={protocol} images={} ground_truths={total_gts} detections={}",
        ev.ap,
        ids.len(),
        dets.len()
    );
    if let Some(dir) = curves_dir {
        let digest = cfg.digest();
        for curve in ev.curves() {
            let mut buf = format!("# config_digest={digest}\n").into_bytes();
            curve.write_csv(&mut buf)?;
            write_atomic(&dir.join(format!("{}.csv", curve.kind.name())), &buf)?;
        }
        let report = format!(
            "ap = {:?}\nprotocol = \"{protocol}\"\nmatch_iou = {:?}\nimages = {}\nground_truths = {total_gts}\ndetections = {}\nconfig_digest = \"{digest}\"\n",
            ev.ap,
            cfg.eval.match_iou,
            ids.len(),
            dets.len()
        );
        write_atomic(&dir.join("report.toml"), report.as_bytes())?;
        println!("curves written to {}", Path::new(dir).display());
    }
    Ok(())
}
