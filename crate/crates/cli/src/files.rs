//! Filesystem plumbing: atomic writes, image discovery, feature sources.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pyrdpm::featex::{
    norm5_pyramid, read_feature_dump, to_norm5, BuiltinExtractor, FeatureExtractor, FeaturePyramid,
};
use pyrdpm::imaging::{build_image_pyramid, PyramidConfig};

use crate::config::{ExtractorKind, RunConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.toml";
pub const DUMP_EXT: &str = "fpd1";
const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Writes to a sibling temp file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::BadInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::output(path, e));
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn require_dir(path: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path.ok_or_else(|| CliError::BadInput(format!("no {what} directory configured")))?;
    if !p.is_dir() {
        return Err(CliError::BadInput(format!("{what} directory {} not found", p.display())));
    }
    Ok(p.clone())
}

pub fn require_file(path: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path.ok_or_else(|| CliError::BadInput(format!("no {what} file configured")))?;
    if !p.is_file() {
        return Err(CliError::BadInput(format!("{what} file {} not found", p.display())));
    }
    Ok(p.clone())
}

pub fn output_path(flag: Option<&PathBuf>, configured: Option<&PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.or(configured)
        .cloned()
        .ok_or_else(|| CliError::BadInput(format!("no {what} output path; pass --out")))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(path, e))
}

/// Image files in `dir`, keyed by file stem.
pub fn list_images(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    list_by_ext(dir, &IMAGE_EXTS)
}

fn list_by_ext(dir: &Path, exts: &[&str]) -> CliResult<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::input(dir, e))? {
        let path = entry.map_err(|e| CliError::input(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if out.insert(stem.to_string(), path.clone()).is_some() {
                return Err(CliError::BadInput(format!("two files in {} share the id {stem:?}", dir.display())));
            }
        }
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> CliResult<image::RgbImage> {
    Ok(image::open(path).map_err(|e| CliError::input(path, e))?.to_rgb8())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pyramid_digest: String,
    pub extractor: String,
    pub stage: String,
    pub config_digest: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub sha256: String,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        toml::from_str(&read_text(&path)?).map_err(|e| CliError::input(&path, e))
    }
}

/// Where norm5 pyramids come from.
pub enum FeatureSource {
    Builtin {
        extractor: BuiltinExtractor,
        images: BTreeMap<String, PathBuf>,
        pyramid: PyramidConfig,
    },
    Dump {
        dir: PathBuf,
        manifest: Manifest,
    },
}

impl FeatureSource {
    /// Validates the source up front. For dumps the manifest must carry the
    /// current pyramid digest.
    pub fn open(cfg: &RunConfig) -> CliResult<Self> {
        let pyramid = cfg.pyramid.to_core();
        match cfg.extractor.kind {
            ExtractorKind::Builtin => {
                let dir = require_dir(cfg.paths.images.as_ref(), "images")?;
                Ok(FeatureSource::Builtin {
                    extractor: BuiltinExtractor::new(cfg.extractor.builtin()),
                    images: list_images(&dir)?,
                    pyramid,
                })
            }
            ExtractorKind::Dump => {
                let dir = require_dir(cfg.extractor.features_dir.as_ref(), "features")?;
                let manifest = Manifest::read(&dir)?;
                let want = hex::encode(pyramid.digest());
                if manifest.pyramid_digest != want {
                    return Err(CliError::Incompatible(format!(
                        "features in {} were extracted under pyramid digest {}, config has {want}",
                        dir.display(),
                        manifest.pyramid_digest
                    )));
                }
                Ok(FeatureSource::Dump { dir, manifest })
            }
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            FeatureSource::Builtin { extractor, .. } => extractor.descriptor(),
            FeatureSource::Dump { manifest, .. } => manifest.extractor.clone(),
        }
    }

    pub fn ids(&self) -> Vec<String> {
        match self {
            FeatureSource::Builtin { images, .. } => images.keys().cloned().collect(),
            FeatureSource::Dump { manifest, .. } => manifest.files.iter().map(|f| f.id.clone()).collect(),
        }
    }

    /// `Ok(None)` when the source has nothing for `id`.
    pub fn load(&self, id: &str) -> CliResult<Option<FeaturePyramid>> {
        match self {
            FeatureSource::Builtin {
                extractor,
                images,
                pyramid,
            } => {
                let Some(path) = images.get(id) else {
                    return Ok(None);
                };
                let img = load_image(path)?;
                let pyr = build_image_pyramid(&img, pyramid).map_err(|e| CliError::input(path, e))?;
                Ok(Some(norm5_pyramid(id, &pyr, extractor).map_err(|e| CliError::input(path, e))?))
            }
            FeatureSource::Dump { dir, manifest } => {
                let Some(entry) = manifest.files.iter().find(|f| f.id == id) else {
                    return Ok(None);
                };
                let path = dir.join(&entry.file);
                let bytes = match fs::read(&path) {
                    Ok(b) => b,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
                    Err(e) => return Err(CliError::input(&path, e)),
                };
                if sha256_hex(&bytes) != entry.sha256 {
                    return Err(CliError::input(&path, "checksum differs from the manifest"));
                }
                let mut fp = read_feature_dump(&mut bytes.as_slice()).map_err(|e| CliError::input(&path, e))?;
                fp.image_id = id.to_string();
                Ok(Some(to_norm5(fp).map_err(|e| CliError::input(&path, e))?))
            }
        }
    }
}
