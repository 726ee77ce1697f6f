//! Paired dataset manifests: discovery on disk, JSON persistence and
//! validation.
//!
//! The manifest JSON is `{root, entries: [{id, input, gt, mask?}]}`. Entry
//! paths are relative to `root` unless absolute; a relative `root` is relative
//! to the manifest file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{load_gray, load_rgb};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    #[serde(rename = "input_path")]
    pub input: PathBuf,
    #[serde(rename = "gt_path")]
    pub gt: PathBuf,
    #[serde(rename = "initial_mask_path", default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairManifest {
    pub root: PathBuf,
    pub entries: Vec<PairEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `<id>.png` next to `<id>_gt.png` (and optionally `<id>_mask.png`).
    FlatPairs,
    /// Same file names under `images/`, `labels/` and optional `masks/`.
    SplitDirs,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat_pairs" | "flat-pairs" | "flat" => Ok(Layout::FlatPairs),
            "split_dirs" | "split-dirs" | "split" => Ok(Layout::SplitDirs),
            other => Err(Error::Config(format!("unknown layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanResult {
    pub manifest: PairManifest,
    /// Files that looked like inputs but had no partner.
    pub warnings: Vec<String>,
}

impl PairManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn input_path(&self, e: &PairEntry) -> PathBuf {
        self.resolve(&e.input)
    }

    pub fn gt_path(&self, e: &PairEntry) -> PathBuf {
        self.resolve(&e.gt)
    }

    pub fn mask_path(&self, e: &PairEntry) -> Option<PathBuf> {
        e.mask.as_deref().map(|m| self.resolve(m))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let mut m: PairManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.root.is_relative() {
            m.root = path.parent().unwrap_or(Path::new(".")).join(&m.root);
        }
        let mut seen = BTreeSet::new();
        for e in &m.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Config(format!("duplicate manifest id {:?}", e.id)));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn split_name(name: &str) -> (&str, &str) {
    match name.rsplit_once('.') {
        Some((stem, ext)) => (stem, ext),
        None => (name, ""),
    }
}

/// Discovers input/ground-truth pairs under `root`. Entries are sorted by id.
/// Files are not opened.
pub fn scan_layout(root: impl AsRef<Path>, layout: Layout) -> Result<ScanResult> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::RootMissing(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    match layout {
        Layout::FlatPairs => {
            let files = image_files(root)?;
            for name in files.keys() {
                let (stem, ext) = split_name(name);
                if stem.ends_with("_gt") || stem.ends_with("_mask") {
                    continue;
                }
                let gt = format!("{stem}_gt.{ext}");
                if !files.contains_key(&gt) {
                    warnings.push(format!("{name}: no matching {gt}"));
                    continue;
                }
                let mask = format!("{stem}_mask.{ext}");
                entries.push(PairEntry {
                    id: stem.to_string(),
                    input: PathBuf::from(name),
                    gt: PathBuf::from(gt),
                    mask: files.contains_key(&mask).then(|| PathBuf::from(mask)),
                });
            }
        }
        Layout::SplitDirs => {
            let images_dir = root.join("images");
            let labels_dir = root.join("labels");
            if !images_dir.is_dir() || !labels_dir.is_dir() {
                return Err(Error::NoPairsFound(root.to_path_buf()));
            }
            let images = image_files(&images_dir)?;
            let labels = image_files(&labels_dir)?;
            let masks = match root.join("masks") {
                d if d.is_dir() => image_files(&d)?,
                _ => BTreeMap::new(),
            };
            for name in images.keys() {
                if !labels.contains_key(name) {
                    warnings.push(format!("images/{name}: no matching labels/{name}"));
                    continue;
                }
                entries.push(PairEntry {
                    id: split_name(name).0.to_string(),
                    input: Path::new("images").join(name),
                    gt: Path::new("labels").join(name),
                    mask: masks.contains_key(name).then(|| Path::new("masks").join(name)),
                });
            }
            for name in labels.keys().filter(|n| !images.contains_key(*n)) {
                warnings.push(format!("labels/{name}: no matching images/{name}"));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::NoPairsFound(root.to_path_buf()));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(ScanResult {
        manifest: PairManifest {
            root: root.to_path_buf(),
            entries,
        },
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    NotFound,
    DecodeError,
    DimensionMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryFailure {
    pub id: String,
    pub kind: FailureKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub checked: usize,
    /// In manifest order.
    pub failures: Vec<EntryFailure>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn classify(id: &str, err: Error) -> EntryFailure {
    let kind = match &err {
        Error::NotFound(_) => FailureKind::NotFound,
        Error::DimensionMismatch { .. } => FailureKind::DimensionMismatch,
        _ => FailureKind::DecodeError,
    };
    EntryFailure {
        id: id.to_string(),
        kind,
        detail: err.to_string(),
    }
}

fn check_entry(m: &PairManifest, e: &PairEntry) -> Result<()> {
    let input = load_rgb(m.input_path(e))?;
    let gt = load_rgb(m.gt_path(e))?;
    if gt.dims() != input.dims() {
        return Err(Error::DimensionMismatch {
            left: input.dims(),
            right: gt.dims(),
        });
    }
    if let Some(p) = m.mask_path(e) {
        let mask = load_gray(p)?;
        if mask.dims() != input.dims() {
            return Err(Error::DimensionMismatch {
                left: input.dims(),
                right: mask.dims(),
            });
        }
    }
    Ok(())
}

/// Decodes every file and checks sizes. Never fails as a whole; problems are
/// collected per entry.
pub fn validate(manifest: &PairManifest) -> ValidationReport {
    let failures: Vec<Option<EntryFailure>> = manifest
        .entries
        .par_iter()
        .map(|e| check_entry(manifest, e).err().map(|err| classify(&e.id, err)))
        .collect();
    ValidationReport {
        checked: manifest.entries.len(),
        failures: failures.into_iter().flatten().collect(),
    }
}
