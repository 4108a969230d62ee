//! Dataset ingestion: directory scans, line-delimited manifests and
//! reproducible subsamples for human evaluation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::fsutil;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "webp"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub content_hash: Digest,
    pub truth_label: Option<String>,
    pub attributes: Option<BTreeMap<String, String>>,
}

impl ImageRecord {
    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.as_ref()?.get(key).map(String::as_str)
    }

    pub fn read_bytes(&self) -> Result<Vec<u8>> {
        fs::read(&self.path).map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub records: Vec<ImageRecord>,
    pub class_names: Option<Vec<String>>,
}

/// Optional first line of a manifest file carrying dataset-level fields.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    dataset_id: String,
    class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Images directly under the root.
    Flat,
    /// One subdirectory per class; the directory name is the truth label.
    ClassSubdirs,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Layout::Flat),
            "class_subdirs" | "class-subdirs" => Ok(Layout::ClassSubdirs),
            other => Err(Error::InvalidArgument(format!("unknown layout {other:?}"))),
        }
    }
}

/// `image_id` = first 16 hex chars of the content hash, `-`, file stem.
pub fn image_id_for(hash: &Digest, path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{}-{}", hash.short(), stem)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn collect_images(dir: &Path, recursive: bool, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ft = entry.file_type().map_err(|e| Error::io(&path, e))?;
        if ft.is_dir() {
            if recursive {
                collect_images(&path, true, out)?;
            }
        } else if is_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

pub fn scan_directory(root: &Path, layout: Layout) -> Result<DatasetManifest> {
    let mut labelled: Vec<(PathBuf, Option<String>)> = Vec::new();
    match layout {
        Layout::Flat => {
            let mut paths = Vec::new();
            collect_images(root, false, &mut paths)?;
            labelled.extend(paths.into_iter().map(|p| (p, None)));
        }
        Layout::ClassSubdirs => {
            let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(root, e))?;
                let path = entry.path();
                if !path.is_dir() {
                    continue;
                }
                let class = entry.file_name().to_string_lossy().into_owned();
                let mut paths = Vec::new();
                collect_images(&path, true, &mut paths)?;
                labelled.extend(paths.into_iter().map(|p| (p, Some(class.clone()))));
            }
        }
    }
    if labelled.is_empty() {
        return Err(Error::ZeroImages(root.display().to_string()));
    }
    labelled.sort_by(|a, b| a.0.cmp(&b.0));

    let hashes: Vec<Result<Digest>> = labelled
        .par_iter()
        .map(|(p, _)| fs::read(p).map(|b| Digest::of(&b)).map_err(|e| Error::io(p, e)))
        .collect();

    let mut records = Vec::with_capacity(labelled.len());
    let mut seen = HashSet::new();
    for (i, ((path, label), hash)) in labelled.into_iter().zip(hashes).enumerate() {
        let hash = hash?;
        let image_id = image_id_for(&hash, &path);
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateImageId { image_id, line: i + 1 });
        }
        records.push(ImageRecord {
            image_id,
            path,
            content_hash: hash,
            truth_label: label,
            attributes: None,
        });
    }

    let class_names = match layout {
        Layout::Flat => None,
        Layout::ClassSubdirs => Some(
            records
                .iter()
                .filter_map(|r| r.truth_label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        ),
    };
    let dataset_id = root
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".to_string());

    Ok(DatasetManifest {
        dataset_id,
        records,
        class_names,
    })
}

impl DatasetManifest {
    /// Checks id uniqueness and class membership. `lines[i]` is the file
    /// line of record `i`, used in error messages.
    fn validate(&self, lines: &[usize]) -> Result<()> {
        let mut seen = HashSet::new();
        let classes: Option<HashSet<&str>> = self
            .class_names
            .as_ref()
            .map(|c| c.iter().map(String::as_str).collect());
        for (i, r) in self.records.iter().enumerate() {
            let line = lines.get(i).copied().unwrap_or(i + 1);
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImageId {
                    image_id: r.image_id.clone(),
                    line,
                });
            }
            if let (Some(classes), Some(label)) = (&classes, &r.truth_label) {
                if !label.is_empty() && !classes.contains(label.as_str()) {
                    return Err(Error::UnknownClass {
                        label: label.clone(),
                        line,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn index(&self) -> BTreeMap<&str, &ImageRecord> {
        self.records.iter().map(|r| (r.image_id.as_str(), r)).collect()
    }

    /// Stable digest of the manifest contents.
    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ManifestHeader {
            dataset_id: self.dataset_id.clone(),
            class_names: self.class_names.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend(fsutil::to_json_lines(&self.records).expect("records serialize"));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Parses manifest text. The first line may be a header object with
/// `dataset_id` and `class_names`; every other line is one [`ImageRecord`].
pub fn parse_manifest(text: &str, source: &str, default_dataset_id: &str) -> Result<DatasetManifest> {
    let mut dataset_id = default_dataset_id.to_string();
    let mut class_names = None;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        if records.is_empty() && value.get("dataset_id").is_some() {
            let header: ManifestHeader = serde_json::from_value(value).map_err(|e| Error::Parse {
                path: source.to_string(),
                line: lineno,
                message: e.to_string(),
            })?;
            dataset_id = header.dataset_id;
            class_names = header.class_names;
            continue;
        }
        let record: ImageRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: lineno,
            message: e.to_string(),
        })?;
        lines.push(lineno);
        records.push(record);
    }
    let manifest = DatasetManifest {
        dataset_id,
        records,
        class_names,
    };
    manifest.validate(&lines)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_manifest(&text, &path.display().to_string(), &stem)
}

/// SplitMix64: a 64-bit generator whose n-th output is a fixed mixing
/// function of `seed + n * 0x9E3779B97F4A7C15`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `0..bound`. Draws below `2^64 mod bound` are rejected so
    /// the accepted range is a multiple of `bound`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let reject_below = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= reject_below {
                return x % bound;
            }
        }
    }
}

/// Indices of a uniform `n`-subset of `0..len`, ascending.
///
/// Partial Fisher–Yates: for `i` in `0..n`, swap position `i` with
/// `i + below(len - i)`; the first `n` positions are the sample.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = SplitMix64::new(seed);
    for i in 0..n {
        let j = i + rng.below((len - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    chosen
}

pub fn subsample(manifest: &DatasetManifest, n: usize, seed: u64) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be positive".into()));
    }
    if n > manifest.records.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: manifest.records.len(),
        });
    }
    let records = sample_indices(manifest.records.len(), n, seed)
        .into_iter()
        .map(|i| manifest.records[i].clone())
        .collect();
    Ok(DatasetManifest {
        dataset_id: manifest.dataset_id.clone(),
        records,
        class_names: manifest.class_names.clone(),
    })
}
