//! Building a [`DatasetManifest`] from a class-per-directory image tree.

use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use vitbench_core::data::{ClassMap, DatasetManifest, RawEntry};
use vitbench_core::exec::Executor;
use vitbench_core::Tensor;

use crate::error::{IoContext, Result};
use crate::imageio::{decode_and_resize, probe};

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "bmp"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

/// Files found under the root that did not make it into the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkipReport {
    pub skipped: Vec<Skipped>,
    /// Files whose name did not match the group pattern and became their own group.
    pub ungrouped: Vec<String>,
}

/// Group key for a file name: capture group 1 of `pattern` (or the whole
/// match when the pattern has no groups); `None` when it does not match.
pub fn group_key(pattern: &Regex, file_name: &str) -> Option<String> {
    let caps = pattern.captures(file_name)?;
    let m = caps.get(1).or_else(|| caps.get(0))?;
    (!m.as_str().is_empty()).then(|| m.as_str().to_string())
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(path)
        .at(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .at(path)?;
    entries.sort();
    Ok(entries)
}

/// Scan `root/<class>/<image>`; sample paths are stored relative to `root`.
///
/// Without a group pattern every image is its own group.
pub fn build_manifest(root: &Path, class_map: &ClassMap, group_pattern: Option<&Regex>) -> Result<(DatasetManifest, SkipReport)> {
    let mut entries = Vec::new();
    let mut report = SkipReport::default();
    for dir in sorted_dir(root)? {
        let rel_dir = dir.strip_prefix(root).unwrap_or(&dir).to_string_lossy().into_owned();
        if !dir.is_dir() {
            report.skipped.push(Skipped { path: rel_dir, reason: "not a class directory".into() });
            continue;
        }
        let class = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !class_map.contains_key(&class) {
            return Err(vitbench_core::Error::Dataset(format!("class directory {class:?} is not in the class map")).into());
        }
        for file in sorted_dir(&dir)? {
            let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let rel = format!("{class}/{name}");
            let ext = file.extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
            if file.is_dir() || !ext.as_deref().is_some_and(|e| IMAGE_EXTENSIONS.contains(&e)) {
                report.skipped.push(Skipped { path: rel, reason: "not a PNG/BMP file".into() });
                continue;
            }
            if let Err(e) = probe(&file) {
                report.skipped.push(Skipped { path: rel, reason: e.to_string() });
                continue;
            }
            let group_id = match group_pattern {
                None => rel.clone(),
                Some(p) => group_key(p, &name).unwrap_or_else(|| {
                    report.ungrouped.push(rel.clone());
                    rel.clone()
                }),
            };
            entries.push(RawEntry { path: rel, raw_label: class.clone(), group_id });
        }
    }
    let manifest = DatasetManifest::from_entries(entries, class_map)?;
    Ok((manifest, report))
}

/// Decode every sample at `size × size`, in manifest order.
pub fn load_images<E: Executor>(exec: &E, root: &Path, manifest: &DatasetManifest, size: usize) -> Result<Vec<Tensor>> {
    exec.map(&manifest.samples, |s| decode_and_resize(&root.join(&s.path), size))
        .into_iter()
        .collect()
}
