//! Corpus ingestion: a JSON (or CSV) manifest of geotagged facade images is
//! extracted in parallel, a vocabulary tree is built over the descriptors
//! and a `DatabaseIndex` plus an ingest report are produced.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use lrsift_core::features::{extract_lowrank_sift, select_features};
use lrsift_core::{DatabaseIndex, FeatureSet, GeoTag, PipelineConfig, VocabTree};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::load_image;

/// One manifest record: image path plus its geotag and an optional label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub latitude: f64,
    pub longitude: f64,
    #[serde(default)]
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ManifestEntry {
    pub fn geotag(&self) -> Result<GeoTag> {
        GeoTag::new(self.latitude, self.longitude, self.source_id.clone()).map_err(|e| {
            CliError::Validation(format!("manifest entry '{}': {e}", self.path))
        })
    }
}

/// Load a manifest. `.csv` files need a header row with at least
/// `path,latitude,longitude`; anything else is parsed as a JSON array.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let entries = if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        parse_csv_manifest(path, &text)?
    } else {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("manifest {}: {e}", path.display())))?
    };
    validate_manifest(&entries)?;
    Ok(entries)
}

fn parse_csv_manifest(path: &Path, text: &str) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("manifest {}: {e}", path.display())))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ci_path), Some(ci_lat), Some(ci_lon)) =
        (col("path"), col("latitude"), col("longitude"))
    else {
        return Err(CliError::Validation(format!(
            "manifest {}: CSV header must contain path, latitude, longitude",
            path.display()
        )));
    };
    let ci_src = col("source_id");
    let ci_label = col("label");
    let mut entries = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Validation(format!("manifest {}: {e}", path.display())))?;
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| {
                CliError::Validation(format!(
                    "manifest {}: row {}: non-numeric coordinate '{}'",
                    path.display(),
                    line + 2,
                    field(i)
                ))
            })
        };
        entries.push(ManifestEntry {
            path: field(ci_path),
            latitude: num(ci_lat)?,
            longitude: num(ci_lon)?,
            source_id: ci_src.map(field).unwrap_or_default(),
            label: ci_label.map(field).filter(|s| !s.is_empty()),
        });
    }
    Ok(entries)
}

pub fn validate_manifest(entries: &[ManifestEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(CliError::Validation("empty manifest".into()));
    }
    let mut seen = BTreeSet::new();
    for e in entries {
        if !seen.insert(e.path.as_str()) {
            return Err(CliError::Validation(format!(
                "manifest entry '{}': duplicate path",
                e.path
            )));
        }
        e.geotag()?;
    }
    Ok(())
}

/// Per-image ingest outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageReport {
    pub path: String,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub keypoints: usize,
    pub features: usize,
    /// Features remaining after database-side selection (equals `features`
    /// when selection is off).
    pub selected: usize,
    pub degenerate_dropped: usize,
    pub tilt_solves: usize,
    pub non_converged_blocks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub images: Vec<ImageReport>,
    pub indexed_images: usize,
    pub total_features: usize,
    pub total_tilt_solves: usize,
}

/// Run the full ingest: parallel per-image extraction, tree build, index
/// construction. Unreadable images are skipped with a warning in the
/// report; at least two images must survive.
pub fn ingest_entries(
    base_dir: &Path,
    entries: &[ManifestEntry],
    config: &PipelineConfig,
) -> Result<(DatabaseIndex, IngestReport)> {
    validate_manifest(entries)?;
    config.validate()?;
    let results: Vec<(ImageReport, Option<(FeatureSet, GeoTag)>)> = entries
        .par_iter()
        .map(|entry| ingest_one(base_dir, entry, config))
        .collect::<Result<Vec<_>>>()?;
    let mut images = Vec::with_capacity(results.len());
    let mut sets: Vec<(FeatureSet, GeoTag)> = Vec::new();
    for (report, set) in results {
        images.push(report);
        if let Some(pair) = set {
            sets.push(pair);
        }
    }
    if sets.len() < 2 {
        return Err(CliError::Validation(format!(
            "only {} readable image(s); need at least 2 to build an index",
            sets.len()
        )));
    }
    let feature_sets: Vec<FeatureSet> = sets.iter().map(|(fs, _)| fs.clone()).collect();
    let tree = VocabTree::build(
        &feature_sets,
        config.tree_branch,
        config.tree_depth,
        config.seed,
    )?;
    let index = DatabaseIndex::build(tree, &sets)?;
    let report = IngestReport {
        indexed_images: sets.len(),
        total_features: images.iter().map(|r| r.selected).sum(),
        total_tilt_solves: images.iter().map(|r| r.tilt_solves).sum(),
        images,
    };
    Ok((index, report))
}

fn ingest_one(
    base_dir: &Path,
    entry: &ManifestEntry,
    config: &PipelineConfig,
) -> Result<(ImageReport, Option<(FeatureSet, GeoTag)>)> {
    let tag = entry.geotag()?;
    let mut report = ImageReport {
        path: entry.path.clone(),
        skipped: false,
        warning: None,
        keypoints: 0,
        features: 0,
        selected: 0,
        degenerate_dropped: 0,
        tilt_solves: 0,
        non_converged_blocks: 0,
    };
    let full = resolve(base_dir, &entry.path);
    let img = match load_image(&full) {
        Ok(img) => img,
        Err(e) => {
            report.skipped = true;
            report.warning = Some(e.to_string());
            return Ok((report, None));
        }
    };
    let (fs, diag) = match extract_lowrank_sift(&img, &entry.path, config) {
        Ok(r) => r,
        Err(e) => {
            // bad individual images degrade to a skip, not an aborted ingest
            report.skipped = true;
            report.warning = Some(e.to_string());
            return Ok((report, None));
        }
    };
    report.keypoints = diag.keypoints_detected;
    report.features = fs.features.len();
    report.degenerate_dropped = diag.degenerate_dropped;
    report.tilt_solves = diag.tilt_solves;
    report.non_converged_blocks = diag.non_converged_blocks;
    let fs = if config.select_database_features {
        select_features(&fs, config.rank_min, config.rank_max)?
    } else {
        fs
    };
    report.selected = fs.features.len();
    Ok((report, Some((fs, tag))))
}

fn resolve(base_dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Manifest-path front end: resolves image paths against the manifest's
/// directory.
pub fn ingest(
    manifest_path: impl AsRef<Path>,
    config: &PipelineConfig,
) -> Result<(DatabaseIndex, IngestReport)> {
    let manifest_path = manifest_path.as_ref();
    let entries = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    ingest_entries(base, &entries, config)
}
