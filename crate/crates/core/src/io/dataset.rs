use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::tables::{read_biomarkers, read_manifest, ManifestRow, BIOMARKER_FILE};
use crate::error::{Error, Result};
use crate::preprocess::{quality_check, FundusImage, PreprocessConfig};
use crate::training::Sample;

/// One line of the blur rejection report: `path,laplacian_variance,accepted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub path: PathBuf,
    pub laplacian_variance: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub quality: Vec<QualityRow>,
}

impl Dataset {
    pub fn rejected(&self) -> usize {
        self.quality.iter().filter(|q| !q.accepted).count()
    }
}

/// Resolves a manifest image path against the manifest's directory.
pub fn resolve_image(manifest: &Path, row: &ManifestRow) -> PathBuf {
    if row.image_path.is_absolute() {
        row.image_path.clone()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(&row.image_path)
    }
}

/// Reads a manifest and its sibling biomarker table, drops blurry images
/// (judged on the raw image) and enhances the rest into model-ready samples.
pub fn load_dataset(manifest: &Path, pre: &PreprocessConfig, time_scale: f64) -> Result<Dataset> {
    let rows = read_manifest(manifest)?;
    let bm_path = manifest.parent().unwrap_or(Path::new(".")).join(BIOMARKER_FILE);
    let biomarkers = read_biomarkers(&bm_path)?;
    let mut samples = Vec::with_capacity(rows.len());
    let mut quality = Vec::with_capacity(rows.len());
    for row in &rows {
        let path = resolve_image(manifest, row);
        let raw = FundusImage::load(&path)?;
        let q = quality_check(&raw, pre);
        quality.push(QualityRow {
            path: path.clone(),
            laplacian_variance: q.laplacian_variance,
            accepted: q.accepted,
        });
        if !q.accepted {
            warn!(
                "skipping blurry image path={} laplacian_variance={:.3}",
                path.display(),
                q.laplacian_variance
            );
            continue;
        }
        let series = biomarkers.get(&row.patient_id).ok_or_else(|| {
            Error::Format(format!("{}: no biomarkers for patient {}", bm_path.display(), row.patient_id))
        })?;
        let mut s = Sample::build(row.patient_id.clone(), &raw, series, &row.metadata(), row.grade, pre, time_scale)?;
        s.risk = row.risk;
        s.progression_months = row.progression_months;
        s.event = row.event;
        samples.push(s);
    }
    Ok(Dataset { samples, quality })
}
