//! Fundus image enhancement, quality filtering, normalisation and augmentation.

mod augment;
mod clahe;
mod filters;
mod image;

use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentParams};
pub use clahe::clahe;
pub use filters::{gaussian_denoise, gaussian_kernel, laplacian_variance, resize};
pub use image::{FundusImage, LUMA};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub clahe_clip: f64,
    /// Tile counts along x and y.
    pub clahe_grid: [usize; 2],
    pub denoise_sigma: f64,
    pub target_size: usize,
    /// Laplacian variance below this marks an image as blurry.
    pub blur_threshold: f64,
    pub rot_limit_deg: f64,
    /// Brightness factors are drawn from `[1 - limit, 1 + limit]`.
    pub brightness_limit: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            clahe_clip: 2.0,
            clahe_grid: [8, 8],
            denoise_sigma: 1.5,
            target_size: 224,
            blur_threshold: 100.0,
            rot_limit_deg: 15.0,
            brightness_limit: 0.2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clahe_clip", self.clahe_clip),
            ("denoise_sigma", self.denoise_sigma),
            ("blur_threshold", self.blur_threshold),
            ("rot_limit_deg", self.rot_limit_deg),
            ("brightness_limit", self.brightness_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.clahe_grid.contains(&0) || self.target_size == 0 {
            return Err(Error::config("clahe_grid and target_size must be positive"));
        }
        if self.brightness_limit >= 1.0 {
            return Err(Error::config("brightness_limit must be below 1"));
        }
        Ok(())
    }
}

/// Deterministic enhancement chain: CLAHE, Gaussian denoise, resize.
///
/// Augmentation is a separate, training-only step (see [`augment`]).
pub fn enhance(img: &FundusImage, cfg: &PreprocessConfig) -> Result<FundusImage> {
    let eq = clahe(img, cfg);
    let smooth = gaussian_denoise(&eq, cfg.denoise_sigma)?;
    resize(&smooth, cfg.target_size)
}

/// Blur verdict for one image, computed on the unprocessed input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityCheck {
    pub laplacian_variance: f64,
    pub accepted: bool,
}

pub fn quality_check(img: &FundusImage, cfg: &PreprocessConfig) -> QualityCheck {
    let v = laplacian_variance(img);
    QualityCheck {
        laplacian_variance: v,
        accepted: v >= cfg.blur_threshold,
    }
}

/// Scales a series onto `[0, 1]`; a constant series maps to zeros.
pub fn minmax_normalize(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::contract("cannot normalise an empty series"));
    }
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite("series contains non-finite values".into()));
    }
    let range = hi - lo;
    if range == 0.0 {
        return Ok(vec![0.0; series.len()]);
    }
    Ok(series.iter().map(|v| (v - lo) / range).collect())
}
