use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Interleaved image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FundusImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl FundusImage {
    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, mut pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim("image extents must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::dim(format!("{channels} channels; expected 1 or 3")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::dim(format!(
                "{}×{}×{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("pixel value {v}")));
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Grayscale image from a per-pixel function.
    pub fn gray_from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut px = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                px.push(f(x, y));
            }
        }
        Self::new(width, height, 1, px)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    /// Luminance plane (the image itself when grayscale).
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        self.pixels
            .chunks(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect()
    }

    /// Replaces luminance with `luma`, keeping each pixel's chromaticity by
    /// scaling its channels by `new/old` (clamped to `[0, 1]`).
    pub fn with_luminance(&self, luma: &[f64]) -> Self {
        debug_assert_eq!(luma.len(), self.width * self.height);
        let mut out = self.clone();
        if self.channels == 1 {
            out.pixels = luma.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            return out;
        }
        let old = self.luminance();
        for ((p, &o), &n) in out.pixels.chunks_mut(3).zip(&old).zip(luma) {
            if o > 1e-12 {
                let r = n / o;
                for c in p.iter_mut() {
                    *c = (*c * r).clamp(0.0, 1.0);
                }
            } else {
                p.fill(n.clamp(0.0, 1.0));
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.pixels {
            *p = f(*p).clamp(0.0, 1.0);
        }
        out
    }

    /// `[H × W × C]` tensor of the pixel values.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, self.channels], self.pixels.clone())
            .expect("image extents are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [h, w, c] => Self::new(w, h, c, t.data().to_vec()),
            ref s => Err(Error::dim(format!("expected H×W×C tensor, got {s:?}"))),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    /// Loads PNG or PPM/PGM; 8-bit values are scaled to `[0, 1]`.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, bytes) = if img.color().has_color() {
            (3, img.to_rgb8().into_raw())
        } else {
            (1, img.to_luma8().into_raw())
        };
        Self::new(w, h, channels, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    /// Encodes as PNG, or as binary PPM/PGM when the extension is `ppm`/`pgm`.
    pub fn encode(&self, path: &Path) -> Result<Vec<u8>> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        let bytes = self.to_bytes();
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        let mut out = Vec::new();
        let err = |e: image::ImageError| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let (w, h) = (self.width as u32, self.height as u32);
        if ext == "ppm" || ext == "pgm" || ext == "pnm" {
            use image::ImageEncoder;
            image::codecs::pnm::PnmEncoder::new(&mut out)
                .write_image(&bytes, w, h, color)
                .map_err(err)?;
        } else {
            use image::ImageEncoder;
            image::codecs::png::PngEncoder::new(&mut out)
                .write_image(&bytes, w, h, color)
                .map_err(err)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode(path)?;
        crate::io::write_atomic(path, &bytes)
    }
}
