use rand::Rng;

use super::image::FundusImage;
use super::PreprocessConfig;

/// One draw of the stochastic augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub flip: bool,
    pub brightness: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        rotation_deg: 0.0,
        flip: false,
        brightness: 1.0,
    };

    /// Rotation uniform in `±rot_limit_deg`, a fair-coin horizontal flip, and a
    /// brightness factor uniform in `1 ± brightness_limit`.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, cfg: &PreprocessConfig) -> Self {
        let r = cfg.rot_limit_deg;
        let b = cfg.brightness_limit;
        Self {
            rotation_deg: rng.random_range(-r..=r),
            flip: rng.random_bool(0.5),
            brightness: rng.random_range(1.0 - b..=1.0 + b),
        }
    }

    pub fn apply(&self, img: &FundusImage) -> FundusImage {
        let mut out = if self.rotation_deg == 0.0 {
            img.clone()
        } else {
            rotate(img, self.rotation_deg)
        };
        if self.flip {
            out = flip_horizontal(&out);
        }
        if self.brightness != 1.0 {
            let f = self.brightness;
            out = out.map(|v| v * f);
        }
        out
    }
}

/// Draws and applies one random augmentation.
pub fn augment<R: Rng + ?Sized>(img: &FundusImage, rng: &mut R, cfg: &PreprocessConfig) -> FundusImage {
    AugmentParams::draw(rng, cfg).apply(img)
}

pub(crate) fn flip_horizontal(img: &FundusImage) -> FundusImage {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.set(x, y, ch, img.get(w - 1 - x, y, ch));
            }
        }
    }
    out
}

/// Rotation about the image centre by inverse bilinear mapping; samples that
/// fall outside the source read as black.
fn rotate(img: &FundusImage, deg: f64) -> FundusImage {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, co) = deg.to_radians().sin_cos();
    let texel = |x: isize, y: isize, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            img.get(x as usize, y as usize, ch)
        }
    };
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = co * dx + s * dy + cx;
            let sy = -s * dx + co * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = texel(x0, y0, ch) * (1.0 - fx) + texel(x0 + 1, y0, ch) * fx;
                let bot = texel(x0, y0 + 1, ch) * (1.0 - fx) + texel(x0 + 1, y0 + 1, ch) * fx;
                out.set(x, y, ch, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}
