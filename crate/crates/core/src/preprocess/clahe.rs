//! Contrast-limited adaptive histogram equalisation on the luminance plane.

use super::image::FundusImage;
use super::PreprocessConfig;

const BINS: usize = 256;

fn to_bin(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Clipped, redistributed cumulative mapping of one tile, scaled to `[0, 1]`.
fn tile_lut(hist: &mut [f64; BINS], area: f64, clip: f64) -> [f64; BINS] {
    let limit = (clip * area / BINS as f64).max(1.0);
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / BINS as f64;
    let mut lut = [0.0; BINS];
    let mut cdf = 0.0;
    for (l, h) in lut.iter_mut().zip(hist.iter()) {
        cdf += h + share;
        *l = (cdf / area).min(1.0);
    }
    lut
}

/// Equalises a single plane of `w × h` values with a `gx × gy` tile grid.
pub(crate) fn clahe_plane(plane: &[f64], w: usize, h: usize, grid: (usize, usize), clip: f64) -> Vec<f64> {
    let (mut gx, mut gy) = grid;
    if w < gx || h < gy {
        gx = 1;
        gy = 1;
    }
    let tw = w.div_ceil(gx);
    let th = h.div_ceil(gy);
    let area = (tw * th) as f64;

    // Tiles past the image border replicate the edge pixels.
    let mut luts = vec![[0.0; BINS]; gx * gy];
    for ty in 0..gy {
        for tx in 0..gx {
            let mut hist = [0.0; BINS];
            for y in ty * th..(ty + 1) * th {
                let sy = y.min(h - 1);
                for x in tx * tw..(tx + 1) * tw {
                    let sx = x.min(w - 1);
                    hist[to_bin(plane[sy * w + sx])] += 1.0;
                }
            }
            luts[ty * gx + tx] = tile_lut(&mut hist, area, clip);
        }
    }

    // Bilinear blend of the four surrounding tile mappings, anchored at tile centres.
    let neighbours = |pos: f64, tile: usize, count: usize| -> (usize, usize, f64) {
        let t = pos / tile as f64 - 0.5;
        if t <= 0.0 {
            (0, 0, 0.0)
        } else if t >= (count - 1) as f64 {
            (count - 1, count - 1, 0.0)
        } else {
            let lo = t.floor() as usize;
            (lo, lo + 1, t - lo as f64)
        }
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1, fy) = neighbours(y as f64 + 0.5, th, gy);
        for x in 0..w {
            let (x0, x1, fx) = neighbours(x as f64 + 0.5, tw, gx);
            let b = to_bin(plane[y * w + x]);
            let v00 = luts[y0 * gx + x0][b];
            let v01 = luts[y0 * gx + x1][b];
            let v10 = luts[y1 * gx + x0][b];
            let v11 = luts[y1 * gx + x1][b];
            let top = if fx == 0.0 { v00 } else { v00 * (1.0 - fx) + v01 * fx };
            let bot = if fx == 0.0 { v10 } else { v10 * (1.0 - fx) + v11 * fx };
            let v = if fy == 0.0 { top } else { top * (1.0 - fy) + bot * fy };
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// CLAHE with `cfg.clahe_clip` and `cfg.clahe_grid`, applied to luminance and
/// recombined so chromaticity is kept.
pub fn clahe(img: &FundusImage, cfg: &PreprocessConfig) -> FundusImage {
    let luma = img.luminance();
    let eq = clahe_plane(
        &luma,
        img.width(),
        img.height(),
        (cfg.clahe_grid[0], cfg.clahe_grid[1]),
        cfg.clahe_clip,
    );
    img.with_luminance(&eq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entropy(values: &[f64]) -> f64 {
        let mut hist = [0usize; BINS];
        for &v in values {
            hist[(v * 255.0).round() as usize] += 1;
        }
        let n = values.len() as f64;
        hist.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    }

    fn cfg(clip: f64, grid: usize) -> PreprocessConfig {
        PreprocessConfig {
            clahe_clip: clip,
            clahe_grid: [grid, grid],
            ..Default::default()
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = FundusImage::filled(40, 24, 1, 0.37).unwrap();
        let out = clahe(&img, &cfg(2.0, 8));
        let first = out.pixels()[0];
        assert!(out.pixels().iter().all(|&v| (v - first).abs() < 1e-12));
    }

    #[test]
    fn low_contrast_ramp_gains_entropy() {
        let img = FundusImage::gray_from_fn(64, 64, |x, y| 0.40 + 0.10 * (x + y) as f64 / 126.0).unwrap();
        let out = clahe(&img, &cfg(2.0, 8));
        assert!(entropy(out.pixels()) >= entropy(img.pixels()));
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn single_tile_without_clipping_is_global_equalisation() {
        // Global HE oracle: v -> cdf(bin(v)) / N.
        let img = FundusImage::gray_from_fn(10, 10, |x, y| if (x * 7 + y * 3) % 5 < 2 { 0.2 } else { 0.8 }).unwrap();
        let mut counts = [0usize; BINS];
        for &v in img.pixels() {
            counts[(v * 255.0).round() as usize] += 1;
        }
        let cdf: Vec<f64> = counts
            .iter()
            .scan(0usize, |s, &c| {
                *s += c;
                Some(*s as f64 / 100.0)
            })
            .collect();
        let out = clahe(&img, &cfg(1e6, 1));
        for (o, v) in out.pixels().iter().zip(img.pixels()) {
            assert!((o - cdf[(v * 255.0).round() as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_images_fall_back_to_one_tile() {
        let img = FundusImage::gray_from_fn(4, 3, |x, y| (x + y) as f64 / 5.0).unwrap();
        let a = clahe(&img, &cfg(2.0, 8));
        let b = clahe(&img, &cfg(2.0, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn rgb_is_equalised_on_luminance_deterministically() {
        let img = FundusImage::new(
            16,
            16,
            3,
            (0..16 * 16 * 3).map(|i| 0.3 + 0.2 * ((i * 37 % 101) as f64 / 101.0)).collect(),
        )
        .unwrap();
        let a = clahe(&img, &cfg(2.0, 4));
        let b = clahe(&img, &cfg(2.0, 4));
        assert_eq!(a, b);
        assert_eq!(a.channels(), 3);
    }
}
