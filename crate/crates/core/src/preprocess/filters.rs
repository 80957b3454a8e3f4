use super::image::FundusImage;
use crate::error::{Error, Result};

/// Sampled 1-D Gaussian of radius `ceil(3σ)`, normalised to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Mirror index into `0..n` without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_denoise(img: &FundusImage, sigma: f64) -> Result<FundusImage> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("Gaussian sigma must be positive, got {sigma}")));
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let src = img.pixels();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sx = reflect(x as isize + j as isize - r, w);
                    acc += kv * src[(y * w + sx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + j as isize - r, h);
                    acc += kv * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    FundusImage::new(w, h, c, out)
}

/// Bilinear value at continuous coordinates, edge-clamped.
fn sample_clamped(img: &FundusImage, x: f64, y: f64, ch: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(x0, y0, ch) * (1.0 - fx) + img.get(x1, y0, ch) * fx;
    let bot = img.get(x0, y1, ch) * (1.0 - fx) + img.get(x1, y1, ch) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear resize to `target × target` using pixel-centre alignment.
pub fn resize(img: &FundusImage, target: usize) -> Result<FundusImage> {
    if target == 0 {
        return Err(Error::config("resize target must be positive"));
    }
    if img.width() < 2 || img.height() < 2 {
        return Err(Error::contract("resize source must be at least 2×2"));
    }
    if img.width() == target && img.height() == target {
        return Ok(img.clone());
    }
    let sx = img.width() as f64 / target as f64;
    let sy = img.height() as f64 / target as f64;
    let c = img.channels();
    let mut out = Vec::with_capacity(target * target * c);
    for y in 0..target {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..target {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            for ch in 0..c {
                out.push(sample_clamped(img, fx, fy, ch));
            }
        }
    }
    FundusImage::new(target, target, c, out)
}

/// Variance of the 4-neighbour Laplacian over interior pixels, on a 0–255 scale.
pub fn laplacian_variance(img: &FundusImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    let l: Vec<f64> = img.luminance().iter().map(|v| v * 255.0).collect();
    let mut resp = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            resp.push(l[i - w] + l[i + w] + l[i - 1] + l[i + 1] - 4.0 * l[i]);
        }
    }
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn kernel_is_normalised_with_radius_three_sigma() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blur_keeps_constants() {
        let img = FundusImage::filled(9, 7, 3, 0.42).unwrap();
        let out = gaussian_denoise(&img, 1.5).unwrap();
        assert!(out.pixels().iter().all(|v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn impulse_response_is_the_sampled_gaussian() {
        let n = 21;
        let img = FundusImage::gray_from_fn(n, n, |x, y| if x == 10 && y == 10 { 1.0 } else { 0.0 }).unwrap();
        let out = gaussian_denoise(&img, 1.5).unwrap();
        // Direct evaluation of exp(-(dx²+dy²)/2σ²), normalised over the kernel support.
        let r = 5i32;
        let raw = |dx: i32, dy: i32| (-f64::from(dx * dx + dy * dy) / 4.5).exp();
        let z: f64 = (-r..=r).flat_map(|dx| (-r..=r).map(move |dy| raw(dx, dy))).sum();
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as i32 - 10, y as i32 - 10);
                let expect = if dx.abs() <= r && dy.abs() <= r { raw(dx, dy) / z } else { 0.0 };
                assert!((out.get(x, y, 0) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_reduces_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let px: Vec<f64> = (0..32 * 32).map(|_| rng.random::<f64>()).collect();
        let noisy = FundusImage::new(32, 32, 1, px).unwrap();
        let out = gaussian_denoise(&noisy, 1.5).unwrap();
        assert!(variance(out.pixels()) < variance(noisy.pixels()));
        assert!(gaussian_denoise(&noisy, 0.0).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = FundusImage::gray_from_fn(12, 12, |x, y| (x * y) as f64 / 121.0).unwrap();
        assert_eq!(resize(&img, 12).unwrap(), img);
        let c = FundusImage::filled(13, 7, 3, 0.6).unwrap();
        let out = resize(&c, 5).unwrap();
        assert!(out.pixels().iter().all(|v| (v - 0.6).abs() < 1e-12));
        assert!(resize(&img, 0).is_err());
        assert!(resize(&FundusImage::filled(1, 4, 1, 0.0).unwrap(), 4).is_err());
    }

    #[test]
    fn checkerboard_upsample_matches_hand_weights() {
        // Source [[1,0],[0,1]]; destination centres map to source coordinates
        // -0.25, 0.25, 0.75, 1.25 (clamped to 0 and 1 at the ends).
        let img = FundusImage::new(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = resize(&img, 4).unwrap();
        let coord = [0.0, 0.25, 0.75, 1.0];
        for (y, &fy) in coord.iter().enumerate() {
            for (x, &fx) in coord.iter().enumerate() {
                let expect = (1.0 - fx) * (1.0 - fy) + fx * fy;
                assert!((out.get(x, y, 0) - expect).abs() < 1e-15, "({x},{y})");
            }
        }
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert!((out.get(1, 0, 0) - 0.75).abs() < 1e-15);
        assert!((out.get(1, 1, 0) - 0.625).abs() < 1e-15);
    }

    fn checkerboard(n: usize) -> FundusImage {
        FundusImage::gray_from_fn(n, n, |x, y| ((x + y) % 2) as f64).unwrap()
    }

    #[test]
    fn laplacian_variance_oracles() {
        assert_eq!(laplacian_variance(&FundusImage::filled(8, 8, 1, 0.5).unwrap()), 0.0);
        // Interior responses of a 0/255 checkerboard are ±1020 with equal counts
        // on an even interior, so the variance is 1020².
        let sharp = laplacian_variance(&checkerboard(10));
        assert!((sharp - 1020.0f64.powi(2)).abs() < 1e-6, "{sharp}");
        assert!(sharp > 100.0);
        let blurred = laplacian_variance(&gaussian_denoise(&checkerboard(10), 8.0).unwrap());
        assert!(blurred < sharp);
    }
}
