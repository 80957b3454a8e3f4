use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::FundusImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionKind {
    /// Small dark-red dot.
    Microaneurysm,
    /// Larger dark blob.
    Hemorrhage,
    /// Bright yellow patch.
    Exudate,
}

/// A circular lesion in generation-resolution pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub kind: LesionKind,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

/// Axis-aligned box in continuous pixel coordinates (pixel `i` spans `[i, i+1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl LesionBox {
    /// Whether the centre of pixel `(x, y)` lies inside.
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        cx >= self.x0 && cx <= self.x1 && cy >= self.y0 && cy <= self.y1
    }
}

impl Lesion {
    /// Bounding box after scaling coordinates by `scale`, grown by `margin` pixels on each side
    /// (in scaled units).
    pub fn bounding_box(&self, scale: f64, margin: f64) -> LesionBox {
        let (x, y, r) = (self.x * scale, self.y * scale, self.radius * scale);
        LesionBox {
            x0: x - r - margin,
            y0: y - r - margin,
            x1: x + r + margin,
            y1: y + r + margin,
        }
    }
}

/// Rendered fundus-like image with its lesions and a per-pixel lesion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFundus {
    pub image: FundusImage,
    pub lesions: Vec<Lesion>,
    /// Row-major `size × size`; `true` on lesion pixels.
    pub mask: Vec<bool>,
    /// Disc centre and radius.
    pub disc: (f64, f64, f64),
}

impl SyntheticFundus {
    pub fn size(&self) -> usize {
        self.image.width()
    }
}

/// Lesion counts (microaneurysms, hemorrhages, exudates) for a grade. Totals
/// occupy disjoint ranges: 0, 2–4, 6–10, 11–15, 17–21.
pub fn lesion_counts<R: Rng + ?Sized>(grade: usize, rng: &mut R) -> [usize; 3] {
    let mut pick = |lo: usize, hi: usize| rng.random_range(lo..=hi);
    match grade {
        0 => [0, 0, 0],
        1 => [pick(2, 4), 0, 0],
        2 => [pick(4, 6), pick(1, 2), pick(1, 2)],
        3 => [pick(6, 8), pick(3, 4), pick(2, 3)],
        _ => [pick(8, 10), pick(5, 6), pick(4, 5)],
    }
}

const FUNDUS: [f64; 3] = [0.78, 0.36, 0.16];
const OPTIC_DISC: [f64; 3] = [0.98, 0.88, 0.62];
const DARK_LESION: [f64; 3] = [0.30, 0.05, 0.03];
const EXUDATE: [f64; 3] = [0.98, 0.92, 0.45];

fn blend(px: &mut [f64; 3], colour: [f64; 3], alpha: f64) {
    for (p, c) in px.iter_mut().zip(colour) {
        *p = *p * (1.0 - alpha) + c * alpha;
    }
}

/// Renders a `size × size` RGB fundus: shaded disc, optic disc, vessels and
/// grade-dependent lesions placed well inside the disc.
pub fn gen_fundus<R: Rng + ?Sized>(grade: usize, size: usize, rng: &mut R) -> Result<SyntheticFundus> {
    if size < 16 {
        return Err(Error::config(format!("synthetic fundus size {size} is below 16")));
    }
    if grade > 4 {
        return Err(Error::contract(format!("grade {grade} outside 0..=4")));
    }
    let s = size as f64;
    let unit = s / 64.0;
    let radius = s * rng.random_range(0.42..0.46);
    let cx = s / 2.0 + rng.random_range(-0.03..0.03) * s;
    let cy = s / 2.0 + rng.random_range(-0.03..0.03) * s;
    let gain = rng.random_range(0.9..1.1);
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (ox, oy) = (cx + side * 0.5 * radius, cy + rng.random_range(-0.08..0.08) * radius);
    let od_r = 0.13 * radius;

    // Vessel weights: max over stamps along curved arcs leaving the optic disc.
    let mut vessel = vec![0.0f64; size * size];
    let arcs = rng.random_range(5..=7);
    for k in 0..arcs {
        let theta = (k as f64 + rng.random_range(0.0..0.8)) * std::f64::consts::TAU / arcs as f64;
        let bend = rng.random_range(-0.9..0.9);
        let width = rng.random_range(0.5..0.8) * unit.max(0.5);
        let len = rng.random_range(0.7..1.1) * radius;
        let steps = (len / 0.4).ceil() as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let a = theta + bend * t;
            let (px, py) = (ox + t * len * a.cos(), oy + t * len * a.sin());
            let reach = (3.0 * width).ceil() as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (x, y) = (px.floor() as isize + dx, py.floor() as isize + dy);
                    if x < 0 || y < 0 || x >= size as isize || y >= size as isize {
                        continue;
                    }
                    let d2 = (x as f64 + 0.5 - px).powi(2) + (y as f64 + 0.5 - py).powi(2);
                    let w = (-d2 / (2.0 * width * width)).exp() * (1.0 - 0.5 * t);
                    let v = &mut vessel[y as usize * size + x as usize];
                    *v = v.max(w);
                }
            }
        }
    }

    let counts = lesion_counts(grade, rng);
    let mut lesions = Vec::new();
    for (kind, n) in [
        (LesionKind::Microaneurysm, counts[0]),
        (LesionKind::Hemorrhage, counts[1]),
        (LesionKind::Exudate, counts[2]),
    ] {
        for _ in 0..n {
            let r = 0.72 * radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let lr = unit
                * match kind {
                    LesionKind::Microaneurysm => rng.random_range(1.8..2.2),
                    LesionKind::Hemorrhage => rng.random_range(2.0..3.0),
                    LesionKind::Exudate => rng.random_range(1.5..2.3),
                };
            lesions.push(Lesion {
                kind,
                x: cx + r * a.cos(),
                y: cy + r * a.sin(),
                radius: lr,
            });
        }
    }

    let noise = Normal::new(0.0, 0.015).expect("valid sd");
    let mut pixels = Vec::with_capacity(size * size * 3);
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
            if d > radius {
                pixels.extend([0.0; 3]);
                continue;
            }
            let shade = gain * (1.0 - 0.35 * (d / radius).powi(2));
            let mut px = FUNDUS.map(|c| c * shade);
            let od = ((fx - ox).powi(2) + (fy - oy).powi(2)).sqrt();
            if od < 2.0 * od_r {
                blend(&mut px, OPTIC_DISC, (-(od / od_r).powi(2)).exp());
            }
            let v = vessel[y * size + x];
            for p in &mut px {
                *p *= 1.0 - 0.5 * v;
            }
            for l in &lesions {
                let ld = ((fx - l.x).powi(2) + (fy - l.y).powi(2)).sqrt();
                if ld <= l.radius {
                    mask[y * size + x] = true;
                }
                let alpha = if ld <= l.radius {
                    1.0
                } else {
                    (-(ld - l.radius).powi(2) / (2.0 * 0.5 * 0.5 * unit.max(0.5))).exp()
                };
                if alpha > 1e-3 {
                    let colour = if l.kind == LesionKind::Exudate { EXUDATE } else { DARK_LESION };
                    blend(&mut px, colour, alpha);
                }
            }
            pixels.extend(px.map(|p| p + noise.sample(rng)));
        }
    }
    // A lesion always marks at least the pixel holding its centre.
    for l in &lesions {
        let (x, y) = (l.x.floor() as usize, l.y.floor() as usize);
        mask[y.min(size - 1) * size + x.min(size - 1)] = true;
    }
    Ok(SyntheticFundus {
        image: FundusImage::new(size, size, 3, pixels)?,
        lesions,
        mask,
        disc: (cx, cy, radius),
    })
}
