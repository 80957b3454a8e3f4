use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::synth::LesionBox;

/// Which output the saliency map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaliencyTarget {
    /// Logit of one grade.
    Class(usize),
    /// Risk head before the sigmoid.
    Risk,
}

/// `max_c |∂score/∂pixel|` over an `[H×W×C]` image, min-max scaled to `[0, 1]`
/// (all zeros when the gradient magnitude is constant).
pub fn saliency_map<F>(image: &Tensor, score: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        ref s => return Err(Error::dim(format!("saliency expects an H×W×C image, got {s:?}"))),
    };
    let mut tape = Tape::new();
    let x = tape.leaf(image.clone(), true);
    let y = score(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let g = grads.get_or_zeros(x, image.shape());
    let mag: Vec<f64> = g
        .data()
        .chunks(c)
        .map(|px| px.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let norm = if range > 0.0 {
        mag.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; mag.len()]
    };
    Tensor::new(vec![h, w], norm)
}

/// Share of the saliency mass held by the top `fraction` of pixels (at least
/// one) that falls on pixels whose centre lies inside any of `boxes`.
/// Returns 0 when the selected pixels carry no mass.
pub fn top_mass_in_boxes(map: &Tensor, boxes: &[LesionBox], fraction: f64) -> Result<f64> {
    let [h, w] = *map.shape() else {
        return Err(Error::dim(format!("saliency map must be H×W, got {:?}", map.shape())));
    };
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("top fraction {fraction} outside (0, 1]")));
    }
    let v = map.data();
    let k = ((fraction * (h * w) as f64).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..h * w).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let (mut total, mut inside) = (0.0, 0.0);
    for &i in &order[..k] {
        total += v[i];
        if boxes.iter().any(|b| b.contains_pixel(i % w, i / w)) {
            inside += v[i];
        }
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_score_gives_scaled_weight_magnitudes() {
        // score = Σ w·x, so the map is max_c |w| rescaled.
        let w = Tensor::new(vec![2, 2, 2], vec![1.0, -3.0, 0.5, 0.25, -2.0, 1.0, 0.0, 0.1]).unwrap();
        let img = Tensor::full(&[2, 2, 2], 0.3);
        let map = saliency_map(&img, |tape, x| {
            let y = tape.mul_const(x, w.clone())?;
            Ok(tape.sum(y))
        })
        .unwrap();
        // Per-pixel max |w|: 3, 0.5, 2, 0.1.
        let expect = [3.0, 0.5, 2.0, 0.1].map(|v: f64| (v - 0.1) / 2.9);
        for (a, b) in map.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(map.data().iter().copied().fold(0.0, f64::max), 1.0);
        assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn top_mass_counts_only_the_brightest_pixels() {
        // 10×10 map: pixel (2,3) = 1.0, (7,7) = 0.5, everything else 0.01.
        let mut data = vec![0.01; 100];
        data[3 * 10 + 2] = 1.0;
        data[7 * 10 + 7] = 0.5;
        let map = Tensor::new(vec![10, 10], data).unwrap();
        let around = |x: f64, y: f64| LesionBox {
            x0: x,
            y0: y,
            x1: x + 1.0,
            y1: y + 1.0,
        };
        // Top 2% is the two peaks.
        let f = top_mass_in_boxes(&map, &[around(2.0, 3.0)], 0.02).unwrap();
        assert!((f - 1.0 / 1.5).abs() < 1e-12);
        let f = top_mass_in_boxes(&map, &[around(2.0, 3.0), around(7.0, 7.0)], 0.02).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
        // Top 3% adds one 0.01 pixel outside both boxes.
        let f = top_mass_in_boxes(&map, &[around(2.0, 3.0), around(7.0, 7.0)], 0.03).unwrap();
        assert!((f - 1.5 / 1.51).abs() < 1e-12);
        assert_eq!(top_mass_in_boxes(&Tensor::zeros(&[4, 4]), &[], 0.1).unwrap(), 0.0);
        assert!(top_mass_in_boxes(&map, &[], 0.0).is_err());
    }

    #[test]
    fn constant_gradient_maps_to_zeros() {
        let img = Tensor::full(&[3, 3, 1], 0.5);
        let map = saliency_map(&img, |tape, x| Ok(tape.sum(x))).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }
}
