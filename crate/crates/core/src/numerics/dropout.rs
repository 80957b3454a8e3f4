use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Whether stochastic layers are active.
///
/// `Stochastic` is used both for training and for Monte-Carlo sampling at
/// prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Eval,
    Stochastic,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`, else `1/(1-rate)`.
/// `None` means the layer is the identity.
pub fn dropout_mask<R: Rng + ?Sized>(
    shape: &[usize],
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Option<Tensor>> {
    check_rate(rate)?;
    if mode == DropoutMode::Eval || rate == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Ok(Some(Tensor::new(shape.to_vec(), data)?))
}

pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    match dropout_mask(&shape, rate, mode, rng)? {
        Some(mask) => tape.mul_const(x, mask),
        None => Ok(x),
    }
}

/// Dropout applied directly to a tensor, outside any tape.
pub fn dropout_tensor<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Tensor> {
    match dropout_mask(x.shape(), rate, mode, rng)? {
        Some(mask) => Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(mask.data()).map(|(a, b)| a * b).collect(),
        ),
        None => Ok(x.clone()),
    }
}
