//! Finite-difference verification of reverse-mode gradients.

use super::params::{Bindings, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

fn scalar_output(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Maximum relative error between the tape gradient of `f` at `x` and
/// central finite differences, over every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point.clone(), false);
        let out = f(&mut tape, v)?;
        scalar_output(&tape, out)
    };
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    scalar_output(&tape, out)?;
    let analytic = tape.backward(out)?.get_or_zeros(v, x.shape());

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Which parameter coordinates [`grad_check_params`] perturbs.
#[derive(Debug, Clone, Copy)]
pub enum Coordinates {
    All,
    /// At most this many evenly spaced elements per tensor (always including the first and last).
    PerTensor(usize),
}

/// Worst case within one parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest analytic gradient magnitude among the checked coordinates.
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone)]
pub struct ParamCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates_checked: usize,
    pub tensors: Vec<TensorCheck>,
}

/// Gradient check of a scalar function of every tensor in `store`.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    coords: Coordinates,
) -> Result<ParamCheckReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    check_eps(eps)?;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true);
    let out = f(&mut tape, &bound)?;
    scalar_output(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut report = ParamCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates_checked: 0,
        tensors: Vec::new(),
    };
    let mut probe = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let out = f(&mut tape, &bound)?;
        scalar_output(&tape, out)
    };
    for id in store.ids() {
        let n = store.get(id).numel();
        let analytic = grads.get_or_zeros(bound.var(id), store.get(id).shape());
        let picks: Vec<usize> = match coords {
            Coordinates::All => (0..n).collect(),
            Coordinates::PerTensor(k) if k >= n => (0..n).collect(),
            Coordinates::PerTensor(k) => {
                let k = k.max(2);
                let mut v: Vec<usize> = (0..k).map(|i| i * (n - 1) / (k - 1)).collect();
                v.dedup();
                v
            }
        };
        let mut tc = TensorCheck {
            name: store.name(id).to_string(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_abs_grad: 0.0,
        };
        for i in picks {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let fp = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let fm = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let (a, numeric) = (analytic.data()[i], (fp - fm) / (2.0 * eps));
            let err = relative_error(a, numeric);
            tc.max_rel_error = tc.max_rel_error.max(err);
            tc.max_abs_error = tc.max_abs_error.max((a - numeric).abs());
            tc.max_abs_grad = tc.max_abs_grad.max(a.abs());
            report.coordinates_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
        }
        report.tensors.push(tc);
    }
    Ok(report)
}
