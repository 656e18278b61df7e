//! Central finite-difference gradient checking.
//!
//! Both sides run the same generic code in `f64`: the analytic gradient
//! through the tape's backward pass, the numeric one by central
//! differences. Single-precision rounding would otherwise dominate both the
//! difference quotient and long cancelling gradient sums.

use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// A scalar-valued function of one tensor, evaluable at any precision.
pub trait ScalarFn {
    fn eval<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var>;
}

/// Denominator floor for the relative error. Components whose analytic and
/// numeric magnitudes are both below it are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the component with the largest error.
    pub worst_index: usize,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / scale
}

fn evaluate<F: ScalarFn + ?Sized, T: Real>(f: &F, x: Tensor<T>) -> Result<f64> {
    let mut g = Graph::<T>::new();
    let xv = g.leaf(x)?;
    let y = f.eval(&mut g, xv)?;
    let out = g.value(y);
    if out.len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    Ok(out.data()[0].as_f64())
}

/// Analytic gradient of `f` at `x`, with the graph built at precision `T`.
pub fn analytic_gradient<T: Real, F: ScalarFn + ?Sized>(
    f: &F,
    x: &Tensor<f32>,
) -> Result<Vec<f64>> {
    let mut g = Graph::<T>::new();
    let xv = g.param(x.cast())?;
    let y = f.eval(&mut g, xv)?;
    if g.value(y).len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            g.shape(y)
        )));
    }
    g.backward(y)?;
    Ok(match g.grad(xv) {
        Some(gr) => gr.iter().map(|v| v.as_f64()).collect(),
        None => vec![0.0; x.len()],
    })
}

/// Checks every component of the gradient.
pub fn grad_check<F: ScalarFn + ?Sized>(
    f: &F,
    x: &Tensor<f32>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, &all, h, tol)
}

/// Checks the listed flat components only; used when a full sweep over a
/// large parameter would dominate test time.
pub fn grad_check_at<F: ScalarFn + ?Sized>(
    f: &F,
    x: &Tensor<f32>,
    indices: &[usize],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradient::<f64, F>(f, x)?;
    let base: Tensor<f64> = x.cast();
    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0;
    for &i in indices {
        let mut plus = base.clone();
        plus.data_mut()[i] += h;
        let mut minus = base.clone();
        minus.data_mut()[i] -= h;
        let numeric = (evaluate(f, plus)? - evaluate(f, minus)?) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > max_rel_err || err.is_nan() {
            max_rel_err = err;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_index,
        checked: indices.len(),
        tol,
        passed: max_rel_err < tol,
    })
}
