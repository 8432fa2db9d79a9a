//! Reconstruction losses and anomaly scores.
//!
//! All reductions are means over every element of the `[n, l]` window.

use super::Tensor;
use crate::error::{Error, Result};

fn check_pair(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(what, a.shape(), b.shape()));
    }
    Ok(())
}

/// Sign with `sign(0) = 0`, the subgradient used for every absolute value.
pub(crate) fn sign0(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Huber loss written on the squared residuals `y = (x - x_hat)^2`:
/// `0.5 * y / beta` where `sqrt(y) < beta`, else `sqrt(y) - 0.5 * beta`,
/// averaged over all elements.
pub fn huber_loss(x: &Tensor, x_hat: &Tensor, beta: f64) -> Result<f64> {
    check_pair("huber loss", x, x_hat)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("huber beta must be positive, got {beta}")));
    }
    let total: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let y = (a - b) * (a - b);
            let root = y.sqrt();
            if root < beta {
                0.5 * y / beta
            } else {
                root - 0.5 * beta
            }
        })
        .sum();
    finite(total / x.len() as f64, "huber loss")
}

/// Derivative of [`huber_loss`] with respect to `x` (the negation is the
/// derivative with respect to `x_hat`).
pub(crate) fn huber_grad(x: &Tensor, x_hat: &Tensor, beta: f64) -> Vec<f64> {
    let m = x.len() as f64;
    x.data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let r = a - b;
            if r.abs() < beta {
                r / beta / m
            } else {
                sign0(r) / m
            }
        })
        .collect()
}

/// Anomaly score: mean squared error plus mean absolute error over every
/// element of the window.
pub fn anomaly_score(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    check_pair("anomaly score", x, x_hat)?;
    let total: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let r = a - b;
            r * r + r.abs()
        })
        .sum();
    finite(total / x.len() as f64, "anomaly score")
}

/// Derivative of [`anomaly_score`] with respect to `x`.
pub(crate) fn anomaly_score_grad(x: &Tensor, x_hat: &Tensor) -> Vec<f64> {
    let m = x.len() as f64;
    x.data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let r = a - b;
            (2.0 * r + sign0(r)) / m
        })
        .collect()
}

/// Elementwise (non-averaged) anomaly score `(x - x_hat)^2 + |x - x_hat|`.
pub fn anomaly_score_window(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    check_pair("anomaly score window", x, x_hat)?;
    x.zip_map(x_hat, |a, b| {
        let r = a - b;
        r * r + r.abs()
    })
}

/// Mean absolute difference over all elements.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair("mean absolute difference", a, b)?;
    let total: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    finite(total / a.len() as f64, "mean absolute difference")
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}
