//! Temperature scaling: a single scalar `T` dividing the logits, fitted to
//! minimise the negative log-likelihood of labelled validation predictions.

use serde::{Deserialize, Serialize};

use crate::config::Configuration;
use crate::error::{Error, Result};
use crate::ops::log_softmax_at;

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
const T_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub temperature: f64,
    /// NLL at `T = 1`.
    pub nll_before: f64,
    pub nll_after: f64,
    pub iterations: usize,
}

/// Mean negative log-likelihood of `labels` under `softmax(logits / T)`.
pub fn nll(logits: &[Vec<f32>], labels: &[usize], temperature: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| -log_softmax_at(z, temperature, y))
        .sum();
    total / logits.len() as f64
}

/// Golden-section search for the NLL-minimising temperature in
/// `[T_MIN, T_MAX]`.
pub fn fit_temperature(logits: &[Vec<f32>], labels: &[usize]) -> Result<CalibrationFit> {
    if logits.is_empty() {
        return Err(Error::Data("cannot calibrate on zero samples".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::Data(format!(
                "label {y} out of range for {} classes",
                z.len()
            )));
        }
    }
    let f = |t: f64| nll(logits, labels, t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (T_MIN, T_MAX);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iterations = 0;
    while b - a > T_TOLERANCE {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut temperature = 0.5 * (a + b);
    let mut nll_after = f(temperature);
    let nll_before = f(1.0);
    if nll_after > nll_before {
        temperature = 1.0;
        nll_after = nll_before;
    }
    Ok(CalibrationFit {
        temperature,
        nll_before,
        nll_after,
        iterations,
    })
}

/// One temperature for every configuration: the baseline's fit, or the
/// first fit when no baseline is present.
pub fn single_t_policy(fits: &[(&Configuration, CalibrationFit)]) -> Result<f64> {
    fits.iter()
        .find(|(c, _)| c.is_baseline())
        .or_else(|| fits.first())
        .map(|(_, f)| f.temperature)
        .ok_or_else(|| Error::Data("no calibration fits".into()))
}
