//! Temperature scaling and expected calibration error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{log_softmax2, Label, LogitPair, ProbPair};

/// Smallest validation set [`fit_temperature`] accepts.
pub const MIN_VALIDATION: usize = 10;
pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
/// Golden-section stopping width, in log-temperature.
pub const SEARCH_TOL: f64 = 1e-4;
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const IDENTITY: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(Error::BadTemperature(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(t: f64) -> Result<Self> {
        Temperature::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

pub fn apply_temperature(z: LogitPair, t: Temperature) -> ProbPair {
    LogitPair::new(z.0[0] / t.0, z.0[1] / t.0).softmax()
}

/// Mean negative log-likelihood of `y` under `softmax(z / t)`.
pub fn nll_at(z: &[LogitPair], y: &[Label], t: f64) -> f64 {
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(z, y)| -log_softmax2([z.0[0] / t, z.0[1] / t])[y.index()])
        .sum();
    total / z.len() as f64
}

/// Temperature minimising validation NLL, by golden-section search on
/// `log T` over `[log T_MIN, log T_MAX]`.
pub fn fit_temperature(z: &[LogitPair], y: &[Label]) -> Result<Temperature> {
    if z.len() != y.len() {
        return Err(Error::dim(z.len(), y.len()));
    }
    if z.len() < MIN_VALIDATION {
        return Err(Error::EmptyValidation(MIN_VALIDATION));
    }
    if y.iter().all(|l| *l == y[0]) {
        return Err(Error::SingleClass);
    }
    let f = |log_t: f64| nll_at(z, y, log_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (T_MIN.ln(), T_MAX.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > SEARCH_TOL {
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
    let mid = (a + b) / 2.0;
    // unimodality is not guaranteed; never return something worse than T = 1
    let best = if f(mid) <= f(0.0) { mid } else { 0.0 };
    Temperature::new(best.exp())
}

/// Equal-width bins over the max-class probability; empty bins are skipped.
pub fn expected_calibration_error(p: &[ProbPair], y: &[Label], bins: usize) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::dim(p.len(), y.len()));
    }
    if bins == 0 {
        return Err(Error::Config("ECE needs at least one bin".into()));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    for (pi, yi) in p.iter().zip(y) {
        let c = pi.confidence();
        let b = ((c * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        if pi.argmax() == *yi {
            correct[b] += 1;
        }
    }
    let n = p.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let k = count[b] as f64;
            (k / n) * (correct[b] as f64 / k - conf[b] / k).abs()
        })
        .sum())
}
