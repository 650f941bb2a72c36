//! Decision-flip metrics: perturbation flip rate, threshold flip rate and
//! decision-boundary width. A score is a positive decision iff `score >= tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::check_len;

/// Threshold band over which `band_max_tfr` is reported.
pub const CLINICAL_BAND: (f64, f64) = (0.30, 0.70);

#[inline]
fn decide(score: f64, tau: f64) -> bool {
    score >= tau
}

/// Fraction of rows whose thresholded decision differs between the
/// baseline and perturbed score vectors.
pub fn pfr(base: &[f64], perturbed: &[f64], tau: f64) -> Result<f64> {
    check_len("pfr", base.len(), perturbed.len())?;
    if base.is_empty() {
        return Err(Error::Shape("pfr of empty score vectors".into()));
    }
    let flips = base
        .iter()
        .zip(perturbed)
        .filter(|(b, p)| decide(**b, tau) != decide(**p, tau))
        .count();
    Ok(flips as f64 / base.len() as f64)
}

/// Mean flip rate across a perturbation battery.
pub fn pss(pfrs: &[f64]) -> Result<f64> {
    if pfrs.is_empty() {
        return Err(Error::InvalidConfig("perturbation battery is empty".into()));
    }
    Ok(pfrs.iter().sum::<f64>() / pfrs.len() as f64)
}

/// Fraction of rows reclassified when the threshold moves from `tau0` to `tau`.
pub fn tfr(scores: &[f64], tau: f64, tau0: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let flips = scores
        .iter()
        .filter(|&&s| decide(s, tau0) != decide(s, tau))
        .count();
    flips as f64 / scores.len() as f64
}

/// The 17-point sweep `0.10, 0.15, ..., 0.90`.
pub fn default_sweep() -> Vec<f64> {
    (0..17).map(|k| f64::from(10 + 5 * k) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfrProfile {
    pub tau0: f64,
    pub thresholds: Vec<f64>,
    pub tfr: Vec<f64>,
    pub max_tfr: f64,
    /// Max TFR over thresholds inside [`CLINICAL_BAND`]; `None` if the sweep
    /// has no threshold there.
    pub band_max_tfr: Option<f64>,
}

pub fn tfr_sweep(scores: &[f64], tau0: f64, thresholds: &[f64]) -> Result<TfrProfile> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("threshold sweep is empty".into()));
    }
    if !(tau0 > 0.0 && tau0 < 1.0) {
        return Err(Error::InvalidConfig(format!("tau0 {tau0} must lie in (0, 1)")));
    }
    let tfr: Vec<f64> = thresholds.iter().map(|&t| self::tfr(scores, t, tau0)).collect();
    let max_tfr = tfr.iter().cloned().fold(0.0, f64::max);
    let band_max_tfr = thresholds
        .iter()
        .zip(&tfr)
        .filter(|(t, _)| (CLINICAL_BAND.0..=CLINICAL_BAND.1).contains(*t))
        .map(|(_, v)| *v)
        .reduce(f64::max);
    Ok(TfrProfile {
        tau0,
        thresholds: thresholds.to_vec(),
        tfr,
        max_tfr,
        band_max_tfr,
    })
}

/// Fraction of scores within `delta` of `tau0` (inclusive).
pub fn boundary_width(scores: &[f64], tau0: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!("boundary delta {delta} must be positive")));
    }
    if scores.is_empty() {
        return Ok(0.0);
    }
    let near = scores.iter().filter(|&&s| (s - tau0).abs() <= delta).count();
    Ok(near as f64 / scores.len() as f64)
}
