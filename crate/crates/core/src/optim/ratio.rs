//! Update-to-weight magnitude diagnostic.
//!
//! A healthy learning rate moves each layer's weights by roughly a tenth of
//! a percent per update. This only reports; it never retunes anything.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratios inside this band are considered healthy.
pub const RATIO_BAND: (f64, f64) = (1e-4, 1e-2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioFlag {
    Ok,
    TooSmall,
    TooLarge,
    /// Weights are all zero; the ratio is reported as `+inf`.
    ZeroWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRatio {
    pub layer: usize,
    pub ratio: f64,
    pub flag: RatioFlag,
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Per layer, `RMS(update) / RMS(weights)`, flagged against [`RATIO_BAND`].
pub fn update_ratio_report(weights: &[&[f64]], updates: &[&[f64]]) -> Result<Vec<UpdateRatio>> {
    if weights.len() != updates.len() {
        return Err(Error::shape(
            "update_ratio_report",
            (weights.len(), 0),
            (updates.len(), 0),
        ));
    }
    weights
        .iter()
        .zip(updates)
        .enumerate()
        .map(|(layer, (w, u))| {
            if w.len() != u.len() {
                return Err(Error::shape(
                    "update_ratio_report",
                    (w.len(), 1),
                    (u.len(), 1),
                ));
            }
            let rw = rms(w);
            let ru = rms(u);
            let (ratio, flag) = if rw == 0.0 {
                log::warn!("layer {layer}: all-zero weights, update ratio undefined");
                (f64::INFINITY, RatioFlag::ZeroWeights)
            } else {
                let r = ru / rw;
                let flag = if r < RATIO_BAND.0 {
                    RatioFlag::TooSmall
                } else if r > RATIO_BAND.1 {
                    RatioFlag::TooLarge
                } else {
                    RatioFlag::Ok
                };
                (r, flag)
            };
            Ok(UpdateRatio { layer, ratio, flag })
        })
        .collect()
}
