//! Posterior summaries over pooled draws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HDI_PROB: f64 = 0.94;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub hdi_3: f64,
    pub hdi_97: f64,
}

/// Shortest interval containing `prob` of the draws.
pub fn hdi(draws: &[f64], prob: f64) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::Empty("draws"));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let inc = ((prob * n as f64).floor() as usize).min(n - 1);
    let mut best = 0;
    for i in 1..n - inc {
        if sorted[i + inc] - sorted[i] < sorted[best + inc] - sorted[best] {
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + inc]))
}

/// Pooled mean, standard deviation and 94% HDI.
pub fn summarize(draws: &[f64]) -> Result<ParamSummary> {
    if draws.is_empty() {
        return Err(Error::Empty("draws"));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = if draws.len() > 1 {
        (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let (hdi_3, hdi_97) = hdi(draws, HDI_PROB)?;
    Ok(ParamSummary { mean, sd, hdi_3, hdi_97 })
}
