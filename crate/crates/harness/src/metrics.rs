//! Heart-rate error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Population standard deviation of the signed errors.
    pub sd: f64,
    /// `None` when either sequence has zero variance (undefined).
    pub pearson_r: Option<f64>,
}

/// Errors are `pred - truth`. Identical sequences report `r = 1`.
pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(HarnessError::input(format!(
            "metrics need two equal-length sequences of at least 2 values (got {} and {})",
            pred.len(),
            truth.len()
        )));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(HarnessError::input("non-finite heart-rate value"));
    }
    let n = pred.len() as f64;
    let e: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let mae = e.iter().map(|v| v.abs()).sum::<f64>() / n;
    let rmse = (e.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let me = e.iter().sum::<f64>() / n;
    let sd = (e.iter().map(|v| (v - me) * (v - me)).sum::<f64>() / n).sqrt();
    let pearson_r = if pred == truth {
        Some(1.0)
    } else {
        pearson(pred, truth)
    };
    Ok(Metrics { n: pred.len(), mae, rmse, sd, pearson_r })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
