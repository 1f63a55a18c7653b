//! Trend, anomaly and periodicity descriptors of sensor windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{ls_slope, max_abs_z};
use crate::tensor::Tensor;

/// Shortest window the descriptors are computed on.
pub const MIN_WINDOW: usize = 4;

/// Derived descriptors of one sensor over a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorFeatures {
    pub trend: f64,
    pub anomaly: f64,
    pub periodicity: f64,
}

/// Share of the linearly detrended signal's energy held by its strongest
/// nonzero frequency bin.
pub fn periodicity(ys: &[f64]) -> f64 {
    let n = ys.len();
    let slope = ls_slope(ys);
    let tbar = (n as f64 - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n as f64;
    let resid: Vec<f64> = ys
        .iter()
        .enumerate()
        .map(|(i, y)| y - ybar - slope * (i as f64 - tbar))
        .collect();
    let scale = ys.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1.0);
    let mut total = 0.0;
    let mut best: f64 = 0.0;
    for k in 1..=n / 2 {
        let w = std::f64::consts::TAU * k as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, r) in resid.iter().enumerate() {
            let a = w * i as f64;
            re += r * a.cos();
            im -= r * a.sin();
        }
        let p = re * re + im * im;
        total += p;
        best = best.max(p);
    }
    // Residual at rounding level means there is nothing periodic to find.
    if total <= (1e-20 * scale * scale) * n as f64 * n as f64 {
        return 0.0;
    }
    best / total
}

/// Descriptors of every sensor (column) of `rows` (`w×S`, `w >= 4`).
pub fn extract_features(rows: &[Vec<f64>]) -> Result<Vec<SensorFeatures>> {
    if rows.len() < MIN_WINDOW {
        return Err(Error::Input(format!(
            "feature window needs at least {MIN_WINDOW} rows, got {}",
            rows.len()
        )));
    }
    let s = rows[0].len();
    if rows.iter().any(|r| r.len() != s) {
        return Err(Error::Input("ragged sensor rows".into()));
    }
    Ok((0..s)
        .map(|c| {
            let ys: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            SensorFeatures {
                trend: ls_slope(&ys),
                anomaly: max_abs_z(&ys),
                periodicity: periodicity(&ys),
            }
        })
        .collect())
}

/// Per-step model input `[raw | trend | anomaly | periodicity]` (`T×4S`).
///
/// Step `t` uses the trailing `sub` rows ending at `t`; steps with fewer
/// than [`MIN_WINDOW`] rows of history use the first `MIN_WINDOW` rows.
pub fn feature_matrix(sensors: &Tensor, sub: usize) -> Result<Tensor> {
    let (t, s) = (sensors.rows(), sensors.cols());
    if t < MIN_WINDOW {
        return Err(Error::Input(format!("window of {t} steps is shorter than {MIN_WINDOW}")));
    }
    let sub = sub.max(MIN_WINDOW);
    let rows = sensors.to_rows();
    let mut out = Tensor::zeros(t, 4 * s);
    let mut cache: Option<(usize, usize, Vec<SensorFeatures>)> = None;
    for step in 0..t {
        let end = (step + 1).max(MIN_WINDOW);
        let start = end.saturating_sub(sub);
        let feats = match &cache {
            Some((a, b, f)) if *a == start && *b == end => f.clone(),
            _ => {
                let f = extract_features(&rows[start..end])?;
                cache = Some((start, end, f.clone()));
                f
            }
        };
        for c in 0..s {
            out.set(step, c, rows[step][c]);
            out.set(step, s + c, feats[c].trend);
            out.set(step, 2 * s + c, feats[c].anomaly);
            out.set(step, 3 * s + c, feats[c].periodicity);
        }
    }
    Ok(out)
}
