use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cmapss::Unit;
use super::features::{feature_matrix, MIN_WINDOW};
use crate::error::{Error, Result};
use crate::rules::WindowSummary;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    /// Steps per window.
    pub length: usize,
    pub stride: usize,
    /// RUL values are clipped to this many cycles.
    pub rul_cap: f64,
    /// Number of equal-frequency RUL bands.
    pub bands: usize,
    /// Trailing rows behind each step's derived features.
    pub feature_window: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: 30,
            stride: 5,
            rul_cap: 125.0,
            bands: 4,
            feature_window: 10,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < MIN_WINDOW {
            return Err(Error::Config(format!("window length must be >= {MIN_WINDOW}")));
        }
        if self.stride == 0 || self.bands == 0 {
            return Err(Error::Config("stride and bands must be positive".into()));
        }
        if !(self.rul_cap > 0.0) {
            return Err(Error::Config("rul_cap must be positive".into()));
        }
        Ok(())
    }
}

/// One window of raw sensor readings. Derived features are recomputed from
/// `sensors` on demand, so persisted samples stay small.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub unit_id: u32,
    /// Cycle index of each step, strictly increasing.
    pub timestamps: Vec<f64>,
    /// Cycles remaining after the last step (uncapped).
    pub rul: f64,
    /// `T×S` raw readings.
    pub sensors: Tensor,
}

impl WindowedSample {
    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.sensors.rows() {
            return Err(Error::Validation(format!(
                "unit {}: {} timestamps for {} steps",
                self.unit_id,
                self.timestamps.len(),
                self.sensors.rows()
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation(format!(
                "unit {}: timestamps must be strictly increasing",
                self.unit_id
            )));
        }
        if !(self.rul >= 0.0) || !self.sensors.is_finite() {
            return Err(Error::Validation(format!(
                "unit {}: RUL must be >= 0 and readings finite",
                self.unit_id
            )));
        }
        Ok(())
    }

    /// `T×4S` features `[raw | trend | anomaly | periodicity]`.
    pub fn features(&self, cfg: &WindowConfig) -> Result<Tensor> {
        feature_matrix(&self.sensors, cfg.feature_window)
    }
}

/// Sliding windows anchored at each unit's final cycle and stepping back by
/// `stride`. Units shorter than one window are skipped.
pub fn windows_from_units(units: &[Unit], cfg: &WindowConfig) -> Result<Vec<WindowedSample>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for u in units {
        let n = u.records.len();
        if n < cfg.length {
            continue;
        }
        let rul = u.rul();
        let mut ends: Vec<usize> = (cfg.length..=n).rev().step_by(cfg.stride).collect();
        ends.reverse();
        for end in ends {
            let recs = &u.records[end - cfg.length..end];
            let data: Vec<f64> = recs.iter().flat_map(|r| r.sensors).collect();
            out.push(WindowedSample {
                unit_id: u.unit_id,
                timestamps: recs.iter().map(|r| f64::from(r.cycle)).collect(),
                rul: f64::from(rul[end - 1]),
                sensors: Tensor::new(cfg.length, recs[0].sensors.len(), data)?,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no unit has {} cycles", cfg.length)));
    }
    Ok(out)
}

/// Equal-frequency band edges over capped RUL values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RulBands {
    pub cap: f64,
    /// `B - 1` nondecreasing edges; band `b` is `[edges[b-1], edges[b])`.
    pub edges: Vec<f64>,
}

impl RulBands {
    pub fn fit(ruls: &[f64], bands: usize, cap: f64) -> Result<Self> {
        if ruls.is_empty() {
            return Err(Error::Input("no RUL values to fit bands".into()));
        }
        let mut v: Vec<f64> = ruls.iter().map(|r| r.min(cap)).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let edges = (1..bands)
            .map(|b| {
                let i = (b * n / bands).min(n - 1);
                // Place the edge between neighbours so ties stay together.
                if i > 0 && v[i - 1] < v[i] {
                    0.5 * (v[i - 1] + v[i])
                } else {
                    v[i]
                }
            })
            .collect();
        Ok(Self { cap, edges })
    }

    pub fn count(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn band(&self, rul: f64) -> usize {
        let r = rul.min(self.cap);
        self.edges.iter().filter(|&&e| r >= e).count()
    }
}

/// Per-column z-score statistics fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns with zero variance; these normalize to 0.
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn fit(matrices: &[Tensor]) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::Input("no data to fit normalization".into()))?;
        let d = first.cols();
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for m in matrices {
            if m.cols() != d {
                return Err(Error::Shape {
                    op: "normalize",
                    left: first.shape(),
                    right: m.shape(),
                });
            }
            for r in 0..m.rows() {
                for (s, v) in sum.iter_mut().zip(m.row_slice(r)) {
                    *s += v;
                }
            }
            count += m.rows();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut ss = vec![0.0; d];
        for m in matrices {
            for r in 0..m.rows() {
                for ((s, v), mu) in ss.iter_mut().zip(m.row_slice(r)).zip(&mean) {
                    *s += (v - mu).powi(2);
                }
            }
        }
        let std: Vec<f64> = ss.iter().map(|s| (s / count as f64).sqrt()).collect();
        let constant = std
            .iter()
            .zip(&mean)
            .map(|(s, m)| *s <= 1e-12 * (1.0 + m.abs()))
            .collect();
        Ok(Self {
            mean,
            std,
            constant,
        })
    }

    pub fn apply(&self, m: &Tensor) -> Result<Tensor> {
        if m.cols() != self.mean.len() {
            return Err(Error::Shape {
                op: "normalize",
                left: [1, self.mean.len()],
                right: m.shape(),
            });
        }
        let mut out = m.detached();
        let d = m.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            *v = if self.constant[c] {
                0.0
            } else {
                (*v - self.mean[c]) / self.std[c]
            };
        }
        Ok(out)
    }
}

/// Everything the model and miner need from one window.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedWindow {
    pub unit_id: u32,
    /// Normalized `T×4S` features.
    pub features: Tensor,
    pub timestamps: Vec<f64>,
    pub rul: f64,
    pub band: usize,
    /// Predicate statistics of the normalized raw sensors.
    pub summary: WindowSummary,
}

impl PreparedWindow {
    /// RUL regression target in `[0, 1]`.
    pub fn rul_target(&self, cap: f64) -> f64 {
        self.rul.min(cap) / cap
    }
}

/// Bands, normalization and the sensor count fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub window: WindowConfig,
    pub sensors: usize,
    pub norm: NormStats,
    pub bands: RulBands,
}

impl Preprocessor {
    pub fn fit(train: &[WindowedSample], cfg: &WindowConfig) -> Result<Self> {
        cfg.validate()?;
        let first = train
            .first()
            .ok_or_else(|| Error::Input("empty training split".into()))?;
        let feats = train
            .iter()
            .map(|w| {
                w.validate()?;
                w.features(cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let ruls: Vec<f64> = train.iter().map(|w| w.rul).collect();
        Ok(Self {
            window: cfg.clone(),
            sensors: first.sensors.cols(),
            norm: NormStats::fit(&feats)?,
            bands: RulBands::fit(&ruls, cfg.bands, cfg.rul_cap)?,
        })
    }

    pub fn d_in(&self) -> usize {
        4 * self.sensors
    }

    pub fn prepare(&self, w: &WindowedSample) -> Result<PreparedWindow> {
        w.validate()?;
        if w.sensors.cols() != self.sensors || w.sensors.rows() != self.window.length {
            return Err(Error::Shape {
                op: "prepare(window)",
                left: [self.window.length, self.sensors],
                right: w.sensors.shape(),
            });
        }
        let features = self.norm.apply(&w.features(&self.window)?)?;
        let t = features.rows();
        let mut raw = Tensor::zeros(t, self.sensors);
        for r in 0..t {
            raw.data_mut()[r * self.sensors..(r + 1) * self.sensors]
                .copy_from_slice(&features.row_slice(r)[..self.sensors]);
        }
        Ok(PreparedWindow {
            unit_id: w.unit_id,
            summary: WindowSummary::from_sensors(&raw, t)?,
            band: self.bands.band(w.rul),
            rul: w.rul,
            timestamps: w.timestamps.clone(),
            features,
        })
    }

    pub fn prepare_all(&self, ws: &[WindowedSample]) -> Result<Vec<PreparedWindow>> {
        ws.iter().map(|w| self.prepare(w)).collect()
    }
}

pub fn write_jsonl(path: &Path, samples: &[WindowedSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<WindowedSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: WindowedSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        s.validate().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cmapss::{EngineRecord, SENSORS};

    fn unit(id: u32, n: u32) -> Unit {
        Unit {
            unit_id: id,
            records: (1..=n)
                .map(|c| EngineRecord {
                    unit_id: id,
                    cycle: c,
                    op_settings: [0.0; 3],
                    sensors: std::array::from_fn(|s| c as f64 * (s as f64 + 1.0) + (c % 3) as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn windows_end_at_failure() {
        let cfg = WindowConfig {
            length: 10,
            stride: 4,
            ..Default::default()
        };
        let ws = windows_from_units(&[unit(1, 25), unit(2, 9)], &cfg).unwrap();
        // Ends at cycles 13, 17, 21, 25 for unit 1; unit 2 is too short.
        assert_eq!(ws.len(), 4);
        assert_eq!(ws.last().unwrap().rul, 0.0);
        assert_eq!(ws[0].rul, 12.0);
        assert_eq!(ws[0].timestamps[0], 4.0);
        assert_eq!(ws[0].sensors.shape(), [10, SENSORS]);
    }

    #[test]
    fn equal_frequency_bands() {
        let ruls: Vec<f64> = (0..8).map(f64::from).collect();
        let b = RulBands::fit(&ruls, 4, 125.0).unwrap();
        let got: Vec<usize> = ruls.iter().map(|&r| b.band(r)).collect();
        assert_eq!(got, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(b.band(400.0), 3);
    }

    #[test]
    fn normalization() {
        let a = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![2.0, 5.0], vec![6.0, 5.0]]).unwrap();
        let stats = NormStats::fit(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(stats.constant, vec![false, true]);
        let na = stats.apply(&a).unwrap();
        let nb = stats.apply(&b).unwrap();
        let col: Vec<f64> = [na.column_values(0), nb.column_values(0)].concat();
        let mean = col.iter().sum::<f64>() / 4.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(na.column_values(1), vec![0.0, 0.0]);

        // Held-out data gets the same affine map.
        let held = Tensor::from_rows(&[vec![10.0, 7.0]]).unwrap();
        let nh = stats.apply(&held).unwrap();
        assert!((nh.get(0, 0) - (10.0 - stats.mean[0]) / stats.std[0]).abs() < 1e-15);
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg = WindowConfig::default();
        let ws = windows_from_units(&[unit(1, 40)], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.jsonl");
        write_jsonl(&p, &ws).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), ws);
    }

    #[test]
    fn prepare_shapes() {
        let cfg = WindowConfig::default();
        let ws = windows_from_units(&[unit(1, 60), unit(2, 45)], &cfg).unwrap();
        let pre = Preprocessor::fit(&ws, &cfg).unwrap();
        let p = pre.prepare(&ws[0]).unwrap();
        assert_eq!(p.features.shape(), [30, 4 * SENSORS]);
        assert_eq!(p.summary.sensors(), SENSORS);
        assert!(p.features.is_finite());
    }
}
