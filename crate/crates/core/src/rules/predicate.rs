use std::collections::{BTreeSet, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    TrendUp,
    TrendDown,
    AnomalyHigh,
    LevelInBin(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    /// Sensor index.
    pub feature: usize,
    pub predicate: Predicate,
    /// Trailing window length in cycles.
    pub window: usize,
}

/// Thresholds that turn per-window statistics into predicate truth values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredicateConfig {
    /// Least-squares slope, in normalized units per cycle, beyond which a
    /// sensor is trending.
    pub trend_threshold: f64,
    pub anomaly_z: f64,
    /// Increasing edges between level bins; `n` edges give `n + 1` bins.
    pub level_edges: Vec<f64>,
    /// Antecedent size.
    pub top_k: usize,
}

impl Default for PredicateConfig {
    fn default() -> Self {
        Self {
            trend_threshold: 0.05,
            anomaly_z: 3.0,
            level_edges: vec![-1.0, 1.0],
            top_k: 3,
        }
    }
}

impl PredicateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.trend_threshold > 0.0) || !(self.anomaly_z > 0.0) {
            return Err(Error::Config("predicate thresholds must be positive".into()));
        }
        if self.level_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("level_edges must be strictly increasing".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be positive".into()));
        }
        Ok(())
    }

    pub fn level_bin(&self, mean: f64) -> usize {
        self.level_edges.iter().filter(|&&e| mean >= e).count()
    }
}

/// Per-sensor statistics of one window, over its trailing `window` cycles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: usize,
    pub slope: Vec<f64>,
    /// Largest absolute z-score against the window's own mean and std.
    pub max_z: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Least-squares slope of `ys` against `0, 1, ..`.
pub fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let tbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dt = i as f64 - tbar;
        num += dt * (y - ybar);
        den += dt * dt;
    }
    num / den
}

/// Max `|z|` against the sample's own mean and population std; 0 for constant input.
pub fn max_abs_z(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 * (1.0 + mean.abs()) {
        return 0.0;
    }
    ys.iter().map(|y| ((y - mean) / std).abs()).fold(0.0, f64::max)
}

impl WindowSummary {
    /// Summarizes the last `window` rows of `sensors` (`T×S`, normalized).
    pub fn from_sensors(sensors: &Tensor, window: usize) -> Result<Self> {
        let t = sensors.rows();
        if window == 0 || window > t {
            return Err(Error::Config(format!(
                "predicate window {window} outside 1..={t}"
            )));
        }
        let start = t - window;
        let s = sensors.cols();
        let mut out = Self {
            window,
            slope: Vec::with_capacity(s),
            max_z: Vec::with_capacity(s),
            mean: Vec::with_capacity(s),
        };
        for c in 0..s {
            let ys: Vec<f64> = (start..t).map(|r| sensors.get(r, c)).collect();
            out.slope.push(ls_slope(&ys));
            out.max_z.push(max_abs_z(&ys));
            out.mean.push(ys.iter().sum::<f64>() / window as f64);
        }
        Ok(out)
    }

    pub fn sensors(&self) -> usize {
        self.slope.len()
    }

    pub fn holds(&self, atom: &Atom, cfg: &PredicateConfig) -> bool {
        let f = atom.feature;
        if f >= self.sensors() {
            return false;
        }
        match atom.predicate {
            Predicate::TrendUp => self.slope[f] > cfg.trend_threshold,
            Predicate::TrendDown => self.slope[f] < -cfg.trend_threshold,
            Predicate::AnomalyHigh => self.max_z[f] > cfg.anomaly_z,
            Predicate::LevelInBin(b) => cfg.level_bin(self.mean[f]) == b,
        }
    }

    /// Every predicate that holds, one per sensor class, as an item set.
    pub fn atoms(&self, cfg: &PredicateConfig) -> Vec<Atom> {
        let mut out = Vec::new();
        for f in 0..self.sensors() {
            let mk = |predicate| Atom {
                feature: f,
                predicate,
                window: self.window,
            };
            if self.slope[f] > cfg.trend_threshold {
                out.push(mk(Predicate::TrendUp));
            } else if self.slope[f] < -cfg.trend_threshold {
                out.push(mk(Predicate::TrendDown));
            }
            if self.max_z[f] > cfg.anomaly_z {
                out.push(mk(Predicate::AnomalyHigh));
            }
            out.push(mk(Predicate::LevelInBin(cfg.level_bin(self.mean[f]))));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedRule {
    pub id: usize,
    pub antecedent: Vec<Atom>,
    /// RUL band.
    pub consequent: usize,
    pub support: f64,
    pub confidence: f64,
}

impl DiscretizedRule {
    pub fn fires(&self, w: &WindowSummary, cfg: &PredicateConfig) -> bool {
        self.antecedent.iter().all(|a| w.holds(a, cfg))
    }

    /// Antecedent as an order-free set, for comparing rules.
    pub fn predicate_set(&self) -> BTreeSet<Atom> {
        self.antecedent.iter().copied().collect()
    }
}

/// Which windows satisfy the antecedent.
pub fn coverage(antecedent: &[Atom], windows: &[WindowSummary], cfg: &PredicateConfig) -> Vec<bool> {
    windows
        .iter()
        .map(|w| antecedent.iter().all(|a| w.holds(a, cfg)))
        .collect()
}

pub fn support(antecedent: &[Atom], windows: &[WindowSummary], cfg: &PredicateConfig) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Input("support needs at least one window".into()));
    }
    let hits = coverage(antecedent, windows, cfg).iter().filter(|&&c| c).count();
    Ok(hits as f64 / windows.len() as f64)
}

pub fn confidence(
    antecedent: &[Atom],
    consequent: usize,
    windows: &[WindowSummary],
    bands: &[usize],
    cfg: &PredicateConfig,
) -> Result<f64> {
    if windows.len() != bands.len() {
        return Err(Error::Input("one band per window required".into()));
    }
    let cov = coverage(antecedent, windows, cfg);
    let (mut hit, mut ok) = (0usize, 0usize);
    for (c, &b) in cov.iter().zip(bands) {
        if *c {
            hit += 1;
            ok += usize::from(b == consequent);
        }
    }
    if hit == 0 {
        return Err(Error::Input("confidence is undefined for a rule with zero support".into()));
    }
    Ok(ok as f64 / hit as f64)
}

/// Pairwise Jaccard similarity of coverage sets. Empty sets get a unit
/// diagonal and zeros elsewhere.
pub fn jaccard_matrix(sets: &[Vec<bool>]) -> Result<Tensor> {
    let n = sets.len();
    if n == 0 {
        return Err(Error::Input("no rules to correlate".into()));
    }
    let mut out = Tensor::identity(n);
    for i in 0..n {
        for j in 0..i {
            let (mut inter, mut union) = (0usize, 0usize);
            for (a, b) in sets[i].iter().zip(&sets[j]) {
                inter += usize::from(*a && *b);
                union += usize::from(*a || *b);
            }
            let v = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

pub fn rule_correlation(
    rules: &[DiscretizedRule],
    windows: &[WindowSummary],
    cfg: &PredicateConfig,
) -> Result<Tensor> {
    let sets: Vec<Vec<bool>> = rules
        .iter()
        .map(|r| coverage(&r.antecedent, windows, cfg))
        .collect();
    jaccard_matrix(&sets)
}

/// Number of distinct items seen up to and including each step.
pub fn cumulative_rule_count<T: Hash + Eq + Clone>(stream: &[Vec<T>]) -> Vec<usize> {
    let mut seen = HashSet::new();
    stream
        .iter()
        .map(|step| {
            seen.extend(step.iter().cloned());
            seen.len()
        })
        .collect()
}

/// One window assigned to a code, as seen by [`discretize_rule`].
#[derive(Clone, Copy, Debug)]
pub struct Member<'a> {
    pub summary: &'a WindowSummary,
    /// Attention mass per sensor.
    pub mass: &'a [f64],
    pub band: usize,
}

/// Turns the windows assigned to one code into an antecedent/consequent
/// rule. Support and confidence are left at 0 for the caller to fill
/// against a window corpus. `None` when there are no members.
pub fn discretize_rule(id: usize, members: &[Member], bands: usize, cfg: &PredicateConfig) -> Option<DiscretizedRule> {
    let first = members.first()?;
    let s = first.summary.sensors();
    let n = members.len() as f64;
    let mut mass = vec![0.0; s];
    let mut slope = vec![0.0; s];
    let mut max_z = vec![0.0; s];
    let mut mean = vec![0.0; s];
    let mut votes = vec![0usize; bands.max(1)];
    for m in members {
        for f in 0..s {
            mass[f] += m.mass[f] / n;
            slope[f] += m.summary.slope[f] / n;
            max_z[f] += m.summary.max_z[f] / n;
            mean[f] += m.summary.mean[f] / n;
        }
        if m.band < votes.len() {
            votes[m.band] += 1;
        }
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    let mut antecedent: Vec<Atom> = order
        .into_iter()
        .take(cfg.top_k.min(s))
        .map(|f| {
            let predicate = if slope[f] > cfg.trend_threshold {
                Predicate::TrendUp
            } else if slope[f] < -cfg.trend_threshold {
                Predicate::TrendDown
            } else if max_z[f] > cfg.anomaly_z {
                Predicate::AnomalyHigh
            } else {
                Predicate::LevelInBin(cfg.level_bin(mean[f]))
            };
            Atom {
                feature: f,
                predicate,
                window: first.summary.window,
            }
        })
        .collect();
    antecedent.sort();
    let consequent = votes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(i, _)| i);
    Some(DiscretizedRule {
        id,
        antecedent,
        consequent,
        support: 0.0,
        confidence: 0.0,
    })
}

/// Stable export order: descending confidence, then id.
pub fn sort_rules(rules: &mut [DiscretizedRule]) {
    rules.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id)));
}
