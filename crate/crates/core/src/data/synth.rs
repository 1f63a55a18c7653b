//! Synthetic windows with planted antecedent -> RUL band rules.
//!
//! Every sensor is iid Gaussian noise around a per-sensor base level and
//! scale. A planted rule names three sensors and one pattern for each
//! (ramp, single spike or level shift); windows chosen for the rule carry
//! all three patterns and get the rule's RUL band. Rejection sampling keeps
//! injected windows satisfying their antecedent and all other windows
//! satisfying none.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::window::{write_jsonl, WindowedSample};
use crate::error::{Error, Result};
use crate::rules::{Atom, Predicate, PredicateConfig, WindowSummary};
use crate::tensor::{Rng, Tensor};

pub const ATOMS_PER_RULE: usize = 3;
pub const WINDOWS_FILE: &str = "windows.jsonl";
pub const PLANTED_FILE: &str = "planted_rules.json";

/// Two rules made to co-fire so their coverage Jaccard is `jaccard`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overlap {
    pub first: usize,
    pub second: usize,
    pub jaccard: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub rules: usize,
    pub windows: usize,
    /// Defaults to `max(16, 3k + 1)`.
    pub sensors: Option<usize>,
    /// One rate for every rule; defaults to `min(0.1, 0.6 / k)`.
    pub injection_rate: Option<f64>,
    /// Per-rule rates, overriding `injection_rate`.
    pub injection_rates: Option<Vec<f64>>,
    pub length: usize,
    pub rul_cap: f64,
    pub bands: usize,
    /// Injected window sets are disjoint (apart from `overlap`).
    pub disjoint: bool,
    pub overlap: Option<Overlap>,
    /// Fraction of injected windows whose band is replaced by another one.
    pub label_noise: f64,
    /// Injected ramp, in noise standard deviations per cycle.
    pub trend_slope: f64,
    pub spike: f64,
    pub predicates: PredicateConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            rules: 5,
            windows: 2000,
            sensors: None,
            injection_rate: None,
            injection_rates: None,
            length: 30,
            rul_cap: 125.0,
            bands: 4,
            disjoint: true,
            overlap: None,
            label_noise: 0.0,
            trend_slope: 0.15,
            spike: 8.0,
            predicates: PredicateConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn sensor_count(&self) -> usize {
        self.sensors.unwrap_or((3 * self.rules + 1).max(16))
    }

    pub fn rates(&self) -> Vec<f64> {
        if let Some(r) = &self.injection_rates {
            return r.clone();
        }
        let rate = self
            .injection_rate
            .unwrap_or_else(|| (0.6 / self.rules.max(1) as f64).min(0.1));
        vec![rate; self.rules]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules == 0 {
            return Err(Error::Config("at least one planted rule is required".into()));
        }
        if self.windows < 100 {
            return Err(Error::Config(format!("need >= 100 windows, got {}", self.windows)));
        }
        if self.length < 4 || self.bands == 0 || !(self.rul_cap > 0.0) {
            return Err(Error::Config("invalid window length, bands or rul_cap".into()));
        }
        let s = self.sensor_count();
        if s < ATOMS_PER_RULE {
            return Err(Error::Config(format!("need >= {ATOMS_PER_RULE} sensors")));
        }
        let rates = self.rates();
        if rates.len() != self.rules {
            return Err(Error::Config(format!(
                "{} injection rates for {} rules",
                rates.len(),
                self.rules
            )));
        }
        if rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Config("injection rates must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must lie in [0, 1]".into()));
        }
        if let Some(o) = &self.overlap {
            if o.first == o.second || o.first >= self.rules || o.second >= self.rules {
                return Err(Error::Config("overlap must name two distinct rules".into()));
            }
            if !(o.jaccard > 0.0 && o.jaccard <= 1.0) {
                return Err(Error::Config("overlap jaccard must lie in (0, 1]".into()));
            }
            if !self.disjoint {
                return Err(Error::Config("overlap needs disjoint injection".into()));
            }
        }
        if self.disjoint {
            let shared = self.overlap_count().unwrap_or(0);
            let used: usize = self.counts().iter().sum::<usize>() - shared;
            if used > self.windows {
                return Err(Error::Config(format!(
                    "injection rates sum above 1 ({used} of {} windows) with disjoint rules",
                    self.windows
                )));
            }
        }
        self.predicates.validate()
    }

    fn counts(&self) -> Vec<usize> {
        self.rates()
            .iter()
            .map(|r| (r * self.windows as f64).round() as usize)
            .collect()
    }

    fn overlap_count(&self) -> Option<usize> {
        let o = self.overlap.as_ref()?;
        let c = self.counts();
        let (a, b) = (c[o.first] as f64, c[o.second] as f64);
        Some(((o.jaccard * (a + b) / (1.0 + o.jaccard)).round() as usize).min(c[o.first].min(c[o.second])))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub id: usize,
    pub antecedent: Vec<Atom>,
    pub consequent: usize,
    pub injection_rate: f64,
    /// Windows that actually carry the pattern.
    pub injected: usize,
}

/// Sidecar describing the generator run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedManifest {
    pub config: SynthConfig,
    pub sensor_base: Vec<f64>,
    pub sensor_scale: Vec<f64>,
    pub rules: Vec<PlantedRule>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub samples: Vec<WindowedSample>,
    pub manifest: PlantedManifest,
}

fn quantize(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// RUL range `[lo, hi]` of band `b` when `0..=cap` is cut into equal widths.
fn band_range(b: usize, bands: usize, cap: f64) -> (u32, u32) {
    let width = (cap + 1.0) / bands as f64;
    let lo = (b as f64 * width).ceil() as u32;
    let hi = ((b as f64 + 1.0) * width).ceil() as u32 - 1;
    (lo, hi.max(lo))
}

fn plant_rules(cfg: &SynthConfig, rng: &mut Rng) -> Vec<PlantedRule> {
    let s = cfg.sensor_count();
    let top = cfg.predicates.level_edges.len();
    let mut kinds = vec![
        Predicate::TrendUp,
        Predicate::TrendDown,
        Predicate::LevelInBin(0),
        Predicate::LevelInBin(top),
    ];
    // One outlier among n points has |z| <= sqrt(n - 1); keep a margin.
    if ((cfg.length - 1) as f64).sqrt() > 1.2 * cfg.predicates.anomaly_z {
        kinds.insert(2, Predicate::AnomalyHigh);
    }
    let mut pool: Vec<usize> = (0..s).collect();
    rng.shuffle(&mut pool);
    let mut next = 0;
    let offset = rng.below(cfg.bands);
    let rates = cfg.rates();
    let mut rules: Vec<PlantedRule> = (0..cfg.rules)
        .map(|id| {
            let mut sensors: Vec<usize> = if next + ATOMS_PER_RULE <= s {
                next += ATOMS_PER_RULE;
                pool[next - ATOMS_PER_RULE..next].to_vec()
            } else {
                let mut p: Vec<usize> = (0..s).collect();
                rng.shuffle(&mut p);
                p.truncate(ATOMS_PER_RULE);
                p
            };
            sensors.sort_unstable();
            let mut antecedent: Vec<Atom> = sensors
                .into_iter()
                .map(|feature| Atom {
                    feature,
                    predicate: kinds[rng.below(kinds.len())],
                    window: cfg.length,
                })
                .collect();
            antecedent.sort();
            PlantedRule {
                id,
                antecedent,
                consequent: (offset + id) % cfg.bands,
                injection_rate: rates[id],
                injected: 0,
            }
        })
        .collect();
    if let Some(o) = &cfg.overlap {
        rules[o.second].consequent = rules[o.first].consequent;
    }
    rules
}

/// Which rules are injected into each window.
fn assign_roles(cfg: &SynthConfig, rng: &mut Rng) -> Vec<Vec<usize>> {
    let n = cfg.windows;
    let counts = cfg.counts();
    let mut roles = vec![Vec::new(); n];
    if cfg.disjoint {
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let mut it = perm.into_iter();
        let mut remaining = counts.clone();
        if let (Some(o), Some(shared)) = (&cfg.overlap, cfg.overlap_count()) {
            for w in it.by_ref().take(shared) {
                roles[w] = vec![o.first, o.second];
            }
            remaining[o.first] -= shared;
            remaining[o.second] -= shared;
        }
        for (rule, &c) in remaining.iter().enumerate() {
            for w in it.by_ref().take(c) {
                roles[w].push(rule);
            }
        }
    } else {
        for (rule, &c) in counts.iter().enumerate() {
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            for &w in &perm[..c] {
                roles[w].push(rule);
            }
        }
    }
    roles
}

fn inject(nominal: &mut Tensor, atom: &Atom, cfg: &SynthConfig, rng: &mut Rng) {
    let t = nominal.rows();
    let f = atom.feature;
    let edges = &cfg.predicates.level_edges;
    match atom.predicate {
        Predicate::TrendUp | Predicate::TrendDown => {
            let sign = if atom.predicate == Predicate::TrendUp { 1.0 } else { -1.0 };
            let mid = (t as f64 - 1.0) / 2.0;
            for r in 0..t {
                let v = nominal.get(r, f) + sign * cfg.trend_slope * (r as f64 - mid);
                nominal.set(r, f, v);
            }
        }
        Predicate::AnomalyHigh => {
            let r = rng.below(t);
            nominal.set(r, f, nominal.get(r, f) + cfg.spike);
        }
        Predicate::LevelInBin(b) => {
            // Two noise units past the bin's outer edge, or its centre.
            let target = if b == 0 {
                edges.first().map_or(0.0, |e| e - 2.0)
            } else if b >= edges.len() {
                edges.last().map_or(0.0, |e| e + 2.0)
            } else {
                0.5 * (edges[b - 1] + edges[b])
            };
            for r in 0..t {
                nominal.set(r, f, nominal.get(r, f) + target);
            }
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let s = cfg.sensor_count();
    let t = cfg.length;
    let mut rng_rules = Rng::stream(cfg.seed, "generator.rules");
    let mut rng_roles = Rng::stream(cfg.seed, "generator.roles");
    let mut rng_noise = Rng::stream(cfg.seed, "generator.noise");
    let mut rng_labels = Rng::stream(cfg.seed, "generator.labels");

    let sensor_base: Vec<f64> = (0..s).map(|_| quantize(rng_rules.uniform(0.0, 600.0))).collect();
    let sensor_scale: Vec<f64> = (0..s).map(|_| quantize(rng_rules.uniform(0.5, 3.0))).collect();
    let mut rules = plant_rules(cfg, &mut rng_rules);
    let roles = assign_roles(cfg, &mut rng_roles);

    // Injected windows take their rule's band; the rest balance the bands.
    let n = cfg.windows;
    let mut bands: Vec<Option<usize>> = roles
        .iter()
        .map(|r| r.first().map(|&id| rules[id].consequent))
        .collect();
    let mut per_band = vec![0usize; cfg.bands];
    for b in bands.iter().flatten() {
        per_band[*b] += 1;
    }
    let mut fill = Vec::new();
    for (b, have) in per_band.iter().enumerate() {
        let target = n / cfg.bands + usize::from(b < n % cfg.bands);
        fill.extend(std::iter::repeat_n(b, target.saturating_sub(*have)));
    }
    let free = bands.iter().filter(|b| b.is_none()).count();
    let mut k = 0;
    while fill.len() < free {
        fill.push(k % cfg.bands);
        k += 1;
    }
    fill.truncate(free);
    rng_labels.shuffle(&mut fill);
    let mut fill = fill.into_iter();
    for b in bands.iter_mut().filter(|b| b.is_none()) {
        *b = fill.next();
    }
    if cfg.label_noise > 0.0 && cfg.bands > 1 {
        for (b, r) in bands.iter_mut().zip(&roles) {
            if !r.is_empty() && rng_labels.next_f64() < cfg.label_noise {
                let shift = 1 + rng_labels.below(cfg.bands - 1);
                *b = b.map(|x| (x + shift) % cfg.bands);
            }
        }
    }

    // Interleave bands round-robin so that every prefix of the unit order
    // is balanced; a split by unit then fits band edges at band boundaries.
    let mut queues: Vec<std::collections::VecDeque<usize>> = vec![Default::default(); cfg.bands];
    for (i, b) in bands.iter().enumerate() {
        queues[b.expect("every window has a band")].push_back(i);
    }
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        for q in &mut queues {
            order.extend(q.pop_front());
        }
    }

    let pcfg = &cfg.predicates;
    let mut samples = Vec::with_capacity(n);
    for (pos, &i) in order.iter().enumerate() {
        let role = &roles[i];
        let mut attempt = 0;
        let sensors = loop {
            attempt += 1;
            let mut nominal = Tensor::randn(t, s, 1.0, &mut rng_noise);
            for &id in role {
                for atom in &rules[id].antecedent {
                    inject(&mut nominal, atom, cfg, &mut rng_noise);
                }
            }
            let mut raw = Tensor::zeros(t, s);
            for r in 0..t {
                for c in 0..s {
                    raw.set(r, c, quantize(sensor_base[c] + sensor_scale[c] * nominal.get(r, c)));
                }
            }
            let back = Tensor::new(
                t,
                s,
                raw.data()
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - sensor_base[j % s]) / sensor_scale[j % s])
                    .collect(),
            )?;
            let summary = WindowSummary::from_sensors(&back, t)?;
            let ok = rules.iter().all(|rule| {
                let fires = rule.antecedent.iter().all(|a| summary.holds(a, pcfg));
                fires == role.contains(&rule.id)
            });
            if ok {
                break raw;
            }
            if attempt >= 1000 {
                return Err(Error::Config(format!(
                    "window {i}: no draw satisfied the planted constraints; injection too weak"
                )));
            }
        };
        let band = bands[i].expect("every window has a band");
        let (lo, hi) = band_range(band, cfg.bands, cfg.rul_cap);
        let rul = lo + rng_labels.below((hi - lo + 1) as usize) as u32;
        let life = rul + t as u32 + rng_labels.below(200) as u32;
        let end = life - rul;
        samples.push(WindowedSample {
            unit_id: pos as u32 + 1,
            timestamps: ((end + 1 - t as u32)..=end).map(f64::from).collect(),
            rul: f64::from(rul),
            sensors,
        });
    }
    for r in &mut rules {
        r.injected = roles.iter().filter(|x| x.contains(&r.id)).count();
    }
    Ok(SynthData {
        samples,
        manifest: PlantedManifest {
            config: cfg.clone(),
            sensor_base,
            sensor_scale,
            rules,
        },
    })
}

/// Writes the windows as JSON lines and the manifest sidecar into `dir`.
pub fn write_synth(dir: &Path, data: &SynthData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(WINDOWS_FILE), &data.samples)?;
    let path = dir.join(PLANTED_FILE);
    let mut text = serde_json::to_string_pretty(&data.manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<PlantedManifest> {
    let path = dir.join(PLANTED_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
