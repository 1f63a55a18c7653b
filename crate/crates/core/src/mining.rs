//! Turning trained codes into readable rules.
//!
//! Every window is assigned the code of its final step. The windows of one
//! code are discretized into an antecedent/consequent rule; duplicate rules
//! from different codes are merged and rules failing the support or
//! confidence floor are dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::PreparedWindow;
use crate::error::{Error, Result};
use crate::model::{Model, WindowAnalysis};
use crate::rules::{
    confidence, cumulative_rule_count, discretize_rule, sort_rules, support, Atom, DiscretizedRule, Member,
    PredicateConfig, WindowSummary,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningConfig {
    pub min_support: f64,
    pub min_confidence: f64,
    /// Number of prefixes of the window stream sampled for the timeline.
    pub timeline_steps: usize,
    pub predicates: PredicateConfig,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            min_support: 0.02,
            min_confidence: 0.6,
            timeline_steps: 100,
            predicates: PredicateConfig::default(),
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_support > 0.0 && self.min_support <= 1.0) {
            return Err(Error::Config("min_support must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config("min_confidence must lie in [0, 1]".into()));
        }
        if self.timeline_steps == 0 {
            return Err(Error::Config("timeline_steps must be positive".into()));
        }
        self.predicates.validate()
    }
}

/// Per-window model output plus the attention mass of every sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzedWindow {
    pub code: usize,
    pub mass: Vec<f64>,
    pub analysis: WindowAnalysis,
}

/// Attention mass per sensor: final-step weights applied to the mean
/// absolute value of the sensor's feature columns.
pub fn attention_mass(w: &PreparedWindow, step_weights: &[f64]) -> Result<Vec<f64>> {
    let s = w.summary.sensors();
    let f = &w.features;
    if f.cols() % s != 0 || f.rows() != step_weights.len() {
        return Err(Error::Input(format!(
            "features {:?} do not match {s} sensors and {} step weights",
            f.shape(),
            step_weights.len()
        )));
    }
    let groups = f.cols() / s;
    let mut mass = vec![0.0; s];
    for (t, a) in step_weights.iter().enumerate() {
        let row = f.row_slice(t);
        for (c, m) in mass.iter_mut().enumerate() {
            let mean_abs = (0..groups).map(|g| row[g * s + c].abs()).sum::<f64>() / groups as f64;
            *m += a * mean_abs;
        }
    }
    Ok(mass)
}

pub fn analyze_windows(model: &Model, windows: &[PreparedWindow]) -> Result<Vec<AnalyzedWindow>> {
    windows
        .iter()
        .map(|w| {
            let analysis = model.analyze(w)?;
            Ok(AnalyzedWindow {
                code: analysis.code,
                mass: attention_mass(w, &analysis.step_weights)?,
                analysis,
            })
        })
        .collect()
}

/// Rules drawn from the first `windows.len()` analyzed windows.
pub fn rules_from_analysis(
    windows: &[PreparedWindow],
    analyzed: &[AnalyzedWindow],
    bands: usize,
    cfg: &MiningConfig,
) -> Result<Vec<DiscretizedRule>> {
    if windows.is_empty() {
        return Err(Error::Input("no windows to mine".into()));
    }
    if analyzed.len() < windows.len() {
        return Err(Error::Input("every window needs an analysis".into()));
    }
    let mut by_code: BTreeMap<usize, Vec<Member>> = BTreeMap::new();
    for (w, a) in windows.iter().zip(analyzed) {
        by_code.entry(a.code).or_default().push(Member {
            summary: &w.summary,
            mass: &a.mass,
            band: w.band,
        });
    }
    let summaries: Vec<WindowSummary> = windows.iter().map(|w| w.summary.clone()).collect();
    let labels: Vec<usize> = windows.iter().map(|w| w.band).collect();
    let mut seen: Vec<(Vec<Atom>, usize)> = Vec::new();
    let mut rules = Vec::new();
    for (code, members) in &by_code {
        let Some(mut rule) = discretize_rule(*code, members, bands, &cfg.predicates) else {
            continue;
        };
        let key = (rule.antecedent.clone(), rule.consequent);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        rule.support = support(&rule.antecedent, &summaries, &cfg.predicates)?;
        if rule.support < cfg.min_support {
            continue;
        }
        rule.confidence = confidence(&rule.antecedent, rule.consequent, &summaries, &labels, &cfg.predicates)?;
        if rule.confidence < cfg.min_confidence {
            continue;
        }
        rules.push(rule);
    }
    for (i, r) in rules.iter_mut().enumerate() {
        r.id = i;
    }
    sort_rules(&mut rules);
    Ok(rules)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedRules {
    pub rules: Vec<DiscretizedRule>,
    /// `(prefix length, cumulative distinct rules)` for each timeline step.
    pub timeline: Vec<(usize, usize)>,
}

/// Prefix lengths at which the timeline is sampled.
pub fn timeline_prefixes(n: usize, steps: usize) -> Vec<usize> {
    let steps = steps.min(n).max(1);
    (1..=steps).map(|k| (n * k).div_ceil(steps)).collect()
}

/// Mines rules from `windows` and records how many distinct rules have
/// appeared as the window stream grows.
pub fn mine(model: &Model, windows: &[PreparedWindow], bands: usize, cfg: &MiningConfig) -> Result<MinedRules> {
    cfg.validate()?;
    let analyzed = analyze_windows(model, windows)?;
    let rules = rules_from_analysis(windows, &analyzed, bands, cfg)?;
    let prefixes = timeline_prefixes(windows.len(), cfg.timeline_steps);
    let stream = prefixes
        .iter()
        .map(|&p| {
            Ok(rules_from_analysis(&windows[..p], &analyzed[..p], bands, cfg)?
                .into_iter()
                .map(|r| (r.antecedent, r.consequent))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let counts = cumulative_rule_count(&stream);
    Ok(MinedRules {
        rules,
        timeline: prefixes.into_iter().zip(counts).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::Predicate;
    use crate::tensor::Tensor;

    fn window(features: Tensor, slope: Vec<f64>, band: usize) -> PreparedWindow {
        let s = slope.len();
        let t = features.rows();
        PreparedWindow {
            unit_id: 0,
            features,
            timestamps: (0..t).map(|i| i as f64).collect(),
            rul: 0.0,
            band,
            summary: WindowSummary {
                window: t,
                slope,
                max_z: vec![0.0; s],
                mean: vec![0.0; s],
            },
        }
    }

    #[test]
    fn mass_follows_weights_and_groups() {
        // Two sensors, two groups; step 1 carries all the weight.
        let f = Tensor::from_rows(&[vec![9.0, 9.0, 9.0, 9.0], vec![1.0, -3.0, 3.0, 1.0]]).unwrap();
        let w = window(f, vec![0.0, 0.0], 0);
        let m = attention_mass(&w, &[0.0, 1.0]).unwrap();
        assert_eq!(m, vec![2.0, 2.0]);
        assert!(attention_mass(&w, &[1.0]).is_err());
    }

    #[test]
    fn codes_become_filtered_rules() {
        let f = Tensor::zeros(4, 3);
        let mut ws = Vec::new();
        let mut an = Vec::new();
        for i in 0..40 {
            let up = i % 2 == 0;
            let slope = if up { vec![1.0, 0.0, 0.0] } else { vec![0.0, 0.0, 0.0] };
            ws.push(window(f.clone(), slope, usize::from(!up)));
            an.push(AnalyzedWindow {
                code: usize::from(!up),
                mass: if up { vec![5.0, 1.0, 0.0] } else { vec![0.0, 1.0, 5.0] },
                analysis: WindowAnalysis {
                    step_codes: vec![],
                    code: 0,
                    step_weights: vec![],
                    state: vec![],
                    rul: 0.0,
                },
            });
        }
        let cfg = MiningConfig {
            predicates: PredicateConfig {
                top_k: 1,
                ..Default::default()
            },
            min_confidence: 0.4,
            ..Default::default()
        };
        let rules = rules_from_analysis(&ws, &an, 2, &cfg).unwrap();
        assert_eq!(rules.len(), 2);
        let up = rules.iter().find(|r| r.antecedent[0].predicate == Predicate::TrendUp).unwrap();
        assert_eq!((up.antecedent[0].feature, up.consequent), (0, 0));
        assert_eq!((up.support, up.confidence), (0.5, 1.0));
        // The level rule on sensor 2 fires everywhere and is right half the time.
        let level = rules.iter().find(|r| r.antecedent[0].feature == 2).unwrap();
        assert_eq!((level.support, level.confidence), (1.0, 0.5));
        assert!(rules[0].confidence >= rules[1].confidence);

        let strict = MiningConfig {
            min_confidence: 0.9,
            ..cfg
        };
        assert_eq!(rules_from_analysis(&ws, &an, 2, &strict).unwrap().len(), 1);
    }

    #[test]
    fn prefixes_end_at_n() {
        assert_eq!(timeline_prefixes(10, 4), vec![3, 5, 8, 10]);
        assert_eq!(timeline_prefixes(3, 100), vec![1, 2, 3]);
    }
}
