//! Coverage and accuracy of a mined rule list on labelled windows.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{PlantedRule, PreparedWindow};
use crate::error::{Error, Result};
use crate::mining::{mine, MinedRules, MiningConfig};
use crate::model::Model;
use crate::rules::{Atom, DiscretizedRule, PredicateConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub recovered: usize,
    pub planted: usize,
    pub rate: f64,
    /// Ids of planted rules whose antecedent was found.
    pub ids: Vec<usize>,
}

/// Scores are stored in `metrics.json`; the wall time goes to a separate
/// timing file so reruns stay byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rule_mining_accuracy: f64,
    pub rule_coverage: f64,
    pub rule_count: usize,
    pub zero_rules: bool,
    pub windows: usize,
    pub covered_windows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<Recovery>,
    pub fingerprint: String,
    /// Mining phase only; training is excluded.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

/// The rule that decides a window: highest confidence among those firing,
/// earliest in `rules` on ties. `rules` is expected in export order.
pub fn deciding_rule<'a>(
    rules: &'a [DiscretizedRule],
    w: &PreparedWindow,
    cfg: &PredicateConfig,
) -> Option<&'a DiscretizedRule> {
    let mut best: Option<&DiscretizedRule> = None;
    for r in rules.iter().filter(|r| r.fires(&w.summary, cfg)) {
        if best.is_none_or(|b| r.confidence > b.confidence) {
            best = Some(r);
        }
    }
    best
}

/// Coverage and covered-window accuracy of `rules` on `windows`.
pub fn evaluate_rules(
    rules: &[DiscretizedRule],
    windows: &[PreparedWindow],
    cfg: &PredicateConfig,
    fingerprint: &str,
) -> Result<MetricsReport> {
    if windows.is_empty() {
        return Err(Error::Input("evaluation needs at least one window".into()));
    }
    let (mut covered, mut correct) = (0usize, 0usize);
    for w in windows {
        if let Some(r) = deciding_rule(rules, w, cfg) {
            covered += 1;
            correct += usize::from(r.consequent == w.band);
        }
    }
    Ok(MetricsReport {
        rule_mining_accuracy: if covered == 0 { 0.0 } else { correct as f64 / covered as f64 },
        rule_coverage: covered as f64 / windows.len() as f64,
        rule_count: rules.len(),
        zero_rules: rules.is_empty(),
        windows: windows.len(),
        covered_windows: covered,
        recovery: None,
        fingerprint: fingerprint.to_string(),
        wall_time_seconds: 0.0,
    })
}

/// Planted rules whose antecedent appears, as a set, among the mined rules.
pub fn planted_recovery(rules: &[DiscretizedRule], planted: &[PlantedRule]) -> Recovery {
    let mined: Vec<BTreeSet<Atom>> = rules.iter().map(DiscretizedRule::predicate_set).collect();
    let ids: Vec<usize> = planted
        .iter()
        .filter(|p| {
            let want: BTreeSet<Atom> = p.antecedent.iter().copied().collect();
            mined.contains(&want)
        })
        .map(|p| p.id)
        .collect();
    Recovery {
        recovered: ids.len(),
        planted: planted.len(),
        rate: if planted.is_empty() { 0.0 } else { ids.len() as f64 / planted.len() as f64 },
        ids,
    }
}

/// Mines rules on `train` (timed) and scores them on `eval`.
pub fn evaluate(
    model: &Model,
    train: &[PreparedWindow],
    eval: &[PreparedWindow],
    bands: usize,
    cfg: &MiningConfig,
    fingerprint: &str,
) -> Result<(MinedRules, MetricsReport)> {
    let start = Instant::now();
    let mined = mine(model, train, bands, cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut report = evaluate_rules(&mined.rules, eval, &cfg.predicates, fingerprint)?;
    report.wall_time_seconds = elapsed;
    Ok((mined, report))
}

/// Stable hex digest of a serializable configuration.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{Predicate, WindowSummary};
    use crate::tensor::Tensor;

    fn win(slope: f64, band: usize) -> PreparedWindow {
        PreparedWindow {
            unit_id: 0,
            features: Tensor::zeros(4, 4),
            timestamps: vec![0.0, 1.0, 2.0, 3.0],
            rul: 0.0,
            band,
            summary: WindowSummary {
                window: 4,
                slope: vec![slope],
                max_z: vec![0.0],
                mean: vec![0.0],
            },
        }
    }

    fn rule(id: usize, predicate: Predicate, consequent: usize, confidence: f64) -> DiscretizedRule {
        DiscretizedRule {
            id,
            antecedent: vec![Atom {
                feature: 0,
                predicate,
                window: 4,
            }],
            consequent,
            support: 0.5,
            confidence,
        }
    }

    #[test]
    fn empty_rule_set() {
        let ws = vec![win(1.0, 0)];
        let r = evaluate_rules(&[], &ws, &PredicateConfig::default(), "x").unwrap();
        assert_eq!((r.rule_coverage, r.rule_mining_accuracy, r.zero_rules), (0.0, 0.0, true));
    }

    #[test]
    fn highest_confidence_decides() {
        let cfg = PredicateConfig::default();
        let ws = vec![win(1.0, 0), win(1.0, 0), win(0.0, 1), win(-1.0, 2)];
        let rules = vec![
            rule(0, Predicate::TrendUp, 0, 0.9),
            rule(1, Predicate::LevelInBin(1), 1, 0.5),
        ];
        let r = evaluate_rules(&rules, &ws, &cfg, "x").unwrap();
        assert_eq!(r.rule_coverage, 1.0);
        assert_eq!(r.rule_mining_accuracy, 0.75);
        let only_up = evaluate_rules(&rules[..1], &ws, &cfg, "x").unwrap();
        assert_eq!((only_up.rule_coverage, only_up.rule_mining_accuracy), (0.5, 1.0));
    }

    #[test]
    fn recovery_matches_sets() {
        let planted = vec![PlantedRule {
            id: 3,
            antecedent: rule(0, Predicate::TrendUp, 0, 1.0).antecedent,
            consequent: 1,
            injection_rate: 0.1,
            injected: 10,
        }];
        let rec = planted_recovery(&[rule(7, Predicate::TrendUp, 2, 0.7)], &planted);
        assert_eq!((rec.recovered, rec.ids.clone()), (1, vec![3]));
        assert_eq!(planted_recovery(&[], &planted).recovered, 0);
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(fingerprint(&[1, 2]).unwrap(), fingerprint(&[1, 2]).unwrap());
        assert_ne!(fingerprint(&[1, 2]).unwrap(), fingerprint(&[2, 1]).unwrap());
    }
}
