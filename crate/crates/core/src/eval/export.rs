//! CSV exports behind the timeline, support and correlation figures.

use std::path::Path;

use super::ablation::{fmt, write_csv};
use crate::error::{Error, Result};
use crate::mining::MinedRules;
use crate::rules::{rule_correlation, PredicateConfig, WindowSummary};
use crate::tensor::Tensor;

pub const TIMELINE_FILE: &str = "rule_timeline.csv";
pub const SUPPORT_FILE: &str = "support_distribution.csv";
pub const CORRELATION_FILE: &str = "rule_correlation.csv";

/// Rule-by-rule Jaccard matrix in rule-id order.
/// `None` when there are no rules.
pub fn correlation_by_id(
    mined: &MinedRules,
    windows: &[WindowSummary],
    cfg: &PredicateConfig,
) -> Result<(Vec<usize>, Option<Tensor>)> {
    let mut rules = mined.rules.clone();
    rules.sort_by_key(|r| r.id);
    let ids = rules.iter().map(|r| r.id).collect();
    if rules.is_empty() {
        return Ok((ids, None));
    }
    Ok((ids, Some(rule_correlation(&rules, windows, cfg)?)))
}

/// Writes the three figure tables into `dir`.
pub fn export_figures(mined: &MinedRules, windows: &[WindowSummary], cfg: &PredicateConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join(TIMELINE_FILE),
        &["step", "cumulative_rules"],
        mined
            .timeline
            .iter()
            .enumerate()
            .map(|(k, (_, n))| vec![(k + 1).to_string(), n.to_string()])
            .collect(),
    )?;
    let mut by_id = mined.rules.clone();
    by_id.sort_by_key(|r| r.id);
    write_csv(
        &dir.join(SUPPORT_FILE),
        &["rule_id", "support"],
        by_id.iter().map(|r| vec![r.id.to_string(), fmt(r.support)]).collect(),
    )?;
    let (ids, corr) = correlation_by_id(mined, windows, cfg)?;
    let header: Vec<String> = std::iter::once("rule_id".to_string())
        .chain(ids.iter().map(|i| i.to_string()))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &dir.join(CORRELATION_FILE),
        &header,
        ids.iter()
            .enumerate()
            .map(|(r, id)| {
                std::iter::once(id.to_string())
                    .chain((0..ids.len()).map(|c| fmt(corr.as_ref().map_or(0.0, |m| m.get(r, c)))))
                    .collect()
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{Atom, DiscretizedRule, Predicate};

    #[test]
    fn writes_three_tables() {
        let dir = tempfile::tempdir().unwrap();
        let atom = |f| Atom {
            feature: f,
            predicate: Predicate::TrendUp,
            window: 4,
        };
        let rules = vec![
            DiscretizedRule {
                id: 1,
                antecedent: vec![atom(1)],
                consequent: 0,
                support: 0.5,
                confidence: 1.0,
            },
            DiscretizedRule {
                id: 0,
                antecedent: vec![atom(0)],
                consequent: 0,
                support: 0.5,
                confidence: 0.5,
            },
        ];
        let w = |a: f64, b: f64| WindowSummary {
            window: 4,
            slope: vec![a, b],
            max_z: vec![0.0; 2],
            mean: vec![0.0; 2],
        };
        let windows = vec![w(1.0, 1.0), w(1.0, 0.0), w(0.0, 0.0), w(0.0, 1.0)];
        let mined = MinedRules {
            rules,
            timeline: vec![(2, 1), (4, 2)],
        };
        export_figures(&mined, &windows, &PredicateConfig::default(), dir.path()).unwrap();
        let read = |f| std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(read(TIMELINE_FILE), "step,cumulative_rules\n1,1\n2,2\n");
        assert_eq!(read(SUPPORT_FILE), "rule_id,support\n0,0.500000\n1,0.500000\n");
        assert_eq!(
            read(CORRELATION_FILE),
            "rule_id,0,1\n0,1.000000,0.333333\n1,0.333333,1.000000\n"
        );

        let empty = MinedRules {
            rules: vec![],
            timeline: vec![],
        };
        export_figures(&empty, &windows, &PredicateConfig::default(), dir.path()).unwrap();
        assert_eq!(read(CORRELATION_FILE), "rule_id\n");
    }
}
