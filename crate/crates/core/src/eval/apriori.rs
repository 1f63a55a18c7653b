//! Level-wise frequent itemset mining and the band rules built on top.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::PreparedWindow;
use crate::error::{Error, Result};
use crate::rules::{sort_rules, DiscretizedRule, PredicateConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AprioriConfig {
    pub min_support: f64,
    pub min_confidence: f64,
    /// Longest antecedent considered; `None` means unbounded.
    pub max_len: Option<usize>,
}

impl Default for AprioriConfig {
    fn default() -> Self {
        Self {
            min_support: 0.02,
            min_confidence: 0.6,
            max_len: Some(3),
        }
    }
}

/// Frequent itemsets with their absolute counts, sorted by (length, items).
pub fn frequent_itemsets<I: Ord + Clone>(
    transactions: &[BTreeSet<I>],
    min_support: f64,
    max_len: Option<usize>,
) -> Result<Vec<(Vec<I>, usize)>> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(Error::Config(format!("min_support must lie in (0, 1], got {min_support}")));
    }
    let n = transactions.len();
    // Smallest count that reaches the threshold, robust to rounding.
    let need = ((min_support * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut singles: BTreeMap<I, usize> = BTreeMap::new();
    for t in transactions {
        for i in t {
            *singles.entry(i.clone()).or_default() += 1;
        }
    }
    let mut level: Vec<(Vec<I>, usize)> = singles
        .into_iter()
        .filter(|(_, c)| *c >= need)
        .map(|(i, c)| (vec![i], c))
        .collect();
    let mut out = Vec::new();
    let mut k = 1;
    while !level.is_empty() {
        out.extend(level.iter().cloned());
        if max_len.is_some_and(|m| k >= m) {
            break;
        }
        let frequent: BTreeSet<&Vec<I>> = level.iter().map(|(s, _)| s).collect();
        let mut candidates: Vec<Vec<I>> = Vec::new();
        for (a, (x, _)) in level.iter().enumerate() {
            for (y, _) in &level[a + 1..] {
                if x[..k - 1] != y[..k - 1] {
                    break;
                }
                let mut c = x.clone();
                c.push(y[k - 1].clone());
                // Downward closure: every k-subset must be frequent.
                let closed = (0..c.len()).all(|drop| {
                    let sub: Vec<I> = c
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != drop)
                        .map(|(_, v)| v.clone())
                        .collect();
                    frequent.contains(&sub)
                });
                if closed {
                    candidates.push(c);
                }
            }
        }
        level = candidates
            .into_iter()
            .filter_map(|c| {
                let count = transactions
                    .iter()
                    .filter(|t| c.iter().all(|i| t.contains(i)))
                    .count();
                (count >= need).then_some((c, count))
            })
            .collect();
        k += 1;
    }
    Ok(out)
}

/// Rules `itemset -> band` over the predicate atoms holding in each window.
pub fn apriori_baseline(
    windows: &[PreparedWindow],
    cfg: &AprioriConfig,
    predicates: &PredicateConfig,
) -> Result<Vec<DiscretizedRule>> {
    if !(0.0..=1.0).contains(&cfg.min_confidence) {
        return Err(Error::Config("min_confidence must lie in [0, 1]".into()));
    }
    if windows.is_empty() {
        return Err(Error::Input("no windows to mine".into()));
    }
    let transactions: Vec<BTreeSet<_>> = windows
        .iter()
        .map(|w| w.summary.atoms(predicates).into_iter().collect())
        .collect();
    let n = windows.len() as f64;
    let need = ((cfg.min_support * n) - 1e-9).ceil().max(1.0) as usize;
    let bands = windows.iter().map(|w| w.band).max().unwrap_or(0) + 1;
    let mut rules = Vec::new();
    for (items, count) in frequent_itemsets(&transactions, cfg.min_support, cfg.max_len)? {
        let mut per_band = vec![0usize; bands];
        for (t, w) in transactions.iter().zip(windows) {
            if items.iter().all(|i| t.contains(i)) {
                per_band[w.band] += 1;
            }
        }
        for (band, &hits) in per_band.iter().enumerate() {
            let conf = hits as f64 / count as f64;
            if hits >= need && conf >= cfg.min_confidence {
                rules.push(DiscretizedRule {
                    id: rules.len(),
                    antecedent: items.clone(),
                    consequent: band,
                    support: count as f64 / n,
                    confidence: conf,
                });
            }
        }
    }
    sort_rules(&mut rules);
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(sets: &[&[u8]]) -> Vec<BTreeSet<u8>> {
        sets.iter().map(|s| s.iter().copied().collect()).collect()
    }

    #[test]
    fn five_transaction_toy() {
        let t = tx(&[&[1, 2, 3], &[1, 2], &[2, 3], &[1, 2, 3], &[4]]);
        let got = frequent_itemsets(&t, 0.6, None).unwrap();
        let want = vec![
            (vec![1], 3),
            (vec![2], 4),
            (vec![3], 3),
            (vec![1, 2], 3),
            (vec![2, 3], 3),
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn full_support_keeps_universal_items() {
        let t = tx(&[&[1, 2], &[1, 3], &[1]]);
        assert_eq!(frequent_itemsets(&t, 1.0, None).unwrap(), vec![(vec![1], 3)]);
    }

    #[test]
    fn bad_support() {
        assert!(matches!(frequent_itemsets(&tx(&[&[1]]), 0.0, None), Err(Error::Config(_))));
    }

    #[test]
    fn max_len_caps_levels() {
        let t = tx(&[&[1, 2, 3], &[1, 2, 3]]);
        let got = frequent_itemsets(&t, 0.5, Some(2)).unwrap();
        assert!(got.iter().all(|(s, _)| s.len() <= 2));
        assert_eq!(got.len(), 6);
    }
}
