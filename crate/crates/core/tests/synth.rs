use rule_miner::data::{generate, Overlap, Preprocessor, SynthConfig, WindowConfig};
use rule_miner::rules::{rule_correlation, support, DiscretizedRule, PredicateConfig, WindowSummary};

fn summaries(cfg: &SynthConfig) -> (Vec<WindowSummary>, Vec<DiscretizedRule>) {
    let data = generate(cfg).unwrap();
    let pre = Preprocessor::fit(&data.samples, &WindowConfig::default()).unwrap();
    let ws = pre.prepare_all(&data.samples).unwrap();
    let rules = data
        .manifest
        .rules
        .iter()
        .map(|p| DiscretizedRule {
            id: p.id,
            antecedent: p.antecedent.clone(),
            consequent: p.consequent,
            support: 0.0,
            confidence: 0.0,
        })
        .collect();
    (ws.into_iter().map(|w| w.summary).collect(), rules)
}

#[test]
fn injection_rate_sets_support() {
    let cfg = SynthConfig {
        rules: 1,
        windows: 1000,
        injection_rate: Some(0.3),
        ..Default::default()
    };
    let (ws, rules) = summaries(&cfg);
    let s = support(&rules[0].antecedent, &ws, &PredicateConfig::default()).unwrap();
    assert!((s - 0.30).abs() <= 0.02, "support {s}");
}

#[test]
fn engineered_overlap_sets_correlation() {
    let cfg = SynthConfig {
        rules: 3,
        windows: 2000,
        injection_rate: Some(0.15),
        overlap: Some(Overlap {
            first: 0,
            second: 2,
            jaccard: 0.93,
        }),
        ..Default::default()
    };
    let (ws, rules) = summaries(&cfg);
    let m = rule_correlation(&rules, &ws, &PredicateConfig::default()).unwrap();
    assert!((m.get(0, 2) - 0.93).abs() <= 0.02, "entry {}", m.get(0, 2));
    assert_eq!(m.get(0, 2), m.get(2, 0));
    assert!(m.get(0, 1) < 0.05);
}

#[test]
fn generator_is_deterministic() {
    let cfg = SynthConfig {
        rules: 2,
        windows: 200,
        ..Default::default()
    };
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
}
