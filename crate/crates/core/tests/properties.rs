use std::collections::BTreeSet;

use proptest::prelude::*;
use rule_miner::attention::{
    scaled_dot_attention_values, temporal_step_weights_values, timestamp_attention_values, Similarity,
    TimestampEncoding,
};
use rule_miner::eval::frequent_itemsets;
use rule_miner::rules::{
    assign_code, code_transition_counts, confidence, cumulative_rule_count, jaccard_matrix, step_transition_matrix,
    support, Atom, Predicate, PredicateConfig, WindowSummary,
};
use rule_miner::tensor::{gradient_check, Rng, Tape, Tensor};
use rule_miner::training::{adaptive_learning_rate, distribution_divergence, Moments};

fn tensor(rows: usize, cols: usize, seed: u64, std: f64) -> Tensor {
    Tensor::randn(rows, cols, std, &mut Rng::new(seed))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transpose_is_an_involution(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
        let t = tensor(r, c, seed, 2.0);
        prop_assert_eq!(t.transpose().transpose(), t);
    }

    #[test]
    fn matmul_distributes_over_transpose(p in 1usize..5, q in 1usize..5, r in 1usize..5, seed in any::<u64>()) {
        let a = tensor(p, q, seed, 1.0);
        let b = tensor(q, r, seed ^ 1, 1.0);
        let left = a.matmul(&b).unwrap().transpose();
        let right = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-12);
    }

    #[test]
    fn composite_gradients_check(r in 1usize..4, c in 1usize..4, seed in any::<u64>()) {
        let theta = tensor(r, c, seed, 0.7);
        let w = tensor(c, 3, seed ^ 9, 0.7);
        let err = gradient_check(&theta, 1e-5, |tape, x| {
            let wv = tape.constant(w.clone());
            let h = tape.matmul(x, wv)?;
            let g = tape.gelu(h);
            let s = tape.softmax_rows(g);
            let t = tape.tanh(s);
            Ok(tape.sum(t))
        }).unwrap();
        prop_assert!(err < 1e-6, "err {}", err);
    }

    #[test]
    fn attention_rows_are_stochastic(t in 1usize..8, d in 1usize..6, seed in any::<u64>(), scale in 0.1f64..20.0) {
        let q = tensor(t, d, seed, scale);
        let k = tensor(t, d, seed ^ 2, scale);
        let v = tensor(t, 3, seed ^ 3, 1.0);
        let (_, w) = scaled_dot_attention_values(&q, &k, &v).unwrap();
        for row in w.to_rows() {
            prop_assert!(close(row.iter().sum::<f64>(), 1.0, 1e-9));
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn null_encoding_is_plain_attention(t in 1usize..8, d in 1usize..6, seed in any::<u64>()) {
        let q = tensor(t, d, seed, 1.0);
        let k = tensor(t, d, seed ^ 2, 1.0);
        let v = tensor(t, d, seed ^ 3, 1.0);
        let ts: Vec<f64> = (0..t).map(|i| 3.0 * i as f64 + 1.0).collect();
        let plain = scaled_dot_attention_values(&q, &k, &v).unwrap();
        let timed = timestamp_attention_values(&q, &k, &v, &ts, &TimestampEncoding::null(d)).unwrap();
        prop_assert_eq!(plain, timed);
    }

    #[test]
    fn timestamp_attention_rows_are_stochastic(t in 1usize..8, d in 1usize..6, seed in any::<u64>(), t0 in 0.0f64..1e4) {
        let q = tensor(t, d, seed, 1.0);
        let k = tensor(t, d, seed ^ 2, 1.0);
        let v = tensor(t, d, seed ^ 3, 1.0);
        let ts: Vec<f64> = (0..t).map(|i| t0 + i as f64).collect();
        let (_, w) = timestamp_attention_values(&q, &k, &v, &ts, &TimestampEncoding::new(d, 10000.0)).unwrap();
        for row in w.to_rows() {
            prop_assert!(close(row.iter().sum::<f64>(), 1.0, 1e-9));
        }
    }

    #[test]
    fn step_weights_columns_are_stochastic(t in 1usize..8, d in 1usize..6, seed in any::<u64>(), dot in any::<bool>()) {
        let x = tensor(t, d, seed, 3.0);
        let sim = if dot { Similarity::Dot } else { Similarity::Cosine };
        let a = temporal_step_weights_values(&x, sim).unwrap();
        for c in 0..t {
            prop_assert!(close(a.column_values(c).iter().sum::<f64>(), 1.0, 1e-9));
        }
    }

    #[test]
    fn transition_matrix_ignores_positive_scale(t in 1usize..8, d in 1usize..6, seed in any::<u64>(), s in 0.01f64..100.0) {
        let x = tensor(t, d, seed, 1.0);
        let m = step_transition_matrix(&x).unwrap();
        let ms = step_transition_matrix(&x.map(|v| v * s)).unwrap();
        prop_assert!(m.max_abs_diff(&ms) < 1e-9);
        for c in 0..t {
            let col = m.column_values(c);
            prop_assert!(close(col.iter().sum::<f64>(), 1.0, 1e-9));
            prop_assert!(col.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn assignment_is_simplex_and_argmax_ignores_temperature(m in 2usize..8, d in 1usize..6, seed in any::<u64>(), tau in 0.05f64..5.0) {
        let codes = tensor(m, d, seed, 1.0);
        let state = tensor(1, d, seed ^ 5, 1.0);
        let a = assign_code(state.data(), &codes, tau).unwrap();
        let b = assign_code(state.data(), &codes, 1.0).unwrap();
        prop_assert!(close(a.probabilities.iter().sum::<f64>(), 1.0, 1e-12));
        prop_assert!(a.probabilities.iter().all(|&p| p >= 0.0));
        prop_assert_eq!(a.code, b.code);
    }

    #[test]
    fn code_transitions_are_row_stochastic(seqs in prop::collection::vec(prop::collection::vec(0usize..4, 2..10), 1..5)) {
        let m = code_transition_counts(&seqs, 4).unwrap();
        for r in m.to_rows() {
            prop_assert!(close(r.iter().sum::<f64>(), 1.0, 1e-12));
        }
    }

    #[test]
    fn divergence_is_nonnegative_and_symmetric(
        a in prop::collection::vec((-5.0f64..5.0, 0.01f64..4.0), 1..6),
        shift in -3.0f64..3.0,
    ) {
        let hist = Moments { mean: a.iter().map(|x| x.0).collect(), var: a.iter().map(|x| x.1).collect() };
        let cur = Moments { mean: a.iter().map(|x| x.0 + shift).collect(), var: a.iter().map(|x| x.1 * 1.5).collect() };
        let d = distribution_divergence(&hist, &cur).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(close(d, distribution_divergence(&cur, &hist).unwrap(), 1e-12));
        prop_assert_eq!(distribution_divergence(&hist, &hist).unwrap(), 0.0);
    }

    #[test]
    fn learning_rate_is_monotone(base in 1e-6f64..1.0, d1 in 0.0f64..10.0, d2 in 0.0f64..10.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(adaptive_learning_rate(base, hi, 1.0) <= adaptive_learning_rate(base, lo, 1.0));
        prop_assert_eq!(adaptive_learning_rate(base, 0.0, 1.0), base);
    }

    #[test]
    fn cumulative_count_never_drops(stream in prop::collection::vec(prop::collection::vec(0u8..20, 0..4), 0..30)) {
        let c = cumulative_rule_count(&stream);
        prop_assert_eq!(c.len(), stream.len());
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn jaccard_is_symmetric_with_unit_diagonal(sets in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 1..6)) {
        let m = jaccard_matrix(&sets).unwrap();
        for i in 0..sets.len() {
            prop_assert_eq!(m.get(i, i), 1.0);
            for j in 0..sets.len() {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!((0.0..=1.0).contains(&m.get(i, j)));
            }
        }
    }

    #[test]
    fn failing_windows_only_dilute_support(
        slopes in prop::collection::vec(-1.0f64..1.0, 1..30),
        extra in 1usize..10,
        bands in prop::collection::vec(0usize..3, 30),
    ) {
        let cfg = PredicateConfig::default();
        let w = |s: f64| WindowSummary { window: 10, slope: vec![s], max_z: vec![0.0], mean: vec![0.0] };
        let ante = [Atom { feature: 0, predicate: Predicate::TrendUp, window: 10 }];
        let mut ws: Vec<WindowSummary> = slopes.iter().map(|&s| w(s)).collect();
        let mut bs: Vec<usize> = bands[..ws.len()].to_vec();
        let s0 = support(&ante, &ws, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&s0));
        let c0 = confidence(&ante, 1, &ws, &bs, &cfg).ok();
        for _ in 0..extra {
            ws.push(w(-0.5));
            bs.push(1);
        }
        let s1 = support(&ante, &ws, &cfg).unwrap();
        prop_assert!(s1 <= s0);
        prop_assert_eq!(confidence(&ante, 1, &ws, &bs, &cfg).ok(), c0);
        if let Some(c) = c0 {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}

/// Every itemset reaching the support threshold, by exhaustive enumeration.
fn brute_force(transactions: &[BTreeSet<u8>], min_support: f64) -> Vec<(Vec<u8>, usize)> {
    let items: Vec<u8> = transactions.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let need = ((min_support * transactions.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut out = Vec::new();
    for mask in 1u32..(1 << items.len()) {
        let set: Vec<u8> = (0..items.len()).filter(|i| mask >> i & 1 == 1).map(|i| items[i]).collect();
        let count = transactions.iter().filter(|t| set.iter().all(|i| t.contains(i))).count();
        if count >= need {
            out.push((set, count));
        }
    }
    out.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(&b.0)));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn apriori_matches_brute_force(
        tx in prop::collection::vec(prop::collection::btree_set(0u8..12, 0..8), 1..50),
        min_support in 0.05f64..0.9,
    ) {
        let got = frequent_itemsets(&tx, min_support, None).unwrap();
        prop_assert_eq!(&got, &brute_force(&tx, min_support));
        // Downward closure.
        let sets: BTreeSet<Vec<u8>> = got.iter().map(|(s, _)| s.clone()).collect();
        for (s, _) in &got {
            for drop in 0..s.len() {
                if s.len() > 1 {
                    let mut sub = s.clone();
                    sub.remove(drop);
                    prop_assert!(sets.contains(&sub));
                }
            }
        }
    }
}

#[test]
fn rule_states_stay_inside_unit_interval() {
    use rule_miner::rules::{RuleEngine, RuleEngineConfig};
    use rule_miner::tensor::ParamSet;
    let cfg = RuleEngineConfig {
        d_model: 5,
        d_r: 3,
        m: 4,
        temperature: 0.5,
        similarity: Similarity::Cosine,
    };
    for seed in 0..50 {
        let mut params = ParamSet::new();
        let mut rng = Rng::new(seed);
        let engine = RuleEngine::init(&mut params, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, false);
        let h = tape.constant(Tensor::randn(7, 5, 10.0, &mut rng));
        let trace = engine.trace(&mut tape, &bind, h).unwrap();
        assert!(tape.value(trace.states).data().iter().all(|v| v.abs() < 1.0));
    }
}
