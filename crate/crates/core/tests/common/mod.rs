#![allow(dead_code)]

use rule_miner::data::PreparedWindow;
use rule_miner::model::{Model, ModelConfig};
use rule_miner::rules::WindowSummary;
use rule_miner::tensor::{Rng, Tensor};
use rule_miner::transformer::AblationFlags;

/// Hand-built windows with `s` sensors (`4s` feature columns) and `t` steps.
pub fn toy_windows(n: usize, t: usize, s: usize, seed: u64) -> Vec<PreparedWindow> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let features = Tensor::randn(t, 4 * s, 1.0, &mut rng);
            let mut raw = Tensor::zeros(t, s);
            for r in 0..t {
                for c in 0..s {
                    raw.set(r, c, features.get(r, c));
                }
            }
            PreparedWindow {
                unit_id: i as u32 + 1,
                timestamps: (0..t).map(|k| (10 * i + k) as f64 + 1.0).collect(),
                rul: (17 * i % 120) as f64,
                band: i % 4,
                summary: WindowSummary::from_sensors(&raw, t).unwrap(),
                features,
            }
        })
        .collect()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 12,
        layers: 2,
        d_k: 4,
        heads: 2,
        m: 4,
        d_r: 4,
        ..Default::default()
    }
}

/// Tiny model with non-degenerate gate and decay parameters.
pub fn tiny_model(d_in: usize, seed: u64) -> Model {
    let mut model = Model::new(&tiny_config(), AblationFlags::full(), d_in, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0x5eed);
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names.iter().filter(|n| n.contains(".gate.") || n.contains("decay_rho")) {
        let id = model.params.id(name).unwrap();
        let shape = model.params.get(id).shape();
        let t = Tensor::randn(shape[0], shape[1], 0.5, &mut rng);
        model.params.assign(name, t).unwrap();
    }
    model
}
