//! Straight-line re-implementation of the encoder stack, compared against
//! the tape-based forward pass.

use rule_miner::tensor::{ParamSet, Rng, Tensor};
use rule_miner::transformer::{AblationFlags, Encoder, EncoderConfig};

type M = Vec<Vec<f64>>;

fn get(p: &ParamSet, name: &str) -> M {
    p.get(p.id(name).unwrap_or_else(|| panic!("missing {name}"))).to_rows()
}

fn mm(a: &M, b: &M) -> M {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            let mut s = 0.0;
            for k in 0..b.len() {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn add_row(a: &M, b: &[f64]) -> M {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn attention(h: &M, p: &ParamSet, prefix: &str, heads: usize, enc: Option<&M>) -> M {
    let t = h.len();
    let mut cat: M = vec![Vec::new(); t];
    for hd in 0..heads {
        let mut q = mm(h, &get(p, &format!("{prefix}.head{hd}.wq")));
        let mut k = mm(h, &get(p, &format!("{prefix}.head{hd}.wk")));
        let v = mm(h, &get(p, &format!("{prefix}.head{hd}.wv")));
        if let Some(e) = enc {
            q = add(&q, e);
            k = add(&k, e);
        }
        let dk = q[0].len() as f64;
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            for c in 0..v[0].len() {
                let o: f64 = (0..t).map(|j| ex[j] / z * v[j][c]).sum();
                cat[i].push(o);
            }
        }
    }
    mm(&cat, &get(p, &format!("{prefix}.wo")))
}

fn alpha(h: &M, p: &ParamSet, prefix: &str) -> f64 {
    let all: Vec<f64> = h.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let min = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = get(p, &format!("{prefix}.gate.w"));
    let b = get(p, &format!("{prefix}.gate.b"))[0][0];
    let logit = mean * w[0][0] + std * w[1][0] + min * w[2][0] + max * w[3][0] + b;
    2.0 / (1.0 + (-logit).exp())
}

fn stack(x: &M, ts: &[f64], p: &ParamSet, cfg: &EncoderConfig) -> M {
    let enc: M = ts
        .iter()
        .map(|&t| {
            (0..cfg.d_k)
                .map(|i| {
                    let f = cfg.timestamp_base.powf(-2.0 * (i / 2) as f64 / cfg.d_k as f64);
                    if i % 2 == 0 { (t * f).sin() } else { (t * f).cos() }
                })
                .collect()
        })
        .collect();
    let last = ts[ts.len() - 1];
    let mut h = add_row(&mm(x, &get(p, "encoder.input.w")), &get(p, "encoder.input.b")[0]);
    for l in 0..cfg.layers {
        let pre = format!("encoder.layer{l}");
        let a = alpha(&h, p, &pre);
        let att = attention(&h, p, &format!("{pre}.attn"), cfg.heads, Some(&enc));
        let h1: M = h
            .iter()
            .zip(&att)
            .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + a * y).collect())
            .collect();
        let hidden = add_row(&mm(&h1, &get(p, &format!("{pre}.ffn.w1"))), &get(p, &format!("{pre}.ffn.b1"))[0]);
        let hidden: M = hidden.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
        let f = add_row(&mm(&hidden, &get(p, &format!("{pre}.ffn.w2"))), &get(p, &format!("{pre}.ffn.b2"))[0]);
        let rho = get(p, &format!("{pre}.decay_rho"))[0][0];
        let lambda = (1.0 + rho.exp()).ln();
        h = h1
            .iter()
            .zip(&f)
            .zip(ts)
            .map(|((r, s), t)| {
                let d = (-lambda * (last - t)).exp();
                r.iter().zip(s).map(|(x, y)| x + d * y).collect()
            })
            .collect();
    }
    h
}

#[test]
fn three_layer_stack_matches_straight_line_oracle() {
    let cfg = EncoderConfig {
        d_in: 5,
        d_model: 8,
        d_ff: 12,
        d_k: 4,
        heads: 2,
        layers: 3,
        timestamp_base: 10000.0,
        decay_init: 0.05,
    };
    let mut rng = Rng::new(42);
    let mut params = ParamSet::new();
    let enc = Encoder::init(&mut params, &cfg, &mut rng).unwrap();
    // Non-neutral gates so the statistics path is exercised.
    for l in 0..3 {
        params
            .assign(&format!("encoder.layer{l}.gate.w"), Tensor::randn(4, 1, 0.5, &mut rng))
            .unwrap();
        params
            .assign(&format!("encoder.layer{l}.gate.b"), Tensor::scalar(0.1 * l as f64 - 0.1))
            .unwrap();
    }
    let x = Tensor::randn(5, 5, 1.0, &mut rng);
    let ts = [3.0, 4.0, 6.0, 7.0, 11.0];

    let got = enc.encode_values(&params, &x, &ts, AblationFlags::full()).unwrap();
    let want = stack(&x.to_rows(), &ts, &params, &cfg);
    let mut worst: f64 = 0.0;
    for (r, row) in want.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((got.get(r, c) - v).abs());
        }
    }
    assert!(worst < 1e-10, "max deviation {worst}");
}
