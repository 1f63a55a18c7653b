//! Encoder stack: attention sublayer scaled by a dynamic per-layer gate,
//! followed by a feedforward sublayer whose output decays with step age.
//!
//! Each layer computes
//!
//! ```text
//! H'  = H  + α · Attn(H, E)
//! H'' = H' + exp(-λ · age) ⊙ FFN(H')
//! ```
//!
//! with `α = 2·sigmoid(w·[mean, std, min, max](H) + b)` and `λ = softplus(ρ)`.
//! [`AblationFlags`] switch the three mechanisms off individually.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, TimestampEncoding};
use crate::error::{Error, Result};
use crate::tensor::{Binding, ParamId, ParamSet, Rng, Tape, Tensor, Var};

/// Mechanism switches for ablation runs. All `true` is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Timestamp injection into attention and the feedforward time decay.
    pub use_time_dependency: bool,
    pub use_dynamic_weights: bool,
    pub use_self_attention: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::full()
    }
}

impl AblationFlags {
    pub const VARIANTS: [&'static str; 4] = [
        "full",
        "no_time_dependency",
        "no_dynamic_weights",
        "no_self_attention",
    ];

    pub fn full() -> Self {
        Self {
            use_time_dependency: true,
            use_dynamic_weights: true,
            use_self_attention: true,
        }
    }

    pub fn none() -> Self {
        Self {
            use_time_dependency: false,
            use_dynamic_weights: false,
            use_self_attention: false,
        }
    }

    pub fn variant(name: &str) -> Option<Self> {
        let full = Self::full();
        match name {
            "full" => Some(full),
            "no_time_dependency" => Some(Self {
                use_time_dependency: false,
                ..full
            }),
            "no_dynamic_weights" => Some(Self {
                use_dynamic_weights: false,
                ..full
            }),
            "no_self_attention" => Some(Self {
                use_self_attention: false,
                ..full
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub d_k: usize,
    pub heads: usize,
    pub layers: usize,
    pub timestamp_base: f64,
    /// Initial decay rate λ of every layer.
    pub decay_init: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_in", self.d_in),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("d_k", self.d_k),
            ("heads", self.heads),
            ("layers", self.layers),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.decay_init > 0.0 && self.decay_init.is_finite()) {
            return Err(Error::Config("decay_init must be positive".into()));
        }
        if !(self.timestamp_base > 1.0) {
            return Err(Error::Config("timestamp_base must exceed 1".into()));
        }
        Ok(())
    }
}

/// Maps `[mean, std, min, max]` of the layer input to the gate logit.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub attn: AttentionParams,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    /// Unconstrained; the decay rate is `softplus(decay_rho) >= 0`.
    pub decay_rho: ParamId,
    pub gate: GateParams,
}

/// Inverse of softplus, for initialising `ρ` from a target `λ`.
pub fn inverse_softplus(lambda: f64) -> f64 {
    if lambda > 30.0 {
        lambda
    } else {
        lambda.exp_m1().ln()
    }
}

impl EncoderLayer {
    pub fn init(params: &mut ParamSet, prefix: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        let attn = AttentionParams::init(
            params,
            &format!("{prefix}.attn"),
            cfg.d_model,
            cfg.d_k,
            cfg.heads,
            rng,
        );
        let (dm, dff) = (cfg.d_model, cfg.d_ff);
        let w1 = params.add(
            format!("{prefix}.ffn.w1"),
            Tensor::randn(dm, dff, 1.0 / (dm as f64).sqrt(), rng),
        );
        let b1 = params.add(format!("{prefix}.ffn.b1"), Tensor::zeros(1, dff));
        let w2 = params.add(
            format!("{prefix}.ffn.w2"),
            Tensor::randn(dff, dm, 1.0 / (dff as f64).sqrt(), rng),
        );
        let b2 = params.add(format!("{prefix}.ffn.b2"), Tensor::zeros(1, dm));
        let decay_rho = params.add(
            format!("{prefix}.decay_rho"),
            Tensor::scalar(inverse_softplus(cfg.decay_init)),
        );
        let gate = GateParams {
            w: params.add(format!("{prefix}.gate.w"), Tensor::zeros(4, 1)),
            b: params.add(format!("{prefix}.gate.b"), Tensor::zeros(1, 1)),
        };
        Self {
            attn,
            w1,
            b1,
            w2,
            b2,
            decay_rho,
            gate,
        }
    }

    /// Current decay rate `λ = softplus(ρ)`.
    pub fn decay_rate(&self, params: &ParamSet) -> f64 {
        crate::tensor::softplus(params.get(self.decay_rho).data()[0])
    }
}

/// Summary statistics `[mean, std, min, max]` of all entries of `h`, as `1×4`.
fn activation_stats(tape: &mut Tape, h: Var) -> Result<Var> {
    let mean = tape.mean(h);
    let centered = tape.sub(h, mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean(sq);
    let std = tape.sqrt(var);
    let min = tape.min(h);
    let max = tape.max(h);
    let a = tape.concat_cols(mean, std)?;
    let b = tape.concat_cols(a, min)?;
    tape.concat_cols(b, max)
}

/// Dynamic layer weight `α = 2·sigmoid(w·stats(H) + b)`, a `1×1` value in `(0, 2)`.
pub fn dynamic_weight(tape: &mut Tape, bind: &Binding, gate: &GateParams, h: Var) -> Result<Var> {
    let stats = activation_stats(tape, h)?;
    let logit = tape.matmul(stats, bind.var(gate.w))?;
    let logit = tape.add(logit, bind.var(gate.b))?;
    let s = tape.sigmoid(logit);
    Ok(tape.scale(s, 2.0))
}

/// Two-layer GELU feedforward of `h`, optionally scaled per step by `exp(-λ·age)`.
///
/// `ages` is a `T×1` column of non-negative cycle ages; `None` disables the decay.
pub fn time_decay_ffn(
    tape: &mut Tape,
    bind: &Binding,
    layer: &EncoderLayer,
    h: Var,
    ages: Option<Var>,
) -> Result<Var> {
    let a = tape.matmul(h, bind.var(layer.w1))?;
    let a = tape.add(a, bind.var(layer.b1))?;
    let a = tape.gelu(a);
    let f = tape.matmul(a, bind.var(layer.w2))?;
    let f = tape.add(f, bind.var(layer.b2))?;
    let Some(ages) = ages else { return Ok(f) };

    let t = tape.shape(h)[0];
    if tape.shape(ages) != [t, 1] {
        return Err(Error::Shape {
            op: "time_decay_ffn(ages)",
            left: tape.shape(h),
            right: tape.shape(ages),
        });
    }
    if let Some(bad) = tape.value(ages).data().iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Input(format!("step ages must be finite and >= 0, got {bad}")));
    }
    let lambda = tape.softplus(bind.var(layer.decay_rho));
    let scaled = tape.mul(ages, lambda)?;
    let neg = tape.scale(scaled, -1.0);
    let decay = tape.exp(neg);
    tape.mul(f, decay)
}

/// Per-sequence constants consumed by the encoder.
#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    /// Timestamp encoding, `T×d_k`.
    pub encoding: Var,
    /// Step ages `t_last - t_i`, `T×1`.
    pub ages: Var,
}

impl StepContext {
    pub fn new(tape: &mut Tape, encoding: &TimestampEncoding, timestamps: &[f64]) -> Result<Self> {
        let enc = encoding.encode_all(timestamps)?;
        let ages = step_ages(timestamps)?;
        Ok(Self {
            encoding: tape.constant(enc),
            ages: tape.constant(ages),
        })
    }
}

/// Ages `t_last - t_i` as a `T×1` column.
pub fn step_ages(timestamps: &[f64]) -> Result<Tensor> {
    let last = *timestamps
        .last()
        .ok_or_else(|| Error::Input("empty timestamp list".into()))?;
    let ages: Vec<f64> = timestamps.iter().map(|t| last - t).collect();
    Tensor::column(&ages)
}

pub fn layer_forward(
    tape: &mut Tape,
    bind: &Binding,
    layer: &EncoderLayer,
    h: Var,
    ctx: StepContext,
    flags: AblationFlags,
) -> Result<Var> {
    let h1 = if flags.use_self_attention {
        let enc = flags.use_time_dependency.then_some(ctx.encoding);
        let (attn, _) = layer.attn.forward(tape, bind, h, enc)?;
        let attn = if flags.use_dynamic_weights {
            let alpha = dynamic_weight(tape, bind, &layer.gate, h)?;
            tape.mul(attn, alpha)?
        } else {
            attn
        };
        tape.add(h, attn)?
    } else {
        h
    };
    let ages = flags.use_time_dependency.then_some(ctx.ages);
    let ffn = time_decay_ffn(tape, bind, layer, h1, ages)?;
    tape.add(h1, ffn)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub encoding: TimestampEncoding,
}

impl Encoder {
    pub fn init(params: &mut ParamSet, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let w_in = params.add(
            "encoder.input.w",
            Tensor::randn(cfg.d_in, cfg.d_model, 1.0 / (cfg.d_in as f64).sqrt(), rng),
        );
        let b_in = params.add("encoder.input.b", Tensor::zeros(1, cfg.d_model));
        let layers = (0..cfg.layers)
            .map(|l| EncoderLayer::init(params, &format!("encoder.layer{l}"), cfg, rng))
            .collect();
        Ok(Self {
            config: cfg.clone(),
            w_in,
            b_in,
            layers,
            encoding: TimestampEncoding::new(cfg.d_k, cfg.timestamp_base),
        })
    }

    /// Input projection followed by every layer.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        x: Var,
        ctx: StepContext,
        flags: AblationFlags,
    ) -> Result<Var> {
        let sx = tape.shape(x);
        if sx[1] != self.config.d_in {
            return Err(Error::Shape {
                op: "encode(x)",
                left: sx,
                right: [self.config.d_in, self.config.d_model],
            });
        }
        let h = tape.matmul(x, bind.var(self.w_in))?;
        let mut h = tape.add(h, bind.var(self.b_in))?;
        for layer in &self.layers {
            h = layer_forward(tape, bind, layer, h, ctx, flags)?;
        }
        Ok(h)
    }

    /// Tensor-level [`Encoder::encode`].
    pub fn encode_values(
        &self,
        params: &ParamSet,
        x: &Tensor,
        timestamps: &[f64],
        flags: AblationFlags,
    ) -> Result<Tensor> {
        if timestamps.len() != x.rows() {
            return Err(Error::Shape {
                op: "encode(timestamps)",
                left: x.shape(),
                right: [timestamps.len(), 1],
            });
        }
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let ctx = StepContext::new(&mut tape, &self.encoding, timestamps)?;
        let h = self.encode(&mut tape, &bind, xv, ctx, flags)?;
        Ok(tape.value(h).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, param_gradient_check};

    fn small_cfg(layers: usize) -> EncoderConfig {
        EncoderConfig {
            d_in: 3,
            d_model: 4,
            d_ff: 6,
            d_k: 4,
            heads: 1,
            layers,
            timestamp_base: 10000.0,
            decay_init: 0.1,
        }
    }

    struct Fixture {
        params: ParamSet,
        enc: Encoder,
    }

    fn fixture(layers: usize, seed: u64) -> Fixture {
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, &small_cfg(layers), &mut Rng::new(seed)).unwrap();
        Fixture { params, enc }
    }

    fn plain_ffn(tape: &mut Tape, bind: &Binding, layer: &EncoderLayer, h: Var) -> Var {
        time_decay_ffn(tape, bind, layer, h, None).unwrap()
    }

    #[test]
    fn decay_reductions() {
        let f = fixture(1, 1);
        let layer = &f.enc.layers[0];
        let h = Tensor::randn(3, 4, 1.0, &mut Rng::new(2));
        let mut params = f.params.clone();

        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let plain = plain_ffn(&mut tape, &bind, layer, hv);
        let zero_ages = tape.constant(Tensor::zeros(3, 1));
        let same = time_decay_ffn(&mut tape, &bind, layer, hv, Some(zero_ages)).unwrap();
        assert_eq!(tape.value(plain), tape.value(same));

        // λ = ln 2 with age 1 halves the sublayer output.
        params.assign(&format!("encoder.layer0.decay_rho"), Tensor::scalar(inverse_softplus(2f64.ln()))).unwrap();
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let plain = plain_ffn(&mut tape, &bind, layer, hv);
        let ones = tape.constant(Tensor::filled(3, 1, 1.0));
        let half = time_decay_ffn(&mut tape, &bind, layer, hv, Some(ones)).unwrap();
        let expect = tape.value(plain).map(|v| v * 0.5);
        assert!(tape.value(half).max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn zero_lambda_is_plain_ffn() {
        let f = fixture(1, 1);
        let layer = &f.enc.layers[0];
        let mut params = f.params.clone();
        // softplus(-800) underflows to exactly 0.
        params.assign("encoder.layer0.decay_rho", Tensor::scalar(-800.0)).unwrap();
        assert_eq!(layer.decay_rate(&params), 0.0);
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, false);
        let hv = tape.constant(Tensor::randn(3, 4, 1.0, &mut Rng::new(5)));
        let plain = plain_ffn(&mut tape, &bind, layer, hv);
        let ages = tape.constant(Tensor::column(&[2.0, 1.0, 0.0]).unwrap());
        let d = time_decay_ffn(&mut tape, &bind, layer, hv, Some(ages)).unwrap();
        assert_eq!(tape.value(plain), tape.value(d));
    }

    #[test]
    fn negative_age_rejected() {
        let f = fixture(1, 1);
        let mut tape = Tape::new();
        let bind = f.params.bind(&mut tape, false);
        let hv = tape.constant(Tensor::zeros(2, 4));
        let ages = tape.constant(Tensor::column(&[-1.0, 0.0]).unwrap());
        let r = time_decay_ffn(&mut tape, &bind, &f.enc.layers[0], hv, Some(ages));
        assert!(matches!(r, Err(Error::Input(_))));
    }

    fn alpha(params: &ParamSet, gate: &GateParams, h: &Tensor) -> f64 {
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, false);
        let hv = tape.constant(h.clone());
        let a = dynamic_weight(&mut tape, &bind, gate, hv).unwrap();
        tape.scalar_value(a)
    }

    #[test]
    fn gate_cases() {
        let f = fixture(1, 3);
        let gate = &f.enc.layers[0].gate;
        let h = Tensor::randn(4, 4, 2.0, &mut Rng::new(4));
        assert_eq!(alpha(&f.params, gate, &h), 1.0);

        let mut p = f.params.clone();
        p.assign("encoder.layer0.gate.b", Tensor::scalar(20.0)).unwrap();
        let a = alpha(&p, gate, &h);
        assert!(a < 2.0 && a > 2.0 - 1e-8);

        let mut p = f.params.clone();
        p.assign("encoder.layer0.gate.w", Tensor::column(&[1.0, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let centered = Tensor::from_rows(&[vec![1.0, -1.0, 2.0, -2.0], vec![0.5, -0.5, 3.0, -3.0]])
            .unwrap();
        assert_eq!(alpha(&p, gate, &centered), 1.0);
    }

    #[test]
    fn all_flags_off_is_ffn_residual() {
        let f = fixture(1, 7);
        let layer = &f.enc.layers[0];
        let mut tape = Tape::new();
        let bind = f.params.bind(&mut tape, false);
        let h = tape.constant(Tensor::randn(5, 4, 1.0, &mut Rng::new(8)));
        let ctx = StepContext::new(&mut tape, &f.enc.encoding, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let out = layer_forward(&mut tape, &bind, layer, h, ctx, AblationFlags::none()).unwrap();
        let ffn = plain_ffn(&mut tape, &bind, layer, h);
        let expect = tape.add(h, ffn).unwrap();
        assert_eq!(tape.value(out), tape.value(expect));
    }

    #[test]
    fn null_time_and_neutral_gate_reduce_to_plain_attention() {
        let f = fixture(2, 9);
        let x = Tensor::randn(5, 3, 1.0, &mut Rng::new(10));
        let plain_flags = AblationFlags {
            use_time_dependency: false,
            use_dynamic_weights: false,
            use_self_attention: true,
        };
        let run = |flags: AblationFlags, enc: &TimestampEncoding| {
            let mut tape = Tape::new();
            let bind = f.params.bind(&mut tape, false);
            let xv = tape.constant(x.clone());
            let ctx = StepContext::new(&mut tape, enc, &[0.0; 5]).unwrap();
            let h = f.enc.encode(&mut tape, &bind, xv, ctx, flags).unwrap();
            tape.value(h).clone()
        };
        let full = run(AblationFlags::full(), &TimestampEncoding::null(4));
        let plain = run(plain_flags, &f.enc.encoding);
        assert_eq!(full, plain);
    }

    #[test]
    fn output_shape_for_every_flag_combination() {
        let f = fixture(2, 11);
        let x = Tensor::randn(6, 3, 1.0, &mut Rng::new(12));
        let ts: Vec<f64> = (10..16).map(f64::from).collect();
        for bits in 0..8u8 {
            let flags = AblationFlags {
                use_time_dependency: bits & 1 != 0,
                use_dynamic_weights: bits & 2 != 0,
                use_self_attention: bits & 4 != 0,
            };
            let h = f.enc.encode_values(&f.params, &x, &ts, flags).unwrap();
            assert_eq!(h.shape(), [6, 4]);
            assert!(h.is_finite());
        }
    }

    #[test]
    fn deterministic() {
        let a = fixture(2, 42);
        let b = fixture(2, 42);
        let x = Tensor::randn(4, 3, 1.0, &mut Rng::new(1));
        let ts = [1.0, 2.0, 3.0, 4.0];
        let ha = a.enc.encode_values(&a.params, &x, &ts, AblationFlags::full()).unwrap();
        let hb = b.enc.encode_values(&b.params, &x, &ts, AblationFlags::full()).unwrap();
        assert_eq!(ha, hb);
    }

    #[test]
    fn disabled_mechanisms_get_zero_gradients() {
        let f = fixture(2, 13);
        let x = Tensor::randn(4, 3, 1.0, &mut Rng::new(14));
        let ts = [3.0, 5.0, 6.0, 9.0];
        let mut tape = Tape::new();
        let bind = f.params.bind(&mut tape, true);
        let xv = tape.constant(x);
        let ctx = StepContext::new(&mut tape, &f.enc.encoding, &ts).unwrap();
        let h = f.enc.encode(&mut tape, &bind, xv, ctx, AblationFlags::none()).unwrap();
        let loss = tape.mean(h);
        let grads = backward(&tape, loss).unwrap();
        for (id, (name, _)) in f.params.ids().zip(f.params.iter()) {
            let g = grads.get(bind.var(id)).unwrap();
            let disabled = name.contains(".attn.") || name.contains(".gate.") || name.contains("decay");
            let all_zero = g.data().iter().all(|&v| v == 0.0);
            if disabled {
                assert!(all_zero, "{name} should have zero gradient");
            } else {
                assert!(!all_zero, "{name} should have gradient");
            }
        }
    }

    #[test]
    fn encode_gradients_pass_check() {
        let f = fixture(2, 15);
        let x = Tensor::randn(4, 3, 1.0, &mut Rng::new(16));
        let ts = [1.0, 2.0, 4.0, 7.0];
        let probe = Tensor::randn(4, 4, 1.0, &mut Rng::new(17));
        let report = param_gradient_check(&f.params, 1e-5, |tape, bind| {
            let xv = tape.constant(x.clone());
            let ctx = StepContext::new(tape, &f.enc.encoding, &ts)?;
            let h = f.enc.encode(tape, bind, xv, ctx, AblationFlags::full())?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(h, p)?;
            Ok(tape.mean(m))
        })
        .unwrap();
        for (name, err) in report {
            assert!(err < 1e-4, "{name}: {err}");
        }
    }
}
