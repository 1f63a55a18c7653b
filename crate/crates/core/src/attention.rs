//! Scaled dot-product attention, timestamp-injected attention and
//! similarity-based temporal step weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Binding, ParamId, ParamSet, Rng, Tape, Tensor, Var};

/// Similarity used by the temporal step weights and the transition matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Cosine,
    Dot,
}

/// Maps a scalar timestamp to a `d_k` vector.
///
/// The sinusoidal form alternates `sin`/`cos` with geometric frequencies
/// `base^(-2p/d_k)`. The null form maps everything to zeros, which reduces
/// timestamp attention to plain attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestampEncoding {
    pub d_k: usize,
    pub base: f64,
    #[serde(default)]
    pub null: bool,
}

impl TimestampEncoding {
    pub fn new(d_k: usize, base: f64) -> Self {
        Self {
            d_k,
            base,
            null: false,
        }
    }

    pub fn null(d_k: usize) -> Self {
        Self {
            d_k,
            base: 10000.0,
            null: true,
        }
    }

    pub fn encode(&self, t: f64) -> Vec<f64> {
        if self.null {
            return vec![0.0; self.d_k];
        }
        (0..self.d_k)
            .map(|i| {
                let pair = (i / 2) as f64;
                let freq = self.base.powf(-2.0 * pair / self.d_k as f64);
                if i % 2 == 0 {
                    (t * freq).sin()
                } else {
                    (t * freq).cos()
                }
            })
            .collect()
    }

    /// One encoded row per timestamp.
    pub fn encode_all(&self, timestamps: &[f64]) -> Result<Tensor> {
        let data = timestamps.iter().flat_map(|&t| self.encode(t)).collect();
        Tensor::new(timestamps.len(), self.d_k, data)
    }
}

fn check_qkv(tape: &Tape, q: Var, k: Var, v: Var) -> Result<()> {
    let (sq, sk, sv) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if sq[1] != sk[1] {
        return Err(Error::Shape {
            op: "attention(q, k)",
            left: sq,
            right: sk,
        });
    }
    if sk[0] != sv[0] {
        return Err(Error::Shape {
            op: "attention(k, v)",
            left: sk,
            right: sv,
        });
    }
    Ok(())
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V`; returns `(output, weights)`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    check_qkv(tape, q, k, v)?;
    let d_k = tape.shape(q)[1] as f64;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / d_k.sqrt());
    let weights = tape.softmax_rows(scaled);
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Attention with the timestamp encoding `enc` (one row per step) added to
/// every query and key row before scoring.
pub fn timestamp_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    enc: Var,
) -> Result<(Var, Var)> {
    check_qkv(tape, q, k, v)?;
    let (sq, se) = (tape.shape(q), tape.shape(enc));
    if se != sq || tape.shape(k) != sq {
        return Err(Error::Shape {
            op: "timestamp_attention(q, encoding)",
            left: sq,
            right: se,
        });
    }
    let qe = tape.add(q, enc)?;
    let ke = tape.add(k, enc)?;
    scaled_dot_attention(tape, qe, ke, v)
}

/// Pairwise similarity matrix of the rows of `x`.
pub fn similarity_matrix(tape: &mut Tape, x: Var, sim: Similarity) -> Result<Var> {
    let base = match sim {
        Similarity::Cosine => tape.normalize_rows(x),
        Similarity::Dot => x,
    };
    let bt = tape.transpose(base);
    tape.matmul(base, bt)
}

/// `A[i,t] = exp(sim(x_i, x_t)) / Σ_j exp(sim(x_j, x_t))`.
///
/// Normalisation runs over `i` for each fixed `t`, so every column of `A`
/// sums to one.
pub fn temporal_step_weights(tape: &mut Tape, x: Var, sim: Similarity) -> Result<Var> {
    let s = similarity_matrix(tape, x, sim)?;
    let st = tape.transpose(s);
    let rows = tape.softmax_rows(st);
    Ok(tape.transpose(rows))
}

/// Tensor-level [`scaled_dot_attention`].
pub fn scaled_dot_attention_values(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let (qv, kv, vv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let (o, w) = scaled_dot_attention(&mut tape, qv, kv, vv)?;
    Ok((tape.value(o).clone(), tape.value(w).clone()))
}

/// Tensor-level [`timestamp_attention`] with the encoding computed from `timestamps`.
pub fn timestamp_attention_values(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    timestamps: &[f64],
    encoding: &TimestampEncoding,
) -> Result<(Tensor, Tensor)> {
    if timestamps.len() != q.rows() {
        return Err(Error::Shape {
            op: "timestamp_attention(timestamps)",
            left: q.shape(),
            right: [timestamps.len(), 1],
        });
    }
    let enc = encoding.encode_all(timestamps)?;
    let mut tape = Tape::new();
    let (qv, kv, vv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let ev = tape.constant(enc);
    let (o, w) = timestamp_attention(&mut tape, qv, kv, vv, ev)?;
    Ok((tape.value(o).clone(), tape.value(w).clone()))
}

/// Tensor-level [`temporal_step_weights`].
pub fn temporal_step_weights_values(x: &Tensor, sim: Similarity) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let a = temporal_step_weights(&mut tape, xv, sim)?;
    Ok(tape.value(a).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

/// Projection matrices for one (possibly multi-head) attention sublayer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub d_model: usize,
    pub d_k: usize,
    pub heads: Vec<HeadParams>,
    pub wo: ParamId,
}

impl AttentionParams {
    pub fn init(
        params: &mut ParamSet,
        prefix: &str,
        d_model: usize,
        d_k: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        let std_in = 1.0 / (d_model as f64).sqrt();
        let heads = (0..heads)
            .map(|h| HeadParams {
                wq: params.add(
                    format!("{prefix}.head{h}.wq"),
                    Tensor::randn(d_model, d_k, std_in, rng),
                ),
                wk: params.add(
                    format!("{prefix}.head{h}.wk"),
                    Tensor::randn(d_model, d_k, std_in, rng),
                ),
                wv: params.add(
                    format!("{prefix}.head{h}.wv"),
                    Tensor::randn(d_model, d_k, std_in, rng),
                ),
            })
            .collect::<Vec<_>>();
        let cat = d_k * heads.len();
        let wo = params.add(
            format!("{prefix}.wo"),
            Tensor::randn(cat, d_model, 1.0 / (cat as f64).sqrt(), rng),
        );
        Self {
            d_model,
            d_k,
            heads,
            wo,
        }
    }

    /// Self-attention over `h` (`T×d_model`). With `enc` the timestamp
    /// encoding joins every head's queries and keys.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        h: Var,
        enc: Option<Var>,
    ) -> Result<(Var, Vec<Var>)> {
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (wq, wk, wv) = (bind.var(head.wq), bind.var(head.wk), bind.var(head.wv));
            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let (o, w) = match enc {
                Some(e) => timestamp_attention(tape, q, k, v, e)?,
                None => scaled_dot_attention(tape, q, k, v)?,
            };
            outs.push(o);
            weights.push(w);
        }
        let mut cat = outs[0];
        for &o in &outs[1..] {
            cat = tape.concat_cols(cat, o)?;
        }
        let out = tape.matmul(cat, bind.var(self.wo))?;
        Ok((out, weights))
    }
}
