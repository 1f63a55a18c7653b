use serde::{Deserialize, Serialize};

use crate::attention::{temporal_step_weights, temporal_step_weights_values, Similarity};
use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity, softmax_rows, Binding, ParamId, ParamSet, Rng, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleEngineConfig {
    pub d_model: usize,
    pub d_r: usize,
    /// Codebook size.
    pub m: usize,
    pub temperature: f64,
    #[serde(default)]
    pub similarity: Similarity,
}

impl RuleEngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_r == 0 {
            return Err(Error::Config("rule dimensions must be positive".into()));
        }
        if self.m < 2 {
            return Err(Error::Config(format!("codebook size must be >= 2, got {}", self.m)));
        }
        check_temperature(self.temperature)
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

/// Gate and candidate weights of the rule recurrence. Both act on the
/// concatenation `[context; previous state]` as a row vector.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrenceParams {
    pub wz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub br: ParamId,
}

/// One gated step: `z = σ(u Wz + bz)`, `c = tanh(u Wr + br)`,
/// `r_t = (1 - z) ⊙ r_prev + z ⊙ c` with `u = [x_ctx, r_prev]`.
pub fn generate_rule_state(
    tape: &mut Tape,
    bind: &Binding,
    rec: &RecurrenceParams,
    x_ctx: Var,
    r_prev: Var,
) -> Result<Var> {
    let (sx, sr) = (tape.shape(x_ctx), tape.shape(r_prev));
    let sw = tape.shape(bind.var(rec.wz));
    if sx[0] != 1 || sr[0] != 1 || sx[1] + sr[1] != sw[0] || sw[1] != sr[1] {
        return Err(Error::Shape {
            op: "generate_rule_state",
            left: [sx[0], sx[1] + sr[1]],
            right: sw,
        });
    }
    let u = tape.concat_cols(x_ctx, r_prev)?;
    let z = tape.matmul(u, bind.var(rec.wz))?;
    let z = tape.add(z, bind.var(rec.bz))?;
    let z = tape.sigmoid(z);
    let c = tape.matmul(u, bind.var(rec.wr))?;
    let c = tape.add(c, bind.var(rec.br))?;
    let c = tape.tanh(c);
    let delta = tape.sub(c, r_prev)?;
    let step = tape.mul(z, delta)?;
    tape.add(r_prev, step)
}

/// Rule states of one sequence together with the step weights that built
/// their contexts.
#[derive(Clone, Copy, Debug)]
pub struct RuleTrace {
    /// `T×T`, column-stochastic.
    pub weights: Var,
    /// Attention-weighted contexts, `T×d_model`.
    pub contexts: Var,
    /// `T×d_r`.
    pub states: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleEngine {
    pub config: RuleEngineConfig,
    pub rec: RecurrenceParams,
    /// `m×d_r`.
    pub codebook: ParamId,
}

impl RuleEngine {
    pub fn init(params: &mut ParamSet, cfg: &RuleEngineConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let fan = cfg.d_model + cfg.d_r;
        let std = 1.0 / (fan as f64).sqrt();
        let rec = RecurrenceParams {
            wz: params.add("rules.wz", Tensor::randn(fan, cfg.d_r, std, rng)),
            bz: params.add("rules.bz", Tensor::zeros(1, cfg.d_r)),
            wr: params.add("rules.wr", Tensor::randn(fan, cfg.d_r, std, rng)),
            br: params.add("rules.br", Tensor::zeros(1, cfg.d_r)),
        };
        // Placeholder until the codebook is seeded from data.
        let codebook = params.add("rules.codebook", Tensor::randn(cfg.m, cfg.d_r, 1.0, rng));
        Ok(Self {
            config: cfg.clone(),
            rec,
            codebook,
        })
    }

    /// Runs the recurrence over encoder outputs `h` (`T×d_model`).
    pub fn trace(&self, tape: &mut Tape, bind: &Binding, h: Var) -> Result<RuleTrace> {
        let weights = temporal_step_weights(tape, h, self.config.similarity)?;
        let wt = tape.transpose(weights);
        let contexts = tape.matmul(wt, h)?;
        let t = tape.shape(h)[0];
        let mut r = tape.constant(Tensor::zeros(1, self.config.d_r));
        let mut rows = Vec::with_capacity(t);
        for step in 0..t {
            let c = tape.row(contexts, step)?;
            r = generate_rule_state(tape, bind, &self.rec, c, r)?;
            rows.push(r);
        }
        let states = tape.stack_rows(&rows)?;
        Ok(RuleTrace {
            weights,
            contexts,
            states,
        })
    }

    /// `p(code | state)` for every row of `states`: softmax of cosine
    /// similarity to each code over the temperature. `T×m`.
    pub fn assignment_probs(&self, tape: &mut Tape, bind: &Binding, states: Var) -> Var {
        let rn = tape.normalize_rows(states);
        let cn = tape.normalize_rows(bind.var(self.codebook));
        let ct = tape.transpose(cn);
        // Shapes agree by construction.
        let sims = tape.matmul(rn, ct).expect("state and code widths match");
        let scaled = tape.scale(sims, 1.0 / self.config.temperature);
        tape.softmax_rows(scaled)
    }
}

/// Column-stochastic step transition matrix over a sequence of rule states
/// (rows of `states`), using cosine similarity.
pub fn step_transition_matrix(states: &Tensor) -> Result<Tensor> {
    temporal_step_weights_values(states, Similarity::Cosine)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleAssignment {
    pub probabilities: Vec<f64>,
    pub code: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn assign_code(state: &[f64], codes: &Tensor, tau: f64) -> Result<RuleAssignment> {
    check_temperature(tau)?;
    if codes.cols() != state.len() {
        return Err(Error::Shape {
            op: "assign_code",
            left: [1, state.len()],
            right: codes.shape(),
        });
    }
    let sims = (0..codes.rows())
        .map(|j| Ok(cosine_similarity(state, codes.row_slice(j))? / tau))
        .collect::<Result<Vec<_>>>()?;
    let probs = softmax_rows(&Tensor::row(&sims)?).into_data();
    let code = argmax(&probs);
    Ok(RuleAssignment {
        probabilities: probs,
        code,
    })
}

/// Row-stochastic `m×m` matrix of next-code frequencies with one count of
/// Laplace smoothing per cell.
pub fn code_transition_counts(sequences: &[Vec<usize>], m: usize) -> Result<Tensor> {
    if m == 0 {
        return Err(Error::Config("codebook size must be positive".into()));
    }
    let mut counts = vec![0.0; m * m];
    let mut pairs = 0usize;
    for seq in sequences {
        for w in seq.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a >= m || b >= m {
                return Err(Error::Input(format!("code {} out of range for m={m}", a.max(b))));
            }
            counts[a * m + b] += 1.0;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Input("no consecutive code pairs in corpus".into()));
    }
    for row in counts.chunks_mut(m) {
        let total: f64 = row.iter().sum::<f64>() + m as f64;
        for v in row.iter_mut() {
            *v = (*v + 1.0) / total;
        }
    }
    Tensor::new(m, m, counts)
}

/// k-means++ seeding under cosine distance `1 - cos`.
///
/// Points that coincide exactly cannot seed distinct codes, so every chosen
/// code receives a small deterministic jitter.
pub fn kmeans_pp(points: &[Vec<f64>], m: usize, rng: &mut Rng) -> Result<Tensor> {
    let first = points
        .first()
        .ok_or_else(|| Error::Input("no points to seed the codebook".into()))?;
    let d = first.len();
    let dist = |a: &[f64], b: &[f64]| (1.0 - cosine_similarity(a, b).unwrap_or(0.0)).max(0.0);

    let mut chosen: Vec<Vec<f64>> = vec![points[rng.below(points.len())].clone()];
    let mut best: Vec<f64> = points.iter().map(|p| dist(p, &chosen[0])).collect();
    while chosen.len() < m {
        let weights: Vec<f64> = best.iter().map(|v| v * v).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 1e-300 {
            let mut u = rng.next_f64() * total;
            let mut idx = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.below(points.len())
        };
        let c = points[pick].clone();
        for (b, p) in best.iter_mut().zip(points) {
            *b = b.min(dist(p, &c));
        }
        chosen.push(c);
    }
    let scale = chosen
        .iter()
        .flatten()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-3);
    let data = chosen
        .into_iter()
        .flatten()
        .map(|v| v + 1e-3 * scale * rng.normal())
        .collect();
    Tensor::new(m, d, data)
}
