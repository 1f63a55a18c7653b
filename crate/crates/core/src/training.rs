//! Self-labelled likelihood training with an RUL side task and
//! drift-scaled learning rate.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PreparedWindow;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rules::argmax;
use crate::tensor::{backward, Binding, Gradients, ParamSet, Rng, Tape, Tensor, Var};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
/// Variance floor for the drift statistics.
pub const VAR_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub nll: f64,
    pub rul: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            nll: 1.0,
            rul: 1.0,
            entropy: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Optimizer steps (one batch each).
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Drift sensitivity of the learning rate.
    pub kappa: f64,
    pub weights: LossWeights,
    /// Weight of the mean pairwise code similarity inside the entropy term.
    pub repulsion: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// Windows whose rule states seed the codebook.
    pub codebook_sample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 16,
            lr: 1e-3,
            kappa: 1.0,
            weights: LossWeights::default(),
            repulsion: 0.1,
            ema_decay: 0.99,
            seed: 0,
            codebook_sample: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.kappa >= 0.0) {
            return Err(Error::Config("lr and kappa must be >= 0".into()));
        }
        let w = self.weights;
        if !(w.nll >= 0.0 && w.rul >= 0.0 && w.entropy >= 0.0) || !(self.repulsion >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `-Σ_t ln p_t(target_t)` over per-step probability rows.
pub fn rule_log_likelihood(probs: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::Input(format!(
            "{} probability rows for {} targets",
            probs.len(),
            targets.len()
        )));
    }
    probs
        .iter()
        .zip(targets)
        .map(|(row, &t)| {
            let p = row
                .get(t)
                .ok_or_else(|| Error::Input(format!("target code {t} out of range")))?;
            Ok(-p.max(PROB_FLOOR).ln())
        })
        .sum()
}

/// Tape form of [`rule_log_likelihood`] with targets taken as the argmax of
/// each row; the targets carry no gradient.
pub fn self_labelled_nll(tape: &mut Tape, probs: Var) -> Result<Var> {
    let p = tape.value(probs);
    let targets: Vec<usize> = (0..p.rows()).map(|t| argmax(p.row_slice(t))).collect();
    let picked = tape.pick_rows(probs, &targets)?;
    let logs = tape.ln(picked);
    let s = tape.sum(logs);
    Ok(tape.scale(s, -1.0))
}

/// Per-feature Gaussian moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Moments {
    /// Moments of every column over all rows of all matrices.
    pub fn of(rows: &[&Tensor]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Input("no rows for moments".into()))?;
        let d = first.cols();
        let mut mean = vec![0.0; d];
        let mut n = 0usize;
        for m in rows {
            for r in 0..m.rows() {
                for (a, v) in mean.iter_mut().zip(m.row_slice(r)) {
                    *a += v;
                }
            }
            n += m.rows();
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for m in rows {
            for r in 0..m.rows() {
                for ((a, v), mu) in var.iter_mut().zip(m.row_slice(r)).zip(&mean) {
                    *a += (v - mu).powi(2);
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        Ok(Self { mean, var })
    }
}

/// Mean over features of the symmetrized Gaussian KL,
/// `(KL(p‖q) + KL(q‖p)) / 2`, with variances floored at [`VAR_FLOOR`].
pub fn distribution_divergence(hist: &Moments, cur: &Moments) -> Result<f64> {
    let d = hist.mean.len();
    if d == 0 || [hist.var.len(), cur.mean.len(), cur.var.len()].iter().any(|&l| l != d) {
        return Err(Error::Input("moment vectors must share a positive length".into()));
    }
    let mut total = 0.0;
    for i in 0..d {
        let vp = hist.var[i].max(VAR_FLOOR);
        let vq = cur.var[i].max(VAR_FLOOR);
        let dm2 = (hist.mean[i] - cur.mean[i]).powi(2);
        total += 0.25 * (vp / vq + vq / vp - 2.0 + dm2 * (1.0 / vp + 1.0 / vq));
    }
    Ok(total / d as f64)
}

pub fn adaptive_learning_rate(base: f64, drift: f64, kappa: f64) -> f64 {
    base / (1.0 + kappa * drift)
}

/// Historical feature moments kept as an exponential moving average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftMonitor {
    pub decay: f64,
    pub historical: Option<Moments>,
    pub drift: f64,
}

impl DriftMonitor {
    pub fn new(decay: f64) -> Self {
        Self {
            decay,
            historical: None,
            drift: 0.0,
        }
    }

    /// Scores `current` against history, then folds it in.
    pub fn observe(&mut self, current: &Moments) -> Result<f64> {
        match &mut self.historical {
            None => {
                self.historical = Some(current.clone());
                self.drift = 0.0;
            }
            Some(h) => {
                self.drift = distribution_divergence(h, current)?;
                let a = self.decay;
                for i in 0..h.mean.len() {
                    h.mean[i] = a * h.mean[i] + (1.0 - a) * current.mean[i];
                    h.var[i] = a * h.var[i] + (1.0 - a) * current.var[i];
                }
            }
        }
        Ok(self.drift)
    }
}

/// Adaptive-moment optimizer over a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, bind: &Binding, grads: &Gradients, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(bind.var(id)) else { continue };
            let i = id.index();
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * gj;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * gj * gj;
                let mh = self.m[i][j] / c1;
                let vh = self.v[i][j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub nll: f64,
    pub rul_mse: f64,
    pub code_entropy_reg: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub nll: Var,
    pub rul_mse: Var,
    pub entropy: Var,
    pub total: Var,
}

/// Joint loss over a batch:
///
/// * `nll`: per-window self-labelled negative log-likelihood divided by `T`,
///   averaged over windows;
/// * `rul_mse`: squared error of the normalized RUL estimate;
/// * entropy term: `Σ p̄ ln p̄` of the batch's mean code distribution plus
///   `repulsion` times the mean pairwise cosine of the codes.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    bind: &Binding,
    batch: &[&PreparedWindow],
    cfg: &TrainConfig,
    rul_cap: f64,
) -> Result<LossVars> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut nlls = Vec::with_capacity(batch.len());
    let mut errs = Vec::with_capacity(batch.len());
    let mut marginals = Vec::with_capacity(batch.len());
    for w in batch {
        let g = model.graph(tape, bind, w)?;
        let t = tape.shape(g.probs)[0] as f64;
        let nll = self_labelled_nll(tape, g.probs)?;
        nlls.push(tape.scale(nll, 1.0 / t));
        let target = tape.constant(Tensor::scalar(w.rul_target(rul_cap)));
        let e = tape.sub(g.rul, target)?;
        errs.push(tape.mul(e, e)?);
        marginals.push(tape.mean_rows(g.probs));
    }
    let sum_all = |tape: &mut Tape, xs: &[Var]| -> Result<Var> {
        let stacked = tape.stack_rows(xs)?;
        Ok(tape.sum(stacked))
    };
    let nll = sum_all(tape, &nlls)?;
    let nll = tape.scale(nll, 1.0 / n);
    let mse = sum_all(tape, &errs)?;
    let mse = tape.scale(mse, 1.0 / n);

    let stacked = tape.stack_rows(&marginals)?;
    let pbar = tape.mean_rows(stacked);
    let logp = tape.ln(pbar);
    let plogp = tape.mul(pbar, logp)?;
    let neg_entropy = tape.sum(plogp);

    let m = model.config.m as f64;
    let codes = tape.normalize_rows(bind.var(model.rules.codebook));
    let ct = tape.transpose(codes);
    let gram = tape.matmul(codes, ct)?;
    let gsum = tape.sum(gram);
    let neg_diag = tape_const(tape, -m);
    let off = tape.add(gsum, neg_diag)?;
    let rep = tape.scale(off, 1.0 / (m * (m - 1.0)));
    let rep = tape.scale(rep, cfg.repulsion);
    let entropy = tape.add(neg_entropy, rep)?;

    let w = cfg.weights;
    let a = tape.scale(nll, w.nll);
    let b = tape.scale(mse, w.rul);
    let c = tape.scale(entropy, w.entropy);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(LossVars {
        nll,
        rul_mse: mse,
        entropy,
        total,
    })
}

fn tape_const(tape: &mut Tape, v: f64) -> Var {
    tape.constant(Tensor::scalar(v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub nll: f64,
    pub rul_mse: f64,
    pub entropy_reg: f64,
    pub total: f64,
    pub drift: f64,
    pub lr: f64,
}

/// Mutable training state carried across epochs.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub adam: Adam,
    pub monitor: DriftMonitor,
    pub step: usize,
}

impl TrainState {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Self {
        Self {
            adam: Adam::new(&model.params),
            monitor: DriftMonitor::new(cfg.ema_decay),
            step: 0,
        }
    }
}

/// One optimizer step per batch of window indices, in the given order.
pub fn train_epoch(
    model: &mut Model,
    windows: &[PreparedWindow],
    batches: &[Vec<usize>],
    state: &mut TrainState,
    cfg: &TrainConfig,
    rul_cap: f64,
) -> Result<Vec<LogRow>> {
    if batches.is_empty() {
        return Err(Error::Input("no batches".into()));
    }
    let mut log = Vec::with_capacity(batches.len());
    for (k, idx) in batches.iter().enumerate() {
        let batch: Vec<&PreparedWindow> = idx.iter().map(|&i| &windows[i]).collect();
        let feats: Vec<&Tensor> = batch.iter().map(|w| &w.features).collect();
        let drift = state.monitor.observe(&Moments::of(&feats)?)?;
        let lr = adaptive_learning_rate(cfg.lr, drift, cfg.kappa);

        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape, true);
        let loss = batch_loss(model, &mut tape, &bind, &batch, cfg, rul_cap)?;
        let terms = LossTerms {
            nll: tape.scalar_value(loss.nll),
            rul_mse: tape.scalar_value(loss.rul_mse),
            code_entropy_reg: tape.scalar_value(loss.entropy),
            total: tape.scalar_value(loss.total),
        };
        if !terms.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at batch {} (step {}): {terms:?}",
                k, state.step
            )));
        }
        let grads = backward(&tape, loss.total)?;
        state.adam.step(&mut model.params, &bind, &grads, lr);
        log.push(LogRow {
            step: state.step,
            nll: terms.nll,
            rul_mse: terms.rul_mse,
            entropy_reg: terms.code_entropy_reg,
            total: terms.total,
            drift,
            lr,
        });
        state.step += 1;
    }
    Ok(log)
}

/// Deterministic batch schedule: reshuffle on every pass over the data.
pub fn batch_schedule(n: usize, cfg: &TrainConfig) -> Vec<Vec<usize>> {
    let mut rng = Rng::stream(cfg.seed, "batching");
    let mut out = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut pos = 0;
    while out.len() < cfg.steps {
        if pos + cfg.batch_size.min(n) > order.len() {
            order = (0..n).collect();
            rng.shuffle(&mut order);
            pos = 0;
        }
        let take = cfg.batch_size.min(n);
        out.push(order[pos..pos + take].to_vec());
        pos += take;
    }
    out
}

/// Seeds the codebook, then runs `cfg.steps` optimizer steps.
pub fn fit(model: &mut Model, windows: &[PreparedWindow], cfg: &TrainConfig, rul_cap: f64) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Input("no training windows".into()));
    }
    // Zero steps leaves the model exactly at initialization.
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    let mut idx: Vec<usize> = (0..windows.len()).collect();
    Rng::stream(cfg.seed, "codebook.sample").shuffle(&mut idx);
    idx.truncate(cfg.codebook_sample.max(model.config.m));
    let sample: Vec<PreparedWindow> = idx.iter().map(|&i| windows[i].clone()).collect();
    model.seed_codebook(&sample, cfg.seed)?;
    let mut state = TrainState::new(model, cfg);
    let batches = batch_schedule(windows.len(), cfg);
    train_epoch(model, windows, &batches, &mut state, cfg, rul_cap)
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut out = String::from("step,nll,rul_mse,entropy_reg,total,drift,lr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.step, r.nll, r.rul_mse, r.entropy_reg, r.total, r.drift, r.lr
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
