//! Encoder, rule engine and RUL head bundled with their parameters.

use serde::{Deserialize, Serialize};

use crate::attention::Similarity;
use crate::data::PreparedWindow;
use crate::error::{Error, Result};
use crate::rules::{argmax, kmeans_pp, RuleEngine, RuleEngineConfig, RuleTrace};
use crate::tensor::{Binding, ParamId, ParamSet, Rng, Tape, Tensor, Var};
use crate::transformer::{AblationFlags, Encoder, EncoderConfig, StepContext};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub d_k: usize,
    pub heads: usize,
    /// Codebook size.
    pub m: usize,
    pub d_r: usize,
    pub temperature: f64,
    pub timestamp_base: f64,
    pub decay_init: f64,
    pub similarity: Similarity,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_ff: 64,
            layers: 2,
            d_k: 16,
            heads: 1,
            m: 16,
            d_r: 16,
            temperature: 0.2,
            timestamp_base: 10000.0,
            decay_init: 0.01,
            similarity: Similarity::Cosine,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self, d_in: usize) -> EncoderConfig {
        EncoderConfig {
            d_in,
            d_model: self.d_model,
            d_ff: self.d_ff,
            d_k: self.d_k,
            heads: self.heads,
            layers: self.layers,
            timestamp_base: self.timestamp_base,
            decay_init: self.decay_init,
        }
    }

    pub fn rule_engine(&self) -> RuleEngineConfig {
        RuleEngineConfig {
            d_model: self.d_model,
            d_r: self.d_r,
            m: self.m,
            temperature: self.temperature,
            similarity: self.similarity,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub flags: AblationFlags,
    pub d_in: usize,
    pub params: ParamSet,
    pub encoder: Encoder,
    pub rules: RuleEngine,
    pub rul_w: ParamId,
    pub rul_b: ParamId,
}

/// Graph handles for one window.
#[derive(Clone, Copy, Debug)]
pub struct WindowGraph {
    pub h: Var,
    pub trace: RuleTrace,
    /// `T×m` code probabilities.
    pub probs: Var,
    /// `1×1` normalized RUL estimate.
    pub rul: Var,
}

/// Model outputs for one window, without gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowAnalysis {
    /// Argmax code at every step.
    pub step_codes: Vec<usize>,
    /// Code of the final step.
    pub code: usize,
    /// Step weights of the final step (column `T-1` of the step weight matrix).
    pub step_weights: Vec<f64>,
    /// Final rule state.
    pub state: Vec<f64>,
    pub rul: f64,
}

impl Model {
    pub fn new(config: &ModelConfig, flags: AblationFlags, d_in: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::stream(seed, "init");
        let mut params = ParamSet::new();
        let encoder = Encoder::init(&mut params, &config.encoder(d_in), &mut rng)?;
        let rules = RuleEngine::init(&mut params, &config.rule_engine(), &mut rng)?;
        let rul_w = params.add(
            "head.rul.w",
            Tensor::randn(config.d_model, 1, 0.1 / (config.d_model as f64).sqrt(), &mut rng),
        );
        let rul_b = params.add("head.rul.b", Tensor::scalar(0.5));
        Ok(Self {
            config: config.clone(),
            flags,
            d_in,
            params,
            encoder,
            rules,
            rul_w,
            rul_b,
        })
    }

    /// Builds the graph of one window on `tape` with parameters from `bind`.
    pub fn graph(&self, tape: &mut Tape, bind: &Binding, w: &PreparedWindow) -> Result<WindowGraph> {
        let x = tape.constant(w.features.clone());
        let ctx = StepContext::new(tape, &self.encoder.encoding, &w.timestamps)?;
        let h = self.encoder.encode(tape, bind, x, ctx, self.flags)?;
        let trace = self.rules.trace(tape, bind, h)?;
        let probs = self.rules.assignment_probs(tape, bind, trace.states);
        let pooled = tape.mean_rows(h);
        let r = tape.matmul(pooled, bind.var(self.rul_w))?;
        let rul = tape.add(r, bind.var(self.rul_b))?;
        Ok(WindowGraph {
            h,
            trace,
            probs,
            rul,
        })
    }

    pub fn analyze(&self, w: &PreparedWindow) -> Result<WindowAnalysis> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, false);
        let g = self.graph(&mut tape, &bind, w)?;
        let probs = tape.value(g.probs);
        let step_codes: Vec<usize> = (0..probs.rows()).map(|t| argmax(probs.row_slice(t))).collect();
        let weights = tape.value(g.trace.weights);
        let last = weights.cols() - 1;
        let states = tape.value(g.trace.states);
        Ok(WindowAnalysis {
            code: *step_codes.last().expect("non-empty window"),
            step_codes,
            step_weights: weights.column_values(last),
            state: states.row_slice(states.rows() - 1).to_vec(),
            rul: tape.scalar_value(g.rul),
        })
    }

    /// Seeds the codebook by k-means++ over final rule states of `windows`.
    pub fn seed_codebook(&mut self, windows: &[PreparedWindow], seed: u64) -> Result<()> {
        let states = windows
            .iter()
            .map(|w| Ok(self.analyze(w)?.state))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = Rng::stream(seed, "codebook");
        let codes = kmeans_pp(&states, self.config.m, &mut rng)?;
        *self.params.get_mut(self.rules.codebook) = codes.with_grad();
        Ok(())
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            config: self.config.clone(),
            flags: self.flags,
            d_in: self.d_in,
            params: self
                .params
                .iter()
                .map(|(name, t)| NamedArray {
                    name: name.to_string(),
                    shape: t.shape(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let mut model = Self::new(&ck.config, ck.flags, ck.d_in, 0)?;
        if ck.params.len() != model.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model expects {}",
                ck.params.len(),
                model.params.len()
            )));
        }
        for p in &ck.params {
            let t = Tensor::new(p.shape[0], p.shape[1], p.data.clone())
                .map_err(|e| Error::Config(format!("parameter {}: {e}", p.name)))?;
            if !t.is_finite() {
                return Err(Error::Config(format!("parameter {} has non-finite values", p.name)));
            }
            model
                .params
                .assign(&p.name, t)
                .map_err(|e| Error::Config(format!("checkpoint does not match model: {e}")))?;
        }
        for layer in &model.encoder.layers {
            let lambda = layer.decay_rate(&model.params);
            if !(lambda >= 0.0) {
                return Err(Error::Config("decay rate must be >= 0".into()));
            }
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub flags: AblationFlags,
    pub d_in: usize,
    pub params: Vec<NamedArray>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Preprocessor, SynthConfig, WindowConfig};

    pub(crate) fn tiny_windows(n: usize) -> Vec<PreparedWindow> {
        let data = generate(&SynthConfig {
            seed: 1,
            rules: 1,
            windows: 100,
            sensors: Some(3),
            length: 16,
            trend_slope: 0.5,
            ..Default::default()
        })
        .unwrap();
        let wcfg = WindowConfig {
            length: 16,
            ..Default::default()
        };
        let pre = Preprocessor::fit(&data.samples, &wcfg).unwrap();
        pre.prepare_all(&data.samples[..n]).unwrap()
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig {
            d_model: 8,
            d_ff: 8,
            d_k: 4,
            m: 4,
            d_r: 4,
            ..Default::default()
        };
        let ws = tiny_windows(10);
        let mut model = Model::new(&cfg, AblationFlags::full(), 12, 3).unwrap();
        model.seed_codebook(&ws, 3).unwrap();
        let json = serde_json::to_string(&model.checkpoint()).unwrap();
        let back = Model::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.analyze(&ws[0]).unwrap(), model.analyze(&ws[0]).unwrap());

        let mut bad = model.checkpoint();
        bad.params[0].shape = [1, bad.params[0].data.len()];
        assert!(matches!(Model::from_checkpoint(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn analysis_is_consistent() {
        let cfg = ModelConfig {
            d_model: 8,
            d_ff: 8,
            d_k: 4,
            m: 4,
            d_r: 4,
            ..Default::default()
        };
        let ws = tiny_windows(3);
        let model = Model::new(&cfg, AblationFlags::full(), 12, 1).unwrap();
        let a = model.analyze(&ws[0]).unwrap();
        assert_eq!(a.step_codes.len(), 16);
        assert!((a.step_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.state.iter().all(|v| v.abs() < 1.0));
    }
}
