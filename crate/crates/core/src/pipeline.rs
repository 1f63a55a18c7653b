//! Run configuration and the end-to-end steps shared by the command line,
//! the ablation grid and the tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate, load_samples, read_manifest, synth, PlantedManifest, PreparedWindow, Preprocessor, SynthConfig,
    WindowConfig, WindowedSample,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fingerprint, planted_recovery, AprioriConfig, MetricsReport};
use crate::mining::{MinedRules, MiningConfig};
use crate::model::{Model, ModelConfig};
use crate::training::{fit, LogRow, TrainConfig};
use crate::transformer::AblationFlags;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generate planted-rule windows in memory.
    Synth(SynthConfig),
    /// A generator output directory or a turbofan-format text file.
    Path(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Share of units (in id order) used for training; the rest is held out.
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSource,
    pub split: SplitConfig,
    pub windowing: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub flags: AblationFlags,
    pub mining: MiningConfig,
    pub apriori: AprioriConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate()?;
        }
        self.windowing.validate()?;
        self.train.validate()?;
        self.mining.validate()?;
        self.model.encoder(1).validate()?;
        self.model.rule_engine().validate()
    }

    pub fn fingerprint(&self) -> Result<String> {
        fingerprint(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<WindowedSample>,
    pub manifest: Option<PlantedManifest>,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synth(s) => {
            let d = generate(s)?;
            Ok(Dataset {
                samples: d.samples,
                manifest: Some(d.manifest),
            })
        }
        DataSource::Path(p) => {
            let samples = load_samples(p, &cfg.windowing)?;
            let manifest = if p.is_dir() && p.join(synth::PLANTED_FILE).exists() {
                Some(read_manifest(p)?)
            } else {
                None
            };
            Ok(Dataset { samples, manifest })
        }
    }
}

/// Splits by unit: the first `fraction` of distinct unit ids (ascending)
/// go to training.
pub fn split_by_unit(samples: &[WindowedSample], fraction: f64) -> Result<(Vec<WindowedSample>, Vec<WindowedSample>)> {
    let mut units: Vec<u32> = samples.iter().map(|s| s.unit_id).collect();
    units.sort_unstable();
    units.dedup();
    if units.len() < 2 {
        return Err(Error::Input("need at least two units to split".into()));
    }
    let k = ((units.len() as f64 * fraction).round() as usize).clamp(1, units.len() - 1);
    let cut = units[k - 1];
    Ok(samples.iter().cloned().partition(|s| s.unit_id <= cut))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub pre: Preprocessor,
    pub train: Vec<PreparedWindow>,
    pub eval: Vec<PreparedWindow>,
    pub manifest: Option<PlantedManifest>,
}

pub fn prepare(cfg: &RunConfig, data: &Dataset) -> Result<Prepared> {
    let (train, eval) = split_by_unit(&data.samples, cfg.split.train_fraction)?;
    let pre = Preprocessor::fit(&train, &cfg.windowing)?;
    Ok(Prepared {
        train: pre.prepare_all(&train)?,
        eval: pre.prepare_all(&eval)?,
        pre,
        manifest: data.manifest.clone(),
    })
}

pub fn train_model(cfg: &RunConfig, data: &Prepared) -> Result<(Model, Vec<LogRow>)> {
    let mut model = Model::new(&cfg.model, cfg.flags, data.pre.d_in(), cfg.train.seed)?;
    let log = fit(&mut model, &data.train, &cfg.train, cfg.windowing.rul_cap)?;
    Ok((model, log))
}

/// Mines on the training split and scores on the held-out split.
pub fn evaluate_model(cfg: &RunConfig, model: &Model, data: &Prepared) -> Result<(MinedRules, MetricsReport)> {
    let bands = data.pre.bands.count();
    let (mined, mut report) = evaluate(model, &data.train, &data.eval, bands, &cfg.mining, &cfg.fingerprint()?)?;
    if let Some(m) = &data.manifest {
        report.recovery = Some(planted_recovery(&mined.rules, &m.rules));
    }
    Ok((mined, report))
}
