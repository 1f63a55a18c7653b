//! Subcommands behind the `rule-miner` binary.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{write_synth, generate, Preprocessor, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{
    apriori_baseline, evaluate_rules, export_figures, planted_recovery, run_ablations, write_ablation,
    MetricsReport,
};
use crate::mining::mine;
use crate::model::{Model, ModelCheckpoint};
use crate::pipeline::{evaluate_model, load_dataset, prepare, train_model, DataSource, Prepared, RunConfig};
use crate::training::write_log_csv;

#[derive(Debug, Parser)]
#[command(name = "rule-miner", version, about = "Mine time-dependent rules from sensor windows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-rule dataset and its manifest.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rules: Option<usize>,
        #[arg(long)]
        windows: Option<usize>,
        /// JSON generator settings; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json and train_log.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine rules on the training split; writes rules.json.
    Mine(CheckpointArgs),
    /// Score mined rules and the itemset baseline on the held-out split.
    Eval(CheckpointArgs),
    /// Run the four-variant ablation grid; writes ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Write the timeline, support and correlation tables.
    Export(CheckpointArgs),
}

#[derive(Debug, clap::Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to use instead of the one recorded in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to reuse a trained model on new data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunCheckpoint {
    pub run: RunConfig,
    pub preprocessor: Preprocessor,
    pub model: ModelCheckpoint,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const RULES_FILE: &str = "rules.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TIMING_FILE: &str = "timing.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<RunCheckpoint> {
    let path = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint and re-prepares data with its fitted preprocessor.
fn restore(args: &CheckpointArgs) -> Result<(RunConfig, Model, Prepared)> {
    let ck = read_checkpoint(&args.checkpoint)?;
    let mut run = ck.run;
    if let Some(p) = &args.data {
        if !p.exists() {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
        }
        run.data = DataSource::Path(p.clone());
    }
    let model = Model::from_checkpoint(&ck.model)?;
    if model.d_in != ck.preprocessor.d_in() {
        return Err(Error::Config(format!(
            "checkpoint expects {} inputs but its preprocessor yields {}",
            model.d_in,
            ck.preprocessor.d_in()
        )));
    }
    let data = load_dataset(&run)?;
    let (train, eval) = crate::pipeline::split_by_unit(&data.samples, run.split.train_fraction)?;
    let pre = ck.preprocessor;
    let prepared = Prepared {
        train: pre.prepare_all(&train)?,
        eval: pre.prepare_all(&eval)?,
        pre,
        manifest: data.manifest,
    };
    Ok((run, model, prepared))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model: &'a MetricsReport,
    apriori: &'a MetricsReport,
}

#[derive(Serialize)]
struct Timing {
    mining_seconds: f64,
    apriori_seconds: f64,
}

/// Runs one subcommand; the returned line is printed on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth {
            seed,
            rules,
            windows,
            config,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => SynthConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.rules = rules.unwrap_or(cfg.rules);
            cfg.windows = windows.unwrap_or(cfg.windows);
            let data = generate(&cfg)?;
            write_synth(&out, &data)?;
            Ok(format!(
                "wrote {} windows with {} planted rules to {}",
                data.samples.len(),
                data.manifest.rules.len(),
                out.display()
            ))
        }
        Command::Train { config, out } => {
            let run = RunConfig::load(&config)?;
            let data = load_dataset(&run)?;
            let prepared = prepare(&run, &data)?;
            let (model, log) = train_model(&run, &prepared)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_json(
                &out.join(CHECKPOINT_FILE),
                &RunCheckpoint {
                    run,
                    preprocessor: prepared.pre,
                    model: model.checkpoint(),
                },
            )?;
            write_log_csv(&out.join(LOG_FILE), &log)?;
            let last = log.last().map_or(f64::NAN, |r| r.total);
            Ok(format!("trained {} steps, final loss {last:.6}", log.len()))
        }
        Command::Mine(args) => {
            let (run, model, data) = restore(&args)?;
            let mined = mine(&model, &data.train, data.pre.bands.count(), &run.mining)?;
            write_json(&args.out.join(RULES_FILE), &mined.rules)?;
            Ok(format!("mined {} rules", mined.rules.len()))
        }
        Command::Eval(args) => {
            let (run, model, data) = restore(&args)?;
            let (_, report) = evaluate_model(&run, &model, &data)?;
            let start = std::time::Instant::now();
            let base_rules = apriori_baseline(&data.train, &run.apriori, &run.mining.predicates)?;
            let apriori_seconds = start.elapsed().as_secs_f64();
            let mut base = evaluate_rules(&base_rules, &data.eval, &run.mining.predicates, &report.fingerprint)?;
            if let Some(m) = &data.manifest {
                base.recovery = Some(planted_recovery(&base_rules, &m.rules));
            }
            write_json(
                &args.out.join(METRICS_FILE),
                &EvalOutput {
                    model: &report,
                    apriori: &base,
                },
            )?;
            write_json(
                &args.out.join(TIMING_FILE),
                &Timing {
                    mining_seconds: report.wall_time_seconds,
                    apriori_seconds,
                },
            )?;
            Ok(format!(
                "accuracy {:.6} coverage {:.6} over {} rules",
                report.rule_mining_accuracy, report.rule_coverage, report.rule_count
            ))
        }
        Command::Ablate { config, out, seeds } => {
            let run = RunConfig::load(&config)?;
            let data = prepare(&run, &load_dataset(&run)?)?;
            let seeds = seeds.unwrap_or_else(|| run.ablation.seeds.clone());
            if seeds.len() < 3 {
                return Err(Error::Config(format!("ablation needs at least 3 seeds, got {}", seeds.len())));
            }
            let (rows, cells) = run_ablations(&run, &data, &seeds)?;
            write_ablation(&out, &rows, &cells)?;
            Ok(rows
                .iter()
                .map(|r| format!("{} {:.6}", r.variant, r.rule_mining_accuracy))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Export(args) => {
            let (run, model, data) = restore(&args)?;
            let mined = mine(&model, &data.train, data.pre.bands.count(), &run.mining)?;
            let summaries: Vec<_> = data.train.iter().map(|w| w.summary.clone()).collect();
            export_figures(&mined, &summaries, &run.mining.predicates, &args.out)?;
            Ok(format!("exported figure tables for {} rules", mined.rules.len()))
        }
    }
}
