//! The four-variant ablation grid with medians over seeds.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{evaluate_model, train_model, Prepared, RunConfig};
use crate::transformer::AblationFlags;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "RULE_MINER_THREADS";

/// One (variant, seed) cell of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: String,
    pub seed: u64,
    /// `None` when training or mining failed.
    pub accuracy: Option<f64>,
    pub coverage: Option<f64>,
    pub rule_count: Option<usize>,
    pub recovery_rate: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub rule_mining_accuracy: f64,
    pub rule_coverage: f64,
    pub rule_count: f64,
    /// NaN when the data has no planted rules.
    pub recovery_rate: f64,
    pub seeds: usize,
    pub failed_seeds: usize,
    /// True when every seed failed.
    pub failed: bool,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

/// Median of the values; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn worker_threads() -> usize {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    let avail = std::thread::available_parallelism().map_or(1, |n| n.get());
    cap.unwrap_or(avail).clamp(1, avail.max(1))
}

fn run_cell(base: &RunConfig, data: &Prepared, variant: &str, seed: u64) -> AblationCell {
    let start = Instant::now();
    let mut cfg = base.clone();
    cfg.flags = AblationFlags::variant(variant).expect("known variant");
    cfg.train.seed = seed;
    let outcome = train_model(&cfg, data).and_then(|(model, _)| evaluate_model(&cfg, &model, data));
    let mut cell = AblationCell {
        variant: variant.to_string(),
        seed,
        accuracy: None,
        coverage: None,
        rule_count: None,
        recovery_rate: None,
        error: None,
        wall_time_seconds: 0.0,
    };
    match outcome {
        Ok((_, r)) => {
            cell.accuracy = Some(r.rule_mining_accuracy);
            cell.coverage = Some(r.rule_coverage);
            cell.rule_count = Some(r.rule_count);
            cell.recovery_rate = r.recovery.map(|x| x.rate);
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell.wall_time_seconds = start.elapsed().as_secs_f64();
    cell
}

/// Trains and scores every variant for every seed on the same prepared
/// data. Cells run in parallel; results are in (variant, seed) order.
pub fn run_ablation_cells(base: &RunConfig, data: &Prepared, seeds: &[u64]) -> Result<Vec<AblationCell>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let jobs: Vec<(&str, u64)> = AblationFlags::VARIANTS
        .iter()
        .flat_map(|v| seeds.iter().map(move |s| (*v, *s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    use rayon::prelude::*;
    Ok(pool.install(|| jobs.par_iter().map(|(v, s)| run_cell(base, data, v, *s)).collect()))
}

pub fn summarize(cells: &[AblationCell]) -> Vec<AblationRow> {
    AblationFlags::VARIANTS
        .iter()
        .map(|v| {
            let mine: Vec<&AblationCell> = cells.iter().filter(|c| c.variant == *v).collect();
            let ok: Vec<&&AblationCell> = mine.iter().filter(|c| c.error.is_none()).collect();
            let pick = |f: &dyn Fn(&AblationCell) -> Option<f64>| median(&ok.iter().filter_map(|c| f(c)).collect::<Vec<_>>());
            AblationRow {
                variant: v.to_string(),
                rule_mining_accuracy: pick(&|c| c.accuracy),
                rule_coverage: pick(&|c| c.coverage),
                rule_count: pick(&|c| c.rule_count.map(|n| n as f64)),
                recovery_rate: pick(&|c| c.recovery_rate),
                seeds: mine.len(),
                failed_seeds: mine.len() - ok.len(),
                failed: ok.is_empty(),
                wall_time_seconds: median(&mine.iter().map(|c| c.wall_time_seconds).collect::<Vec<_>>()),
            }
        })
        .collect()
}

/// Medians per variant over `seeds`.
pub fn run_ablations(base: &RunConfig, data: &Prepared, seeds: &[u64]) -> Result<(Vec<AblationRow>, Vec<AblationCell>)> {
    let cells = run_ablation_cells(base, data, seeds)?;
    Ok((summarize(&cells), cells))
}

pub(crate) fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    }
}

/// `ablation.csv`: one row per variant (deterministic), plus the per-cell
/// scores and a separate timing file.
pub fn write_ablation(dir: &Path, rows: &[AblationRow], cells: &[AblationCell]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join("ablation.csv"),
        &[
            "variant",
            "rule_mining_accuracy",
            "rule_coverage",
            "rule_count",
            "recovery_rate",
            "seeds",
            "failed_seeds",
            "failed",
        ],
        rows.iter()
            .map(|r| {
                vec![
                    r.variant.clone(),
                    fmt(r.rule_mining_accuracy),
                    fmt(r.rule_coverage),
                    fmt(r.rule_count),
                    fmt(r.recovery_rate),
                    r.seeds.to_string(),
                    r.failed_seeds.to_string(),
                    r.failed.to_string(),
                ]
            })
            .collect(),
    )?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, fmt);
    write_csv(
        &dir.join("ablation_cells.csv"),
        &["variant", "seed", "rule_mining_accuracy", "rule_coverage", "rule_count", "recovery_rate", "error"],
        cells
            .iter()
            .map(|c| {
                vec![
                    c.variant.clone(),
                    c.seed.to_string(),
                    opt(c.accuracy),
                    opt(c.coverage),
                    c.rule_count.map_or_else(String::new, |n| n.to_string()),
                    opt(c.recovery_rate),
                    c.error.clone().unwrap_or_default(),
                ]
            })
            .collect(),
    )?;
    write_csv(
        &dir.join("ablation_timing.csv"),
        &["variant", "median_wall_time_seconds"],
        rows.iter()
            .map(|r| vec![r.variant.clone(), fmt(r.wall_time_seconds)])
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn failed_cells_are_marked() {
        let cell = |v: &str, acc: Option<f64>| AblationCell {
            variant: v.into(),
            seed: 0,
            accuracy: acc,
            coverage: acc,
            rule_count: acc.map(|_| 1),
            recovery_rate: None,
            error: acc.is_none().then(|| "boom".into()),
            wall_time_seconds: 0.0,
        };
        let cells = vec![
            cell("full", Some(1.0)),
            cell("full", Some(0.5)),
            cell("full", None),
            cell("no_self_attention", None),
        ];
        let rows = summarize(&cells);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].rule_mining_accuracy, 0.75);
        assert_eq!((rows[0].failed_seeds, rows[0].failed), (1, false));
        assert!(rows[3].failed);
        let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, AblationFlags::VARIANTS);
    }
}
