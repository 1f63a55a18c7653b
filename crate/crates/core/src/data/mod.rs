//! Turbofan-format ingestion, per-step feature extraction, normalization
//! and the planted-rule generator.

pub mod cmapss;
pub mod features;
pub mod synth;
pub mod window;

use std::path::Path;

pub use cmapss::{parse_cmapss, parse_cmapss_str, write_cmapss, EngineRecord, Unit};
pub use features::{extract_features, feature_matrix, periodicity, SensorFeatures};
pub use synth::{generate, read_manifest, Overlap, write_synth, PlantedManifest, PlantedRule, SynthConfig, SynthData};
pub use window::{
    read_jsonl, windows_from_units, write_jsonl, NormStats, PreparedWindow, Preprocessor, RulBands,
    WindowConfig, WindowedSample,
};

use crate::error::{Error, Result};

/// Loads windows from a generator directory (JSON lines) or a turbofan text file.
pub fn load_samples(path: &Path, cfg: &WindowConfig) -> Result<Vec<WindowedSample>> {
    if path.is_dir() {
        read_jsonl(&path.join(synth::WINDOWS_FILE))
    } else if path.exists() {
        windows_from_units(&parse_cmapss(path)?, cfg)
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ))
    }
}
