//! Metrics, the itemset baseline, the ablation grid and figure exports.

mod ablation;
mod apriori;
mod export;
mod metrics;

pub use ablation::*;
pub use apriori::*;
pub use export::*;
pub use metrics::*;
