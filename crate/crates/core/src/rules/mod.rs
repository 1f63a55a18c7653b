//! Latent rule states, the rule codebook, and the discrete rule surface
//! form with its support/confidence/correlation statistics.

mod engine;
mod predicate;

pub use engine::*;
pub use predicate::*;
