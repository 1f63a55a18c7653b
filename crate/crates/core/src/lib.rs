pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod mining;
pub mod model;
pub mod pipeline;
pub mod rules;
pub mod tensor;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
