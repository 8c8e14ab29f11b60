pub mod error;
pub mod factgen;
pub mod model;
pub mod tokenizer;
pub mod data;
pub mod evaluator;
pub mod trainer;
pub mod scaling;
pub mod harness;

pub use error::{Error, Result};
