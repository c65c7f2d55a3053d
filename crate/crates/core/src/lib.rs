//! Relevance-guided finetuning for small Vision Transformers.

pub mod cli;
pub mod error;
pub mod evaluator;
pub mod image;
pub mod objectives;
pub mod relevance;
pub mod sis;
pub mod synthdata;
pub mod tensor;
pub mod trainer;
pub mod vit;

pub use error::{Error, Result};
