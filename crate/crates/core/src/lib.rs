pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod pipeline;
pub mod rules;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
