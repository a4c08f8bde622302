//! Redundancy suppression distillation for cross-architecture students.

pub mod analysis;
pub mod data;
pub mod error;
pub mod layers;
pub mod models;
pub mod rsd;
pub mod train;

pub use error::{Error, Result};
