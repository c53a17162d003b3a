//! Transducer training with fast-skip regularization and fast-skip greedy
//! inference, on a synthetic speech-like task.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod error;
pub mod eval;
mod io;
pub mod lattice;
pub mod logspace;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
