//! File formats, dataset layout and command implementations for the lift3d
//! pipeline. The numerical work lives in [`lift3d_core`]; this crate reads
//! and writes it.

pub mod calib;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod depth;
pub mod error;
pub mod png;
pub mod report;

pub use error::{Error, Result};
