//! File formats, parallel drivers and the command-line front end for
//! `fracal-core`.

pub mod cli;
pub mod coco;
pub mod error;
pub mod export;
pub mod pipeline;
pub mod records;
pub mod report;
pub mod weights;

pub use error::{Error, Result};
