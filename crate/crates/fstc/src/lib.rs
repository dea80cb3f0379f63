//! Command-line companion to `fstc-core`: everything that touches the
//! outside world. Corpus ingestion from disk, TOML configuration,
//! bit-exact checkpoint files, the comparison/ablation experiment grids,
//! and CSV/JSON report emission. The numerics all live in `fstc-core`;
//! this crate wires them to files, flags, and exit codes.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, Result};
