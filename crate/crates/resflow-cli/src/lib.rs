//! Library surface of the `resflow` binary: run configuration, the
//! checkpoint and CSV/raster file formats, and the in-process command
//! implementations. Integration and acceptance tests drive everything
//! through this crate.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod error;
pub mod raster;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, SchemeOpt, StepModeOpt, Variant};
pub use error::CliError;
pub use run::{cmd_analyze, cmd_compare, cmd_train, GridSpec, Product};
