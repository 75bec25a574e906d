//! Config-driven front end for the wargame simulator: trains model pools,
//! runs wargame experiments and similarity studies, and writes canonical
//! JSON/CSV reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::{cmd_similarity, cmd_train, cmd_wargame, Options};
pub use config::RunConfig;
pub use error::CliError;

/// Pinned so reports stay byte-identical across builds of one release.
pub const TOOL_VERSION: &str = concat!("wargame ", env!("CARGO_PKG_VERSION"));
