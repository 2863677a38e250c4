//! Experiment harness: configuration files, legacy archives and the
//! `solve` / `sweep` / `compare` commands.

pub mod archive;
pub mod commands;
pub mod config;

pub use archive::{archive_read, archive_write, compatibility_warnings, ArchiveHeader, LegacyArchive, ARCHIVE_VERSION};
pub use commands::{cmd_compare, cmd_solve, cmd_sweep, merge_archives, ErrorTable, SolveSummary, SweepCell};
pub use config::{ExperimentConfig, Mode};
