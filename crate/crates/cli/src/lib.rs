//! Command-line driver for the `skewkurt` library: subcommands for single
//! analyses and `repro` recipes for the figures and tables of the original
//! study. The experiment drivers are public so that the acceptance suite can
//! run them without going through the binary.

pub mod app;
pub mod experiments;
pub mod output;
pub mod repro;

pub use app::{exit_code, main_entry, run, Cli};
