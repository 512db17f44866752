//! Standard-library companion to `hetfed-core`: experiment config files,
//! on-disk formats (metrics CSV, correlation dumps, dataset and model
//! containers, run manifests), the threaded client runner, the verification
//! battery, and the `hetfed` CLI.

pub mod cli;
pub mod config;
pub mod formats;
pub mod runner;
pub mod verify;
