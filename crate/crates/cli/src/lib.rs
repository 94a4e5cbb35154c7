//! File formats, configuration, threaded execution and the command
//! implementations behind the `vcl` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod exec;
pub mod imageio;
pub mod metrics;
pub mod npy;
