//! Experiment orchestration for interpolation-based continual learning:
//! TOML-configured runs, report comparison and checkpoint tools.

pub mod compare;
pub mod config;
pub mod csv_out;
pub mod run;
pub mod tools;
