//! Experiment driver for the `camcim-core` simulator.

pub mod config;
pub mod experiments;
pub mod output;
