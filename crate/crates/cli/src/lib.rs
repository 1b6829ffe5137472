//! Library surface of the experiment harness; the `pagnn` binary is a thin
//! argument parser over these modules.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;
