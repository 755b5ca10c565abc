//! Command-line front end for training, evaluation, analysis and demos.

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;
