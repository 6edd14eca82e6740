//! Experiment drivers shared by the CLI and the tests.

pub mod cluster;
pub mod config;
pub mod detection;
pub mod fragility;
pub mod output;
pub mod pure_shape;
pub mod setup;
