#![allow(dead_code)]

use shapegd::experiment::config::ExperimentConfig;
use shapegd::experiment::setup::{build_setup, DetectorSetup};

/// Default model with a lighter gamma calibration.
pub fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    cfg.model.calibration_samples = 40_000;
    cfg.reference.gamma_neighborhoods = 100;
    cfg
}

pub fn small_setup(seed: u64) -> DetectorSetup {
    build_setup(&small_config(seed), &[]).expect("setup trains")
}
