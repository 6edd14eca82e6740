//! Experiment configuration, read from TOML. Every field has a default, so
//! a config file only lists what it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{PhishingScenario, WaterholeScenario};
use crate::detectors::DEFAULT_MIN_FVS;
use crate::shape::{DEFAULT_BINS, DEFAULT_PERCENTILE, DEFAULT_REFERENCE_BUDGET};
use crate::synthetic::DEFAULT_DIMS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Phishing,
    Waterhole,
    ToyGaussian,
    #[default]
    PureShape,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Phishing => "phishing",
            Scenario::Waterhole => "waterhole",
            Scenario::ToyGaussian => "toy_gaussian",
            Scenario::PureShape => "pure_shape",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Malicious vectors are shifted along the first axis and differ in
    /// spread from benign ones.
    #[default]
    ShapeContrast,
    /// Equal unit spread, shift spread evenly over all axes.
    Isotropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dims: usize,
    /// LD operating point the class separation is calibrated to.
    pub fp_rate: f64,
    pub tp_rate: f64,
    pub axis_scale: f64,
    pub off_axis_scale: f64,
    pub calibration_samples: usize,
    /// Skips calibration: uses this separation and trains the LD for
    /// `fp_rate` only.
    pub separation: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::ShapeContrast,
            dims: DEFAULT_DIMS,
            fp_rate: 0.06,
            tp_rate: 0.924,
            axis_scale: 0.27,
            off_axis_scale: 1.5,
            calibration_samples: 100_000,
            separation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Benign feature vectors run through the LD to collect false positives.
    pub budget: usize,
    pub bins: usize,
    pub percentile: f64,
    /// Benign neighborhoods scored to calibrate gamma.
    pub gamma_neighborhoods: usize,
    pub gamma_neighborhood_fvs: usize,
    /// Shape-GD abstains below this many neighborhood feature vectors.
    pub min_fvs: u64,
    /// Load reference and gamma from this file instead of training.
    pub file: Option<PathBuf>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            budget: DEFAULT_REFERENCE_BUDGET,
            bins: DEFAULT_BINS,
            percentile: DEFAULT_PERCENTILE,
            gamma_neighborhoods: 500,
            gamma_neighborhood_fvs: 15_000,
            min_fvs: DEFAULT_MIN_FVS,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PureShapeConfig {
    pub neighborhoods: usize,
    pub neighborhood_fvs: usize,
    /// Bin counts to evaluate; each gets its own reference and gamma.
    pub bins: Vec<usize>,
    /// Replace the malicious neighborhoods with a second benign set.
    pub control: bool,
    /// Draws for the one-dimensional Gaussian toy.
    pub toy_draws: usize,
}

impl Default for PureShapeConfig {
    fn default() -> Self {
        PureShapeConfig {
            neighborhoods: 500,
            neighborhood_fvs: 15_000,
            bins: vec![20, 50, 100],
            control: false,
            toy_draws: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub ntw: Vec<f64>,
    /// Partition group counts; 1 is temporal filtering only.
    pub groups: Vec<usize>,
    /// Click rate (phishing) or per-visit infection probability (waterhole).
    pub infection: Vec<f64>,
    pub repetitions: usize,
    /// Simulated seconds. Defaults to the largest NTW for phishing and 300
    /// seconds for waterhole.
    pub horizon: Option<f64>,
    /// Seconds between scoring passes inside a batch window.
    pub checkpoint_interval: f64,
    /// End a run at its first detection.
    pub stop_at_detection: bool,
    /// Write every verdict of repetition 0 of each sweep point.
    pub verdict_log: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            ntw: vec![3600.0],
            groups: vec![1],
            infection: vec![1.0],
            repetitions: 50,
            horizon: None,
            checkpoint_interval: 60.0,
            stop_at_detection: true,
            verdict_log: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FragilityConfig {
    pub nodes: usize,
    pub seconds: usize,
    /// Nodes that are infected for the whole window in infected runs.
    pub infected_nodes: usize,
    pub runs: usize,
    pub error_min: f64,
    pub error_max: f64,
    pub error_step: f64,
    /// Explicit error grid; overrides min/max/step when present.
    pub errors: Option<Vec<f64>>,
}

impl Default for FragilityConfig {
    fn default() -> Self {
        FragilityConfig {
            nodes: 1000,
            seconds: 60,
            infected_nodes: 15,
            runs: 100,
            error_min: -0.05,
            error_max: 0.25,
            error_step: 0.01,
            errors: None,
        }
    }
}

impl FragilityConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if let Some(e) = &self.errors {
            if e.is_empty() {
                return Err(Error::Config("error grid is empty".into()));
            }
            return Ok(e.clone());
        }
        if !(self.error_step > 0.0) || self.error_max < self.error_min {
            return Err(Error::Config(
                "error grid needs step > 0 and min <= max".into(),
            ));
        }
        let steps = ((self.error_max - self.error_min) / self.error_step + 1e-9).floor() as usize;
        // Rounded to whole basis points so the grid prints cleanly.
        Ok((0..=steps)
            .map(|i| ((self.error_min + i as f64 * self.error_step) * 1e4).round() / 1e4)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Infected runs; the same number of benign runs is paired with them.
    pub repetitions: usize,
    pub max_infected_fraction: f64,
    pub ntw: f64,
    pub checkpoint_interval: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            repetitions: 100,
            max_infected_fraction: 0.02,
            ntw: 3600.0,
            checkpoint_interval: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocConfig {
    /// CSV with a `class` column and a `score` column.
    pub input: Option<PathBuf>,
    /// Class value treated as positive.
    pub positive: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub model: ModelConfig,
    pub reference: ReferenceConfig,
    pub pure_shape: PureShapeConfig,
    pub phishing: PhishingScenario,
    pub waterhole: WaterholeScenario,
    pub detection: DetectionConfig,
    pub count_fragility: FragilityConfig,
    pub cluster: ClusterConfig,
    pub roc: RocConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.reference.file, &mut cfg.roc.input]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [&cfg.reference.file, &cfg.roc.input].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.model.dims == 0 {
            return bad("model.dims must be >= 1");
        }
        if self.reference.gamma_neighborhoods == 0 || self.reference.budget == 0 {
            return bad("reference sample sizes must be >= 1");
        }
        if self.pure_shape.bins.is_empty() || self.pure_shape.bins.contains(&0) {
            return bad("pure_shape.bins must be non-empty and positive");
        }
        if self.pure_shape.neighborhoods == 0 {
            return bad("pure_shape.neighborhoods must be >= 1");
        }
        let d = &self.detection;
        if d.repetitions == 0 {
            return bad("detection.repetitions must be >= 1");
        }
        if d.ntw.is_empty() || d.ntw.iter().any(|n| !(*n > 0.0)) {
            return bad("detection.ntw must be non-empty and positive");
        }
        if d.groups.is_empty() || d.groups.contains(&0) {
            return bad("detection.groups must be non-empty and positive");
        }
        if d.infection.is_empty() || d.infection.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("detection.infection values must lie in [0, 1]");
        }
        if !(d.checkpoint_interval > 0.0) {
            return bad("detection.checkpoint_interval must be > 0");
        }
        if self.cluster.repetitions == 0 {
            return bad("cluster.repetitions must be >= 1");
        }
        let f = &self.count_fragility;
        if f.runs == 0 || f.nodes == 0 || f.seconds == 0 || f.infected_nodes > f.nodes {
            return bad("count_fragility sizes are inconsistent");
        }
        f.grid()?;
        self.phishing.validate()?;
        self.waterhole.validate()?;
        Ok(())
    }
}
