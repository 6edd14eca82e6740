//! Score distributions of purely benign and purely malicious neighborhoods,
//! and the one-dimensional Gaussian toy.

use rayon::prelude::*;
use serde::Serialize;

use super::config::PureShapeConfig;
use super::setup::{class_alerts, BinnedReference, DetectorSetup};
use crate::detectors::{count_gd_classify, CountGdConfig, Decision};
use crate::local::{measure_operating_point, LocalDetector, OperatingPoint};
use crate::seed::{self, stream};
use crate::shape::{build_histogram, shape_score};
use crate::stats;
use crate::synthetic::{sample_toy, ClassLabel, GaussianToyModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinOutcome {
    pub bins: usize,
    pub gamma: f64,
    pub benign: Vec<f64>,
    /// Malicious neighborhood scores, or a second benign set in a control run.
    pub malicious: Vec<f64>,
    pub fp_rate: f64,
    pub tp_rate: f64,
}

impl BinOutcome {
    pub fn max_benign(&self) -> f64 {
        self.benign
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_malicious(&self) -> f64 {
        self.malicious.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Distance between the score ranges; negative when they overlap.
    pub fn gap(&self) -> f64 {
        self.min_malicious() - self.max_benign()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PureShapeResult {
    pub control: bool,
    pub outcomes: Vec<BinOutcome>,
}

fn rate_above(scores: &[f64], gamma: f64) -> f64 {
    scores.iter().filter(|&&s| s > gamma).count() as f64 / scores.len() as f64
}

/// Scores `neighborhoods` benign and `neighborhoods` malicious neighborhoods
/// of `neighborhood_fvs` vectors each under every configured bin count.
pub fn run_pure_shape(
    setup: &DetectorSetup,
    cfg: &PureShapeConfig,
    run_seed: u64,
) -> Result<PureShapeResult> {
    let refs: Vec<&BinnedReference> = cfg
        .bins
        .iter()
        .map(|&b| {
            setup
                .for_bins(b)
                .ok_or_else(|| Error::Config(format!("no reference trained with {b} bins")))
        })
        .collect::<Result<_>>()?;
    let second = if cfg.control {
        ClassLabel::Benign
    } else {
        ClassLabel::Malicious
    };
    let score_set = |label: ClassLabel, stream_id: u64| -> Result<Vec<Vec<f64>>> {
        let base = seed::derive(run_seed, stream_id);
        (0..cfg.neighborhoods as u64)
            .into_par_iter()
            .map(|i| {
                let alerts = class_alerts(
                    &setup.model,
                    &setup.ld,
                    label,
                    cfg.neighborhood_fvs,
                    seed::derive(base, i),
                );
                refs.iter()
                    .map(|r| {
                        let h = build_histogram(&alerts, r.reference.edges())?;
                        Ok(shape_score(&h, &r.reference)?.value())
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect()
    };
    let benign = score_set(ClassLabel::Benign, stream::BENIGN_TEST)?;
    let malicious = score_set(second, stream::MALICIOUS_TEST)?;
    let outcomes = refs
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let b: Vec<f64> = benign.iter().map(|row| row[k]).collect();
            let m: Vec<f64> = malicious.iter().map(|row| row[k]).collect();
            BinOutcome {
                bins: r.bins,
                gamma: r.gamma.gamma,
                fp_rate: rate_above(&b, r.gamma.gamma),
                tp_rate: rate_above(&m, r.gamma.gamma),
                benign: b,
                malicious: m,
            }
        })
        .collect();
    Ok(PureShapeResult {
        control: cfg.control,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyResult {
    pub draws: usize,
    pub measured: OperatingPoint,
    /// Count-GD thresholds and decisions for 90 alerts with 100 and 1000
    /// benign vectors assumed.
    pub threshold_n100: u64,
    pub decision_n100: Decision,
    pub threshold_n1000: u64,
    pub decision_n1000: Decision,
    /// `log10 P(X >= 90)` for 100 benign vectors.
    pub log10_tail_90_of_100: f64,
}

/// Threshold LD at 0 between unit Gaussians at -1 and +1.
pub fn run_toy(cfg: &PureShapeConfig, run_seed: u64) -> Result<ToyResult> {
    let model = GaussianToyModel::default();
    let ld = LocalDetector::threshold(0.0);
    let base = seed::derive(run_seed, stream::TOY);
    let draw = |label: ClassLabel, s: u64| -> Vec<crate::synthetic::FeatureVector> {
        let b = seed::derive(base, s);
        (0..cfg.toy_draws as u64)
            .map(|i| {
                crate::synthetic::FeatureVector::new(vec![sample_toy(
                    &model,
                    label,
                    seed::derive(b, i),
                )])
                .expect("finite draw")
            })
            .collect()
    };
    let measured = measure_operating_point(
        &ld,
        &draw(ClassLabel::Benign, 0),
        &draw(ClassLabel::Malicious, 1),
    )?;
    let p = stats::normal_cdf(-1.0);
    let small = CountGdConfig::new(100, p)?;
    let large = CountGdConfig::new(1000, p)?;
    Ok(ToyResult {
        draws: cfg.toy_draws,
        measured,
        threshold_n100: small.threshold()?,
        decision_n100: count_gd_classify(90, &small)?,
        threshold_n1000: large.threshold()?,
        decision_n1000: count_gd_classify(90, &large)?,
        log10_tail_90_of_100: stats::binomial_log10_upper_tail(90, 100, p),
    })
}
