//! Shared detector state for experiments: the calibrated feature model,
//! the local detector, reference histograms and gamma thresholds.

use rayon::prelude::*;

use super::config::{ExperimentConfig, ModelConfig, ModelKind, ReferenceConfig};
use crate::local::{train_linear_ld, LinearLd, LocalDetector, OperatingPoint};
use crate::seed::{self, stream};
use crate::shape::{
    build_histogram, calibrate_gamma, centroid, collect_false_positives, read_reference,
    reference_from_alerts, shape_score, GammaThreshold, ReferenceHistogram, ShapeScore,
};
use crate::synthetic::{
    calibrate_separation, exact_alert_rate, sample_fv, CalibrationSpec, ClassLabel, FeatureVector,
    FvClassModel,
};
use crate::{Error, Result};

/// A reference histogram and its threshold at one bin count.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedReference {
    pub bins: usize,
    pub reference: ReferenceHistogram,
    pub gamma: GammaThreshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSetup {
    pub model: FvClassModel,
    pub ld: LocalDetector,
    /// Operating point measured on held-out samples during calibration.
    pub measured: OperatingPoint,
    /// Closed-form operating point of the trained detector.
    pub exact: OperatingPoint,
    /// The first entry uses the configured bin count.
    pub references: Vec<BinnedReference>,
    /// Mean of the false-positive alerts used for training.
    pub centroid: Vec<f64>,
    pub min_fvs: u64,
}

impl DetectorSetup {
    pub fn primary(&self) -> &BinnedReference {
        &self.references[0]
    }

    pub fn for_bins(&self, bins: usize) -> Option<&BinnedReference> {
        self.references.iter().find(|r| r.bins == bins)
    }
}

/// `n` feature vectors of one class, the j-th drawn from `derive(base, j)`.
pub fn class_fvs(
    model: &FvClassModel,
    label: ClassLabel,
    n: usize,
    base: u64,
) -> impl Iterator<Item = FeatureVector> + '_ {
    (0..n as u64).map(move |j| sample_fv(model, label, seed::derive(base, j)))
}

/// Alerts the detector raises on `n` vectors of one class.
pub fn class_alerts(
    model: &FvClassModel,
    ld: &LocalDetector,
    label: ClassLabel,
    n: usize,
    base: u64,
) -> Vec<FeatureVector> {
    class_fvs(model, label, n, base)
        .filter(|fv| ld.fires_unchecked(fv.values()))
        .collect()
}

fn base_model(cfg: &ModelConfig) -> Result<FvClassModel> {
    match cfg.kind {
        ModelKind::ShapeContrast => {
            FvClassModel::shape_contrast(cfg.dims, 0.0, cfg.axis_scale, cfg.off_axis_scale)
        }
        ModelKind::Isotropic => FvClassModel::isotropic(cfg.dims, 0.0),
    }
}

/// Builds the feature model and a linear detector at the configured
/// operating point.
pub fn build_classifier(
    cfg: &ModelConfig,
    run_seed: u64,
) -> Result<(FvClassModel, LinearLd, OperatingPoint)> {
    let model = base_model(cfg)?;
    let cal_seed = seed::derive(run_seed, stream::CALIBRATION);
    match cfg.separation {
        None => {
            let spec = CalibrationSpec {
                samples_per_class: cfg.calibration_samples,
                seed: cal_seed,
                ..CalibrationSpec::default()
            };
            let cal = calibrate_separation(&model, cfg.fp_rate, cfg.tp_rate, &spec)?;
            Ok((cal.model, cal.detector, cal.measured))
        }
        Some(sep) => {
            let model = model.with_separation(sep);
            model.validate()?;
            let n = cfg.calibration_samples;
            let benign: Vec<_> =
                class_fvs(&model, ClassLabel::Benign, n, seed::derive(cal_seed, 1)).collect();
            let malicious: Vec<_> =
                class_fvs(&model, ClassLabel::Malicious, n, seed::derive(cal_seed, 2)).collect();
            let ld = train_linear_ld(&benign, &malicious, cfg.fp_rate)?;
            let measured = OperatingPoint {
                fp_rate: exact_alert_rate(&ld, &model, ClassLabel::Benign)?,
                tp_rate: exact_alert_rate(&ld, &model, ClassLabel::Malicious)?,
            };
            Ok((model, ld, measured))
        }
    }
}

/// Scores benign neighborhoods against every reference and sets each
/// gamma at the configured percentile.
fn calibrate_gammas(
    model: &FvClassModel,
    ld: &LocalDetector,
    refs: &[ReferenceHistogram],
    cfg: &ReferenceConfig,
    run_seed: u64,
) -> Result<Vec<GammaThreshold>> {
    let base = seed::derive(run_seed, stream::GAMMA);
    let scores: Vec<Vec<ShapeScore>> = (0..cfg.gamma_neighborhoods as u64)
        .into_par_iter()
        .map(|i| {
            let alerts = class_alerts(
                model,
                ld,
                ClassLabel::Benign,
                cfg.gamma_neighborhood_fvs,
                seed::derive(base, i),
            );
            refs.iter()
                .map(|r| shape_score(&build_histogram(&alerts, r.edges())?, r))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    (0..refs.len())
        .map(|k| {
            let col: Vec<ShapeScore> = scores.iter().map(|row| row[k]).collect();
            calibrate_gamma(&col, cfg.percentile)
        })
        .collect()
}

/// Trains references at the configured bin count followed by `extra_bins`
/// (duplicates skipped), or loads the single reference named in the config.
pub fn build_setup(cfg: &ExperimentConfig, extra_bins: &[usize]) -> Result<DetectorSetup> {
    let (model, ld, measured) = build_classifier(&cfg.model, cfg.seed)?;
    setup_for_model(model, ld, measured, &cfg.reference, extra_bins, cfg.seed)
}

pub fn setup_for_model(
    model: FvClassModel,
    ld: LinearLd,
    measured: OperatingPoint,
    cfg: &ReferenceConfig,
    extra_bins: &[usize],
    run_seed: u64,
) -> Result<DetectorSetup> {
    let exact = OperatingPoint {
        fp_rate: exact_alert_rate(&ld, &model, ClassLabel::Benign)?,
        tp_rate: exact_alert_rate(&ld, &model, ClassLabel::Malicious)?,
    };
    let ld = LocalDetector::from(ld);
    let training = class_fvs(
        &model,
        ClassLabel::Benign,
        cfg.budget,
        seed::derive(run_seed, stream::REFERENCE),
    );
    let alerts = collect_false_positives(training, &ld, cfg.budget)?;
    if alerts.is_empty() {
        return Err(Error::Untrainable(
            "no false positives in the training budget",
        ));
    }
    let centroid = centroid(&alerts)?;

    let references = match &cfg.file {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            let (reference, gamma) = read_reference(std::io::BufReader::new(file))?;
            if reference.histogram.dims() != model.dims {
                return Err(Error::DimensionMismatch {
                    expected: model.dims,
                    got: reference.histogram.dims(),
                });
            }
            vec![BinnedReference {
                bins: reference.histogram.bins(),
                reference,
                gamma,
            }]
        }
        None => {
            let mut bins = vec![cfg.bins];
            for &b in extra_bins {
                if !bins.contains(&b) {
                    bins.push(b);
                }
            }
            let refs = bins
                .iter()
                .map(|&b| reference_from_alerts(&alerts, cfg.budget, b))
                .collect::<Result<Vec<_>>>()?;
            let gammas = calibrate_gammas(&model, &ld, &refs, cfg, run_seed)?;
            bins.into_iter()
                .zip(refs)
                .zip(gammas)
                .map(|((bins, reference), gamma)| BinnedReference {
                    bins,
                    reference,
                    gamma,
                })
                .collect()
        }
    };
    Ok(DetectorSetup {
        model,
        ld,
        measured,
        exact,
        references,
        centroid,
        min_fvs: cfg.min_fvs,
    })
}
