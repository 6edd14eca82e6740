//! Local detectors: weak per-node binary classifiers that turn feature
//! vectors into alert feature vectors.

use serde::{Deserialize, Serialize};

use crate::synthetic::{ClassLabel, FeatureVector, FvRecord, NodeId};
use crate::{Error, Result};

/// A feature vector the local detector classified as malicious.
///
/// `true_label` is ground truth carried for evaluation. No detector reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlertFv {
    pub fv: FeatureVector,
    pub node: NodeId,
    pub timestamp: f64,
    pub true_label: ClassLabel,
}

/// Scalar threshold test: malicious iff `value > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdLd {
    pub threshold: f64,
}

/// Linear rule: malicious iff `dot(weights, fv) + bias > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLd {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearLd {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("linear detector weights"));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidParameter(
                "linear detector weights are all zero".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::InvalidParameter(
                "linear detector parameters must be finite".into(),
            ));
        }
        Ok(LinearLd { weights, bias })
    }

    /// A detector that never fires, used where training is impossible.
    pub(crate) fn degenerate(dims: usize) -> Self {
        let mut weights = vec![0.0; dims];
        weights[0] = 1.0;
        LinearLd {
            weights,
            bias: f64::NEG_INFINITY,
        }
    }

    #[inline]
    fn projection(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, x)| w * x).sum()
    }

    /// Fraction of `fvs` that raise an alert.
    pub fn alert_rate(&self, fvs: &[FeatureVector]) -> Result<f64> {
        if fvs.is_empty() {
            return Err(Error::EmptyInput("feature vectors"));
        }
        let mut hits = 0usize;
        for fv in fvs {
            check_dims(self.weights.len(), fv)?;
            hits += usize::from(self.projection(fv.values()) + self.bias > 0.0);
        }
        Ok(hits as f64 / fvs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LocalDetector {
    Threshold(ThresholdLd),
    Linear(LinearLd),
}

impl From<ThresholdLd> for LocalDetector {
    fn from(ld: ThresholdLd) -> Self {
        LocalDetector::Threshold(ld)
    }
}

impl From<LinearLd> for LocalDetector {
    fn from(ld: LinearLd) -> Self {
        LocalDetector::Linear(ld)
    }
}

fn check_dims(expected: usize, fv: &FeatureVector) -> Result<()> {
    if fv.dims() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: fv.dims(),
        });
    }
    Ok(())
}

impl LocalDetector {
    pub fn threshold(threshold: f64) -> Self {
        LocalDetector::Threshold(ThresholdLd { threshold })
    }

    /// Dimensionality of the vectors this detector accepts.
    pub fn dims(&self) -> usize {
        match self {
            LocalDetector::Threshold(_) => 1,
            LocalDetector::Linear(ld) => ld.weights.len(),
        }
    }

    pub fn classify(&self, fv: &FeatureVector) -> Result<ClassLabel> {
        check_dims(self.dims(), fv)?;
        Ok(if self.fires_unchecked(fv.values()) {
            ClassLabel::Malicious
        } else {
            ClassLabel::Benign
        })
    }

    /// `classify` without the dimension check, for hot loops where the caller
    /// has already validated dimensions.
    #[inline]
    pub(crate) fn fires_unchecked(&self, values: &[f64]) -> bool {
        match self {
            LocalDetector::Threshold(ld) => values[0] > ld.threshold,
            LocalDetector::Linear(ld) => ld.projection(values) + ld.bias > 0.0,
        }
    }
}

/// Empirical false- and true-positive rates of a detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub fp_rate: f64,
    pub tp_rate: f64,
}

pub fn measure_operating_point(
    ld: &LocalDetector,
    benign: &[FeatureVector],
    malicious: &[FeatureVector],
) -> Result<OperatingPoint> {
    let rate = |fvs: &[FeatureVector]| -> Result<f64> {
        if fvs.is_empty() {
            return Err(Error::EmptyInput("feature vectors"));
        }
        let mut hits = 0usize;
        for fv in fvs {
            hits += usize::from(ld.classify(fv)? == ClassLabel::Malicious);
        }
        Ok(hits as f64 / fvs.len() as f64)
    };
    Ok(OperatingPoint {
        fp_rate: rate(benign)?,
        tp_rate: rate(malicious)?,
    })
}

fn mean_vector(fvs: &[FeatureVector], dims: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dims];
    for fv in fvs {
        check_dims(dims, fv)?;
        for (a, v) in acc.iter_mut().zip(fv.values()) {
            *a += v;
        }
    }
    let n = fvs.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Trains a mean-difference linear detector.
///
/// The weight vector is `mean(malicious) - mean(benign)`. The bias places
/// the decision boundary so that the number of benign training vectors
/// strictly above it is `round(target_fp * n)`; with ties in the benign
/// projections the achieved rate may fall below that.
pub fn train_linear_ld(
    benign: &[FeatureVector],
    malicious: &[FeatureVector],
    target_fp: f64,
) -> Result<LinearLd> {
    if benign.is_empty() || malicious.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if !(0.0..=1.0).contains(&target_fp) {
        return Err(Error::InvalidParameter(format!(
            "target_fp {target_fp} outside [0, 1]"
        )));
    }
    let dims = benign[0].dims();
    let mb = mean_vector(benign, dims)?;
    let mm = mean_vector(malicious, dims)?;
    let weights: Vec<f64> = mm.iter().zip(&mb).map(|(m, b)| m - b).collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Untrainable("class means are identical"));
    }

    let mut proj: Vec<f64> = benign
        .iter()
        .map(|fv| weights.iter().zip(fv.values()).map(|(w, x)| w * x).sum())
        .collect();
    proj.sort_by(|a: &f64, b| b.total_cmp(a));
    let n = proj.len();
    let wanted = ((target_fp * n as f64).round() as usize).min(n);
    // Alerts are projections strictly above the threshold.
    let threshold = if wanted == n {
        let min = proj[n - 1];
        min - min.abs().max(1.0)
    } else {
        proj[wanted]
    };
    LinearLd::new(weights, -threshold)
}

/// Runs a detector over a stream, keeping the records it classifies as
/// malicious. Order is preserved.
pub fn run_ld_stream<I>(ld: &LocalDetector, stream: I) -> Result<Vec<AlertFv>>
where
    I: IntoIterator<Item = FvRecord>,
{
    let dims = ld.dims();
    let mut alerts = Vec::new();
    for rec in stream {
        check_dims(dims, &rec.fv)?;
        if ld.fires_unchecked(rec.fv.values()) {
            alerts.push(AlertFv {
                fv: rec.fv,
                node: rec.node,
                timestamp: rec.timestamp,
                true_label: rec.label,
            });
        }
    }
    Ok(alerts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::stats::normal_cdf;
    use crate::synthetic::{sample_fv, sample_toy, FvClassModel, FvStream, GaussianToyModel};

    fn scalar(x: f64) -> FeatureVector {
        FeatureVector::new(vec![x]).unwrap()
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let ld = LocalDetector::threshold(0.0);
        assert_eq!(ld.classify(&scalar(0.5)).unwrap(), ClassLabel::Malicious);
        assert_eq!(ld.classify(&scalar(0.0)).unwrap(), ClassLabel::Benign);
        assert_eq!(ld.classify(&scalar(-0.1)).unwrap(), ClassLabel::Benign);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ld = LocalDetector::threshold(0.0);
        let fv = FeatureVector::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            ld.classify(&fv),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn linear_ld_fires_on_malicious_mean() {
        // w = mean difference = (1, 1) * 2/sqrt(2); bias -sqrt(2) puts the
        // boundary halfway. w.mu_m + b = 2 - 1.414 > 0.
        let m = FvClassModel::isotropic(2, 2.0).unwrap();
        let w: Vec<f64> = m.malicious_mean();
        let ld = LocalDetector::from(LinearLd::new(w, -2f64.sqrt()).unwrap());
        let mal = FeatureVector::new(m.malicious_mean()).unwrap();
        let ben = FeatureVector::new(m.benign_mean.clone()).unwrap();
        assert_eq!(ld.classify(&mal).unwrap(), ClassLabel::Malicious);
        assert_eq!(ld.classify(&ben).unwrap(), ClassLabel::Benign);
    }

    #[test]
    fn train_toy_places_boundary_near_zero() {
        let m = GaussianToyModel::default();
        let n = 200_000u64;
        let ben: Vec<_> = (0..n)
            .map(|i| scalar(sample_toy(&m, ClassLabel::Benign, seed::derive(1, i))))
            .collect();
        let mal: Vec<_> = (0..n)
            .map(|i| scalar(sample_toy(&m, ClassLabel::Malicious, seed::derive(2, i))))
            .collect();
        let ld = train_linear_ld(&ben, &mal, normal_cdf(-1.0)).unwrap();
        let boundary = -ld.bias / ld.weights[0];
        assert!(boundary.abs() < 0.02, "boundary {boundary}");
        let fp = ld.alert_rate(&ben).unwrap();
        assert!((fp - normal_cdf(-1.0)).abs() < 0.005);
    }

    #[test]
    fn train_zero_fp_uses_max_projection() {
        let ben: Vec<_> = [-1.0, -0.5, 0.3].iter().map(|&x| scalar(x)).collect();
        let mal: Vec<_> = [1.0, 2.0].iter().map(|&x| scalar(x)).collect();
        let ld = train_linear_ld(&ben, &mal, 0.0).unwrap();
        assert_eq!(ld.alert_rate(&ben).unwrap(), 0.0);
        let w = ld.weights[0];
        assert!((-ld.bias - 0.3 * w).abs() < 1e-12);
    }

    #[test]
    fn train_full_fp_fires_on_everything() {
        let ben: Vec<_> = [-1.0, -0.5, 0.3].iter().map(|&x| scalar(x)).collect();
        let mal: Vec<_> = [1.0].iter().map(|&x| scalar(x)).collect();
        let ld = train_linear_ld(&ben, &mal, 1.0).unwrap();
        assert_eq!(ld.alert_rate(&ben).unwrap(), 1.0);
    }

    #[test]
    fn train_identical_means_is_untrainable() {
        let ben: Vec<_> = [-1.0, 1.0].iter().map(|&x| scalar(x)).collect();
        let mal: Vec<_> = [-2.0, 2.0].iter().map(|&x| scalar(x)).collect();
        assert!(matches!(
            train_linear_ld(&ben, &mal, 0.1),
            Err(Error::Untrainable(_))
        ));
        assert!(train_linear_ld(&[], &mal, 0.1).is_err());
    }

    #[test]
    fn training_hits_target_fp() {
        let m = FvClassModel::isotropic(10, 3.0).unwrap();
        let ben: Vec<_> = (0..20_000)
            .map(|i| sample_fv(&m, ClassLabel::Benign, seed::derive(3, i)))
            .collect();
        let mal: Vec<_> = (0..20_000)
            .map(|i| sample_fv(&m, ClassLabel::Malicious, seed::derive(4, i)))
            .collect();
        let ld = train_linear_ld(&ben, &mal, 0.06).unwrap();
        assert!((ld.alert_rate(&ben).unwrap() - 0.06).abs() <= 0.005);
    }

    #[test]
    fn empty_stream_yields_no_alerts() {
        let ld = LocalDetector::threshold(0.0);
        assert!(run_ld_stream(&ld, Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn stream_filter_preserves_order_and_identity() {
        let m = FvClassModel::isotropic(3, 2.0).unwrap();
        let ld = LocalDetector::from(LinearLd::new(m.malicious_mean(), -1.0).unwrap());
        let stream = FvStream::new(NodeId(5), ClassLabel::Malicious);
        let records: Vec<_> = stream.records(&m, 9, 0.0, 200.0).unwrap().collect();
        let alerts = run_ld_stream(&ld, records.clone()).unwrap();
        assert!(!alerts.is_empty());
        let mut last = -1.0;
        for a in &alerts {
            assert!(a.timestamp > last);
            last = a.timestamp;
            let src = &records[a.timestamp as usize];
            assert_eq!(src.fv, a.fv);
            assert_eq!(a.node, NodeId(5));
        }
    }

    #[test]
    fn benign_toy_alert_mean_matches_truncated_normal() {
        // E[X | X > 0] for X ~ N(-1, 1) is -1 + phi(1) / (1 - Phi(1)).
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let oracle = -1.0 + phi1 / normal_cdf(-1.0);
        let m = GaussianToyModel::default();
        let ld = LocalDetector::threshold(0.0);
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut i = 0u64;
        while count < 100_000 {
            let x = sample_toy(&m, ClassLabel::Benign, seed::derive(21, i));
            i += 1;
            if ld.classify(&scalar(x)).unwrap() == ClassLabel::Malicious {
                sum += x;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        assert!((mean - oracle).abs() / oracle < 0.01, "{mean} vs {oracle}");
    }
}
