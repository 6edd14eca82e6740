//! Neighborhood-level classifiers: Shape-GD, the count-threshold baseline
//! and a centroid-distance clustering baseline.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::neighborhood::{Neighborhood, NeighborhoodId};
use crate::shape::{build_histogram, shape_score, GammaThreshold, ReferenceHistogram, ShapeScore};
use crate::stats;
use crate::synthetic::FeatureVector;
use crate::{Error, Result};

/// Neighborhood FV count below which Shape-GD abstains.
pub const DEFAULT_MIN_FVS: u64 = 15_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Malicious,
    Benign,
    NoDecision,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Malicious => "malicious",
            Decision::Benign => "benign",
            Decision::NoDecision => "no_decision",
        })
    }
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "malicious" => Ok(Decision::Malicious),
            "benign" => Ok(Decision::Benign),
            "no_decision" => Ok(Decision::NoDecision),
            _ => Err(Error::InvalidParameter(format!("unknown decision `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    ShapeGd,
    CountGd,
    ClusterGd,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::ShapeGd => "shape_gd",
            DetectorKind::CountGd => "count_gd",
            DetectorKind::ClusterGd => "cluster_gd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalVerdict {
    pub neighborhood_id: NeighborhoodId,
    pub window_start: f64,
    pub detector: DetectorKind,
    pub decision: Decision,
    /// Absent when the neighborhood has no alerts to score.
    pub score: Option<f64>,
    pub eligible_fv_count: u64,
}

impl fmt::Display for GlobalVerdict {
    /// `V,<window_start>,<neighborhood_id>,<detector>,<decision>,<score>,<eligible_fv_count>`
    /// with an empty score field when there is no score.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "V,{},{},{},{},",
            self.window_start, self.neighborhood_id, self.detector, self.decision
        )?;
        if let Some(s) = self.score {
            write!(f, "{s}")?;
        }
        write!(f, ",{}", self.eligible_fv_count)
    }
}

pub fn write_verdicts<W: Write>(mut out: W, verdicts: &[GlobalVerdict]) -> Result<()> {
    for v in verdicts {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

/// Shape-GD decision rule. Ties at gamma are benign.
pub fn shape_gd_decide(
    score: Option<ShapeScore>,
    total_fv_count: u64,
    gamma: &GammaThreshold,
    min_fvs: u64,
) -> Decision {
    match score {
        _ if total_fv_count < min_fvs => Decision::NoDecision,
        None => Decision::NoDecision,
        Some(s) if s.0 > gamma.gamma => Decision::Malicious,
        Some(_) => Decision::Benign,
    }
}

pub fn shape_gd_classify(
    nb: &Neighborhood,
    reference: &ReferenceHistogram,
    gamma: &GammaThreshold,
    min_fvs: u64,
) -> Result<GlobalVerdict> {
    let score = match build_histogram(nb.alert_fvs.iter().map(|a| &a.fv), reference.edges()) {
        Ok(h) => Some(shape_score(&h, reference)?),
        Err(Error::EmptyInput(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(GlobalVerdict {
        neighborhood_id: nb.id,
        window_start: nb.window_start,
        detector: DetectorKind::ShapeGd,
        decision: shape_gd_decide(score, nb.total_fv_count, gamma, min_fvs),
        score: score.map(ShapeScore::value),
        eligible_fv_count: nb.total_fv_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountGdConfig {
    /// Estimated number of feature vectors in the neighborhood.
    pub estimated_neighborhood_fv_count: u64,
    pub ld_fp_rate: f64,
    pub alert_threshold_percentile: f64,
}

impl CountGdConfig {
    pub fn new(estimated_neighborhood_fv_count: u64, ld_fp_rate: f64) -> Result<Self> {
        let cfg = CountGdConfig {
            estimated_neighborhood_fv_count,
            ld_fp_rate,
            alert_threshold_percentile: 0.99,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimated_neighborhood_fv_count == 0 {
            return Err(Error::InvalidParameter(
                "estimated neighborhood size must be > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.ld_fp_rate) {
            return Err(Error::InvalidParameter("LD FP rate outside [0, 1]".into()));
        }
        if !(self.alert_threshold_percentile > 0.0 && self.alert_threshold_percentile < 1.0) {
            return Err(Error::InvalidParameter(
                "alert threshold percentile outside (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Alert-count threshold: the percentile of Binomial(N, fp).
    pub fn threshold(&self) -> Result<u64> {
        self.validate()?;
        stats::binomial_quantile(
            self.estimated_neighborhood_fv_count,
            self.ld_fp_rate,
            self.alert_threshold_percentile,
        )
    }
}

/// Malicious iff `alert_count` exceeds the binomial threshold.
pub fn count_gd_classify(alert_count: u64, cfg: &CountGdConfig) -> Result<Decision> {
    Ok(if alert_count > cfg.threshold()? {
        Decision::Malicious
    } else {
        Decision::Benign
    })
}

pub fn count_gd_verdict(nb: &Neighborhood, cfg: &CountGdConfig) -> Result<GlobalVerdict> {
    let n = nb.alert_fvs.len() as u64;
    Ok(GlobalVerdict {
        neighborhood_id: nb.id,
        window_start: nb.window_start,
        detector: DetectorKind::CountGd,
        decision: count_gd_classify(n, cfg)?,
        score: Some(n as f64),
        eligible_fv_count: cfg.estimated_neighborhood_fv_count,
    })
}

/// Signed relative error of a neighborhood size estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeError {
    relative_error: f64,
}

impl SizeError {
    pub fn new(relative_error: f64) -> Result<Self> {
        if !(relative_error > -1.0) || !relative_error.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "relative size error {relative_error} must be finite and > -1"
            )));
        }
        Ok(SizeError { relative_error })
    }

    pub fn relative_error(self) -> f64 {
        self.relative_error
    }

    /// The size estimate for a true size `n`, at least 1.
    pub fn apply(self, n: u64) -> u64 {
        ((n as f64 * (1.0 + self.relative_error)).round() as u64).max(1)
    }
}

/// FP and TP rates of Count-GD over simulated neighborhoods when the size
/// estimate is off by `size_error`.
pub fn count_gd_sensitivity(
    true_fv_count: u64,
    size_error: SizeError,
    cfg: &CountGdConfig,
    benign_alert_counts: &[u64],
    malicious_alert_counts: &[u64],
) -> Result<(f64, f64)> {
    for runs in [benign_alert_counts, malicious_alert_counts] {
        if runs.len() < 100 {
            return Err(Error::InsufficientSample {
                needed: 100,
                got: runs.len(),
            });
        }
    }
    let cfg = CountGdConfig {
        estimated_neighborhood_fv_count: size_error.apply(true_fv_count),
        ..*cfg
    };
    let tau = cfg.threshold()?;
    let rate = |runs: &[u64]| runs.iter().filter(|&&c| c > tau).count() as f64 / runs.len() as f64;
    Ok((rate(benign_alert_counts), rate(malicious_alert_counts)))
}

/// Euclidean distance between the mean of `fvs` and `centroid`.
pub fn centroid_distance<'a, I>(fvs: I, centroid: &[f64]) -> Result<f64>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    let mut sum = vec![0.0; centroid.len()];
    let mut n = 0usize;
    for fv in fvs {
        if fv.dims() != centroid.len() {
            return Err(Error::DimensionMismatch {
                expected: centroid.len(),
                got: fv.dims(),
            });
        }
        for (s, v) in sum.iter_mut().zip(fv.values()) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("alert set"));
    }
    Ok(mean_distance(&sum, n as f64, centroid))
}

/// Distance between `sum / n` and `centroid`.
pub fn mean_distance(sum: &[f64], n: f64, centroid: &[f64]) -> f64 {
    sum.iter()
        .zip(centroid)
        .map(|(s, c)| (s / n - c).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Clustering baseline score of a neighborhood: distance of its mean alert
/// vector from the centroid of benign training alerts.
pub fn cluster_gd_score(nb: &Neighborhood, benign_centroid: &[f64]) -> Result<f64> {
    centroid_distance(nb.alert_fvs.iter().map(|a| &a.fv), benign_centroid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::AlertFv;
    use crate::neighborhood::WindowBounds;
    use crate::shape::{BinEdges, VectorHistogram};
    use crate::synthetic::{ClassLabel, NodeId};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn nb(values: &[f64], total: u64) -> Neighborhood {
        Neighborhood {
            id: NeighborhoodId {
                window: 0,
                group: 0,
            },
            partition_label: 0,
            window_start: 0.0,
            expiration_time: 10.0,
            bounds: WindowBounds::ClosedOpen,
            member_nodes: BTreeSet::from([NodeId(0)]),
            alert_fvs: values
                .iter()
                .map(|&v| {
                    Arc::new(AlertFv {
                        fv: FeatureVector::new(vec![v]).unwrap(),
                        node: NodeId(0),
                        timestamp: 0.0,
                        true_label: ClassLabel::Benign,
                    })
                })
                .collect(),
            total_fv_count: total,
        }
    }

    fn reference() -> ReferenceHistogram {
        let edges = BinEdges::uniform(&[0.0], &[4.0], 4).unwrap();
        ReferenceHistogram {
            histogram: VectorHistogram::from_weights(vec![vec![1.0, 0.0, 0.0, 0.0]], edges, 1)
                .unwrap(),
            training_fv_count: 1,
        }
    }

    #[test]
    fn shape_gd_eligibility_and_threshold() {
        let r = reference();
        let g = GammaThreshold {
            gamma: 1.0,
            percentile: 0.99,
        };
        let v = shape_gd_classify(&nb(&[3.5], 14_999), &r, &g, DEFAULT_MIN_FVS).unwrap();
        assert_eq!(v.decision, Decision::NoDecision);
        let v = shape_gd_classify(&nb(&[], 20_000), &r, &g, DEFAULT_MIN_FVS).unwrap();
        assert_eq!((v.decision, v.score), (Decision::NoDecision, None));
        let v = shape_gd_classify(&nb(&[3.5], 15_000), &r, &g, DEFAULT_MIN_FVS).unwrap();
        assert_eq!((v.decision, v.score), (Decision::Malicious, Some(3.0)));
        // Score exactly at gamma stays benign.
        let v = shape_gd_classify(&nb(&[1.5], 15_000), &r, &g, DEFAULT_MIN_FVS).unwrap();
        assert_eq!((v.decision, v.score), (Decision::Benign, Some(1.0)));
        let wrong_dims = {
            let mut n = nb(&[], 15_000);
            n.alert_fvs.push(Arc::new(AlertFv {
                fv: FeatureVector::new(vec![1.0, 2.0]).unwrap(),
                node: NodeId(0),
                timestamp: 0.0,
                true_label: ClassLabel::Benign,
            }));
            n
        };
        assert!(shape_gd_classify(&wrong_dims, &r, &g, 0).is_err());
    }

    #[test]
    fn verdict_record_format() {
        let r = reference();
        let g = GammaThreshold {
            gamma: 1.0,
            percentile: 0.99,
        };
        let v = shape_gd_classify(&nb(&[3.5], 15_000), &r, &g, DEFAULT_MIN_FVS).unwrap();
        assert_eq!(v.to_string(), "V,0,0.0,shape_gd,malicious,3,15000");
        let v = shape_gd_classify(&nb(&[], 10), &r, &g, DEFAULT_MIN_FVS).unwrap();
        assert_eq!(v.to_string(), "V,0,0.0,shape_gd,no_decision,,10");
    }

    #[test]
    fn count_gd_toy_examples() {
        let p = stats::normal_cdf(-1.0);
        let small = CountGdConfig::new(100, p).unwrap();
        let tau = small.threshold().unwrap();
        assert!((24..=26).contains(&tau), "{tau}");
        assert_eq!(count_gd_classify(90, &small).unwrap(), Decision::Malicious);
        let big = CountGdConfig::new(1000, p).unwrap();
        let tau = big.threshold().unwrap();
        assert!((185..=190).contains(&tau), "{tau}");
        assert_eq!(count_gd_classify(90, &big).unwrap(), Decision::Benign);
        assert_eq!(
            count_gd_classify(0, &CountGdConfig::new(1, p).unwrap()).unwrap(),
            Decision::Benign
        );
        assert!(CountGdConfig::new(0, p).is_err());
    }

    #[test]
    fn count_gd_monotone() {
        let p = 0.06;
        let mut last = 0;
        for n in (100..5000).step_by(97) {
            let tau = CountGdConfig::new(n, p).unwrap().threshold().unwrap();
            assert!(tau >= last);
            last = tau;
        }
        let cfg = CountGdConfig::new(2000, p).unwrap();
        let decisions: Vec<bool> = (0..400)
            .map(|c| count_gd_classify(c, &cfg).unwrap() == Decision::Malicious)
            .collect();
        assert!(decisions.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn size_error_bounds() {
        assert!(SizeError::new(-1.0).is_err());
        assert_eq!(SizeError::new(-0.1).unwrap().apply(1000), 900);
        assert_eq!(SizeError::new(-0.999_999).unwrap().apply(10), 1);
        let cfg = CountGdConfig::new(1, 0.1).unwrap();
        let few = vec![0u64; 99];
        let many = vec![0u64; 100];
        assert!(
            count_gd_sensitivity(100, SizeError::new(0.0).unwrap(), &cfg, &few, &many).is_err()
        );
    }

    #[test]
    fn cluster_score_properties() {
        let values = [0.5, 1.5, 2.5];
        let c = [1.5];
        assert_eq!(cluster_gd_score(&nb(&values, 0), &c).unwrap(), 0.0);
        let shifted: Vec<f64> = values.iter().map(|v| v + 10.0).collect();
        let d1 = cluster_gd_score(&nb(&values, 0), &[0.0]).unwrap();
        let d2 = cluster_gd_score(&nb(&shifted, 0), &[10.0]).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!(cluster_gd_score(&nb(&[], 0), &c).is_err());
    }
}
