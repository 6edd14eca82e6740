//! Synthetic class-conditional feature vectors.
//!
//! Two generators stand in for a corpus of benign and malicious execution
//! traces: a scalar Gaussian toy model and an `L`-dimensional model with
//! diagonal covariance. Feature vectors live directly in the reduced
//! (post-projection) feature space.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::local::{train_linear_ld, LinearLd, OperatingPoint};
use crate::seed;
use crate::{Error, Result};

/// Default feature-space dimensionality.
pub const DEFAULT_DIMS: usize = 10;

/// Feature vectors emitted per node per second.
pub const DEFAULT_FV_RATE: f64 = 1.0;

/// Opaque node identifier (a client machine or an email recipient).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point in the reduced feature space. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("feature vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "feature vector entries must be finite".into(),
            ));
        }
        Ok(FeatureVector(values))
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Benign,
    Malicious,
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassLabel::Benign => f.write_str("benign"),
            ClassLabel::Malicious => f.write_str("malicious"),
        }
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "b" | "0" => Ok(ClassLabel::Benign),
            "malicious" | "m" | "1" => Ok(ClassLabel::Malicious),
            other => Err(Error::InvalidParameter(format!("unknown label {other:?}"))),
        }
    }
}

/// Scalar toy model: benign draws from `N(benign_mean, sd)`, malicious from
/// `N(malicious_mean, sd)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianToyModel {
    pub benign_mean: f64,
    pub malicious_mean: f64,
    pub std_dev: f64,
}

impl Default for GaussianToyModel {
    fn default() -> Self {
        GaussianToyModel {
            benign_mean: -1.0,
            malicious_mean: 1.0,
            std_dev: 1.0,
        }
    }
}

impl GaussianToyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.std_dev > 0.0) || !self.std_dev.is_finite() {
            return Err(Error::InvalidParameter("toy std_dev must be > 0".into()));
        }
        if !self.benign_mean.is_finite() || !self.malicious_mean.is_finite() {
            return Err(Error::InvalidParameter("toy means must be finite".into()));
        }
        Ok(())
    }

    pub fn mean(&self, label: ClassLabel) -> f64 {
        match label {
            ClassLabel::Benign => self.benign_mean,
            ClassLabel::Malicious => self.malicious_mean,
        }
    }
}

/// One draw of the toy model. Deterministic in `rng_seed`.
pub fn sample_toy(model: &GaussianToyModel, label: ClassLabel, rng_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let z: f64 = StandardNormal.sample(&mut rng);
    model.mean(label) + model.std_dev * z
}

/// Diagonal-covariance class model in `dims` dimensions.
///
/// The malicious mean is `benign_mean + separation * direction`, with
/// `direction` a unit vector. Scales are per-coordinate standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvClassModel {
    pub dims: usize,
    pub benign_mean: Vec<f64>,
    pub direction: Vec<f64>,
    pub separation: f64,
    pub benign_scale: Vec<f64>,
    pub malicious_scale: Vec<f64>,
}

impl FvClassModel {
    /// Unit scales for both classes; the mean shift is spread evenly over
    /// all coordinates.
    pub fn isotropic(dims: usize, separation: f64) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidParameter("dims must be >= 1".into()));
        }
        let d = 1.0 / (dims as f64).sqrt();
        let model = FvClassModel {
            dims,
            benign_mean: vec![0.0; dims],
            direction: vec![d; dims],
            separation,
            benign_scale: vec![1.0; dims],
            malicious_scale: vec![1.0; dims],
        };
        model.validate()?;
        Ok(model)
    }

    /// The mean shift lies along the first coordinate. Malicious vectors use
    /// `axis_scale` on that coordinate and `off_axis_scale` elsewhere, so the
    /// classes differ in spread as well as location. Benign scales are 1.
    pub fn shape_contrast(
        dims: usize,
        separation: f64,
        axis_scale: f64,
        off_axis_scale: f64,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidParameter("dims must be >= 1".into()));
        }
        let mut direction = vec![0.0; dims];
        direction[0] = 1.0;
        let mut malicious_scale = vec![off_axis_scale; dims];
        malicious_scale[0] = axis_scale;
        let model = FvClassModel {
            dims,
            benign_mean: vec![0.0; dims],
            direction,
            separation,
            benign_scale: vec![1.0; dims],
            malicious_scale,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d == 0 {
            return Err(Error::InvalidParameter("dims must be >= 1".into()));
        }
        for (name, v) in [
            ("benign_mean", &self.benign_mean),
            ("direction", &self.direction),
            ("benign_scale", &self.benign_scale),
            ("malicious_scale", &self.malicious_scale),
        ] {
            if v.len() != d {
                return Err(Error::InvalidParameter(format!(
                    "{name} has length {}, expected {d}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if self
            .benign_scale
            .iter()
            .chain(&self.malicious_scale)
            .any(|&s| !(s > 0.0))
        {
            return Err(Error::InvalidParameter("all scales must be > 0".into()));
        }
        let norm: f64 = self.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "direction must be a unit vector".into(),
            ));
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::InvalidParameter(
                "separation must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn with_separation(&self, separation: f64) -> Self {
        FvClassModel {
            separation,
            ..self.clone()
        }
    }

    pub fn malicious_mean(&self) -> Vec<f64> {
        self.benign_mean
            .iter()
            .zip(&self.direction)
            .map(|(m, d)| m + self.separation * d)
            .collect()
    }

    pub fn mean(&self, label: ClassLabel) -> Vec<f64> {
        match label {
            ClassLabel::Benign => self.benign_mean.clone(),
            ClassLabel::Malicious => self.malicious_mean(),
        }
    }

    pub fn scale(&self, label: ClassLabel) -> &[f64] {
        match label {
            ClassLabel::Benign => &self.benign_scale,
            ClassLabel::Malicious => &self.malicious_scale,
        }
    }

    /// Builds a vector from a standard-normal draw `z`.
    fn compose(&self, label: ClassLabel, z: &[f64]) -> Vec<f64> {
        let scale = self.scale(label);
        match label {
            ClassLabel::Benign => self
                .benign_mean
                .iter()
                .zip(scale)
                .zip(z)
                .map(|((m, s), z)| m + s * z)
                .collect(),
            ClassLabel::Malicious => self
                .benign_mean
                .iter()
                .zip(&self.direction)
                .zip(scale)
                .zip(z)
                .map(|(((m, d), s), z)| m + self.separation * d + s * z)
                .collect(),
        }
    }
}

/// One `L`-dimensional draw with independent per-coordinate Gaussian noise
/// around the class mean. Deterministic in `rng_seed`.
pub fn sample_fv(model: &FvClassModel, label: ClassLabel, rng_seed: u64) -> FeatureVector {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let z: Vec<f64> = (0..model.dims)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    FeatureVector(model.compose(label, &z))
}

/// Seed of the feature vector a node emits during second `index` of a run.
#[inline]
pub fn node_fv_seed(run_seed: u64, node: NodeId, index: u64) -> u64 {
    seed::derive(seed::derive(run_seed, u64::from(node.0)), index)
}

/// One record of a per-node feature-vector stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FvRecord {
    pub fv: FeatureVector,
    pub node: NodeId,
    pub timestamp: f64,
    pub label: ClassLabel,
}

/// A node emitting feature vectors of a fixed class at a fixed rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FvStream {
    pub node: NodeId,
    pub label: ClassLabel,
    pub rate: f64,
}

impl FvStream {
    pub fn new(node: NodeId, label: ClassLabel) -> Self {
        FvStream {
            node,
            label,
            rate: DEFAULT_FV_RATE,
        }
    }

    /// Records emitted in `[start, end)`. The i-th record of the stream
    /// (timestamp `i / rate`) is a pure function of `(run_seed, node, i)`.
    pub fn records<'a>(
        &'a self,
        model: &'a FvClassModel,
        run_seed: u64,
        start: f64,
        end: f64,
    ) -> Result<impl Iterator<Item = FvRecord> + 'a> {
        if !(self.rate > 0.0) {
            return Err(Error::InvalidParameter("FV rate must be > 0".into()));
        }
        let first = (start * self.rate).ceil().max(0.0) as u64;
        let last = (end * self.rate).ceil().max(0.0) as u64;
        Ok((first..last).map(move |i| FvRecord {
            fv: sample_fv(model, self.label, node_fv_seed(run_seed, self.node, i)),
            node: self.node,
            timestamp: i as f64 / self.rate,
            label: self.label,
        }))
    }
}

/// Result of fitting the class separation to a target operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub model: FvClassModel,
    pub detector: LinearLd,
    /// Rates measured on a held-out sample.
    pub measured: OperatingPoint,
}

/// Sample sizes and seed for [`calibrate_separation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub samples_per_class: usize,
    pub seed: u64,
    /// Upper end of the bisection bracket, in units of the benign scale.
    pub max_separation: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        CalibrationSpec {
            samples_per_class: 100_000,
            seed: 0,
            max_separation: 20.0,
        }
    }
}

/// Finds the separation at which a mean-difference linear detector trained
/// for `target_fp` reaches `target_tp`, by bisection over
/// `[0, max_separation]`.
///
/// Standard-normal draws are fixed across bisection steps, so the measured
/// rate changes only through the separation. The returned detector is the
/// one trained at the final separation; `measured` comes from an independent
/// held-out sample.
pub fn calibrate_separation(
    model: &FvClassModel,
    target_fp: f64,
    target_tp: f64,
    spec: &CalibrationSpec,
) -> Result<Calibration> {
    model.validate()?;
    if !(0.0 < target_fp && target_fp < target_tp && target_tp < 1.0) {
        return Err(Error::Infeasible(format!(
            "need 0 < fp < tp < 1, got fp={target_fp}, tp={target_tp}"
        )));
    }
    if spec.samples_per_class < 100 {
        return Err(Error::InsufficientSample {
            needed: 100,
            got: spec.samples_per_class,
        });
    }
    let n = spec.samples_per_class;
    let d = model.dims;
    let draw = |stream: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, stream));
        (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    };
    let zb_train = draw(1);
    let zm_train = draw(2);

    let build = |sep: f64, z: &[f64], label: ClassLabel| -> Vec<FeatureVector> {
        let m = model.with_separation(sep);
        z.chunks_exact(d)
            .map(|row| FeatureVector(m.compose(label, row)))
            .collect()
    };

    let tp_at = |sep: f64| -> Result<(f64, LinearLd)> {
        let benign = build(sep, &zb_train, ClassLabel::Benign);
        let malicious = build(sep, &zm_train, ClassLabel::Malicious);
        let ld = match train_linear_ld(&benign, &malicious, target_fp) {
            Ok(ld) => ld,
            // Identical class means: the detector is useless, TP = FP.
            Err(Error::Untrainable(_)) => return Ok((target_fp, LinearLd::degenerate(d))),
            Err(e) => return Err(e),
        };
        let tp = ld.alert_rate(&malicious)?;
        Ok((tp, ld))
    };

    let scale = model.benign_scale.iter().cloned().fold(f64::MIN, f64::max);
    let mut lo = 0.0;
    let mut hi = spec.max_separation * scale;
    let (tp_hi, _) = tp_at(hi)?;
    if tp_hi < target_tp {
        return Err(Error::Infeasible(format!(
            "TP {tp_hi:.4} at separation {hi} is below target {target_tp}"
        )));
    }
    let (tp_lo, _) = tp_at(lo)?;
    if tp_lo >= target_tp {
        return Err(Error::Infeasible(format!(
            "TP {tp_lo:.4} at separation 0 already reaches target {target_tp}"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (tp, _) = tp_at(mid)?;
        if tp < target_tp {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-7 {
            break;
        }
    }
    let calibrated = model.with_separation(hi);
    let (_, detector) = tp_at(hi)?;

    let zb_test = draw(3);
    let zm_test = draw(4);
    let benign = build(hi, &zb_test, ClassLabel::Benign);
    let malicious = build(hi, &zm_test, ClassLabel::Malicious);
    let measured = OperatingPoint {
        fp_rate: detector.alert_rate(&benign)?,
        tp_rate: detector.alert_rate(&malicious)?,
    };
    if (measured.fp_rate - target_fp).abs() > 0.01 || (measured.tp_rate - target_tp).abs() > 0.01 {
        return Err(Error::Infeasible(format!(
            "held-out operating point ({:.4}, {:.4}) misses target ({target_fp}, {target_tp})",
            measured.fp_rate, measured.tp_rate
        )));
    }
    Ok(Calibration {
        model: calibrated,
        detector,
        measured,
    })
}

/// Alert probability of a linear detector on vectors of class `label`,
/// in closed form: the projection of a diagonal Gaussian is Gaussian.
pub fn exact_alert_rate(ld: &LinearLd, model: &FvClassModel, label: ClassLabel) -> Result<f64> {
    if ld.weights.len() != model.dims {
        return Err(Error::DimensionMismatch {
            expected: model.dims,
            got: ld.weights.len(),
        });
    }
    if ld.bias == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let mean: f64 = ld
        .weights
        .iter()
        .zip(model.mean(label))
        .map(|(w, m)| w * m)
        .sum::<f64>()
        + ld.bias;
    let sd = ld
        .weights
        .iter()
        .zip(model.scale(label))
        .map(|(w, s)| (w * s).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(crate::stats::normal_cdf(mean / sd))
}

/// Writes records as `node,timestamp,label,v1,...,vL` lines.
pub fn write_fv_replay<W: Write>(mut out: W, records: &[FvRecord]) -> Result<()> {
    for r in records {
        write!(out, "{},{},{}", r.node, r.timestamp, r.label)?;
        for v in r.fv.values() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads an FV replay file. All vectors must have `dims` entries.
pub fn read_fv_replay<R: BufRead>(input: R, dims: usize) -> Result<Vec<FvRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 + dims {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, got {}", 3 + dims, fields.len()),
            ));
        }
        let node = fields[0]
            .parse::<u32>()
            .map_err(|e| Error::parse(lineno, format!("node id: {e}")))?;
        let timestamp = fields[1]
            .parse::<f64>()
            .map_err(|e| Error::parse(lineno, format!("timestamp: {e}")))?;
        if !(timestamp >= 0.0) || !timestamp.is_finite() {
            return Err(Error::parse(lineno, "timestamp must be finite and >= 0"));
        }
        let label = fields[2]
            .parse::<ClassLabel>()
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        let values = fields[3..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(lineno, format!("value: {e}")))?;
        let fv = FeatureVector::new(values).map_err(|e| Error::parse(lineno, e.to_string()))?;
        records.push(FvRecord {
            fv,
            node: NodeId(node),
            timestamp,
            label,
        });
    }
    Ok(records)
}
