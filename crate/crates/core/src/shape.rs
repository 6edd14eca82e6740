//! Vector histograms, the coordinate-wise Wasserstein score, reference
//! training and threshold calibration.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::local::LocalDetector;
use crate::stats;
use crate::synthetic::FeatureVector;
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_PERCENTILE: f64 = 0.99;
/// Default benign feature-vector budget for reference training.
pub const DEFAULT_REFERENCE_BUDGET: usize = 15_000;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Per-dimension bin edges: `dims` arrays of `bins + 1` strictly ascending
/// values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEdges {
    edges: Vec<Vec<f64>>,
}

impl BinEdges {
    pub fn new(edges: Vec<Vec<f64>>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyInput("bin edges"));
        }
        let len = edges[0].len();
        if len < 2 {
            return Err(Error::InvalidParameter("need at least one bin".into()));
        }
        for row in &edges {
            if row.len() != len {
                return Err(Error::InvalidParameter(
                    "all dimensions need the same bin count".into(),
                ));
            }
            if row.iter().any(|e| !e.is_finite()) || row.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidParameter(
                    "bin edges must be finite and strictly ascending".into(),
                ));
            }
        }
        Ok(BinEdges { edges })
    }

    /// `bins` equal-width bins over `[lo[l], hi[l]]` in each dimension.
    pub fn uniform(lo: &[f64], hi: &[f64], bins: usize) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if bins == 0 {
            return Err(Error::InvalidParameter("bins must be >= 1".into()));
        }
        let edges = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let width = (b - a) / bins as f64;
                let mut row: Vec<f64> = (0..bins).map(|i| a + width * i as f64).collect();
                row.push(b);
                row
            })
            .collect();
        BinEdges::new(edges)
    }

    /// Uniform edges spanning the per-dimension range of `fvs`. A dimension
    /// with zero range is widened to `[v - 0.5, v + 0.5]`.
    pub fn spanning<'a, I>(fvs: I, bins: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureVector>,
    {
        let mut iter = fvs.into_iter();
        let first = iter.next().ok_or(Error::EmptyInput("training alert set"))?;
        let mut lo = first.values().to_vec();
        let mut hi = lo.clone();
        for fv in iter {
            if fv.dims() != lo.len() {
                return Err(Error::DimensionMismatch {
                    expected: lo.len(),
                    got: fv.dims(),
                });
            }
            for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(fv.values()) {
                *l = l.min(v);
                *h = h.max(v);
            }
        }
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            if *h <= *l {
                *l -= 0.5;
                *h += 0.5;
            }
        }
        BinEdges::uniform(&lo, &hi, bins)
    }

    pub fn dims(&self) -> usize {
        self.edges.len()
    }

    pub fn bins(&self) -> usize {
        self.edges[0].len() - 1
    }

    pub fn row(&self, dim: usize) -> &[f64] {
        &self.edges[dim]
    }

    /// Bin of `x` in dimension `dim`. Bins are `[e_i, e_{i+1})`; values
    /// outside the edge range clamp into the first or last bin.
    #[inline]
    pub fn bin_index(&self, dim: usize, x: f64) -> usize {
        let row = &self.edges[dim];
        let b = row.len() - 1;
        row[1..b].partition_point(|&e| e <= x)
    }
}

/// `dims x bins` matrix of per-coordinate normalized bin weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorHistogram {
    weights: Vec<Vec<f64>>,
    edges: BinEdges,
    samples: usize,
}

impl VectorHistogram {
    pub fn dims(&self) -> usize {
        self.weights.len()
    }

    pub fn bins(&self) -> usize {
        self.edges.bins()
    }

    pub fn row(&self, dim: usize) -> &[f64] {
        &self.weights[dim]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn edges(&self) -> &BinEdges {
        &self.edges
    }

    /// Number of vectors the histogram was built from.
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Builds a histogram from explicit weights, checking normalization.
    pub fn from_weights(weights: Vec<Vec<f64>>, edges: BinEdges, samples: usize) -> Result<Self> {
        if weights.len() != edges.dims() {
            return Err(Error::DimensionMismatch {
                expected: edges.dims(),
                got: weights.len(),
            });
        }
        for row in &weights {
            if row.len() != edges.bins() {
                return Err(Error::ShapeMismatch);
            }
            check_normalized(row)?;
        }
        Ok(VectorHistogram {
            weights,
            edges,
            samples,
        })
    }
}

fn check_normalized(row: &[f64]) -> Result<()> {
    if row.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "histogram weights must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Unnormalized(sum));
    }
    Ok(())
}

/// Bins every coordinate of every vector and normalizes each row to unit
/// mass. An empty input has no valid histogram and is reported as
/// [`Error::EmptyInput`].
pub fn build_histogram<'a, I>(fvs: I, edges: &BinEdges) -> Result<VectorHistogram>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    let dims = edges.dims();
    let bins = edges.bins();
    let mut counts = vec![vec![0u64; bins]; dims];
    let mut n = 0usize;
    for fv in fvs {
        if fv.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: fv.dims(),
            });
        }
        for (l, &v) in fv.values().iter().enumerate() {
            counts[l][edges.bin_index(l, v)] += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("alert set"));
    }
    let total = n as f64;
    let weights = counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / total).collect())
        .collect();
    Ok(VectorHistogram {
        weights,
        edges: edges.clone(),
        samples: n,
    })
}

/// `sum_i |sum_{j<=i} (p_j - q_j)|` for two normalized rows of equal length.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::EmptyInput("histogram row"));
    }
    check_normalized(p)?;
    check_normalized(q)?;
    Ok(prefix_distance(p, q))
}

#[inline]
fn prefix_distance(p: &[f64], q: &[f64]) -> f64 {
    let mut carried = 0.0;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        carried += a - b;
        total += carried.abs();
    }
    total
}

/// Bin counts of a multiset of vectors that can grow and shrink, for
/// scoring sliding or growing neighborhoods without rebuilding.
///
/// [`HistogramAccumulator::score`] equals `shape_score(build_histogram(..))`
/// on the same multiset bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramAccumulator {
    edges: BinEdges,
    counts: Vec<u64>,
    samples: u64,
}

impl HistogramAccumulator {
    pub fn new(edges: BinEdges) -> Self {
        let cells = edges.dims() * edges.bins();
        HistogramAccumulator {
            edges,
            counts: vec![0; cells],
            samples: 0,
        }
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn edges(&self) -> &BinEdges {
        &self.edges
    }

    fn check(&self, fv: &FeatureVector) -> Result<()> {
        if fv.dims() != self.edges.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.edges.dims(),
                got: fv.dims(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, fv: &FeatureVector) -> Result<()> {
        self.check(fv)?;
        let b = self.edges.bins();
        for (l, &v) in fv.values().iter().enumerate() {
            self.counts[l * b + self.edges.bin_index(l, v)] += 1;
        }
        self.samples += 1;
        Ok(())
    }

    /// Removes one copy of `fv`, which must have been added before.
    pub fn remove(&mut self, fv: &FeatureVector) -> Result<()> {
        self.check(fv)?;
        let b = self.edges.bins();
        let cells: Vec<usize> = fv
            .values()
            .iter()
            .enumerate()
            .map(|(l, &v)| l * b + self.edges.bin_index(l, v))
            .collect();
        if self.samples == 0 || cells.iter().any(|&c| self.counts[c] == 0) {
            return Err(Error::InvalidParameter(
                "removing a vector that was never added".into(),
            ));
        }
        for c in cells {
            self.counts[c] -= 1;
        }
        self.samples -= 1;
        Ok(())
    }

    pub fn histogram(&self) -> Result<VectorHistogram> {
        if self.samples == 0 {
            return Err(Error::EmptyInput("alert set"));
        }
        let total = self.samples as f64;
        let weights = self
            .counts
            .chunks(self.edges.bins())
            .map(|row| row.iter().map(|&c| c as f64 / total).collect())
            .collect();
        Ok(VectorHistogram {
            weights,
            edges: self.edges.clone(),
            samples: self.samples as usize,
        })
    }

    pub fn score(&self, reference: &ReferenceHistogram) -> Result<ShapeScore> {
        if self.samples == 0 {
            return Err(Error::EmptyInput("alert set"));
        }
        if self.edges != reference.histogram.edges {
            return Err(Error::ShapeMismatch);
        }
        let total = self.samples as f64;
        let b = self.edges.bins();
        let mut sum = 0.0;
        for (counts, r) in self.counts.chunks(b).zip(&reference.histogram.weights) {
            let mut carried = 0.0;
            let mut row = 0.0;
            for (&c, q) in counts.iter().zip(r) {
                carried += c as f64 / total - q;
                row += f64::abs(carried);
            }
            sum += row;
        }
        Ok(ShapeScore(sum))
    }
}

/// Neighborhood score: distance of a histogram from the reference.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ShapeScore(pub f64);

impl ShapeScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Histogram of false-positive alert vectors from known-benign activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHistogram {
    pub histogram: VectorHistogram,
    /// Benign feature vectors consumed to collect the false positives.
    pub training_fv_count: usize,
}

impl ReferenceHistogram {
    pub fn edges(&self) -> &BinEdges {
        self.histogram.edges()
    }

    /// Number of false-positive alert vectors behind the histogram.
    pub fn alert_count(&self) -> usize {
        self.histogram.samples()
    }
}

/// Sum over coordinates of the 1-D Wasserstein distance between `h` and
/// the reference. Both must share bin edges exactly.
pub fn shape_score(h: &VectorHistogram, reference: &ReferenceHistogram) -> Result<ShapeScore> {
    let r = &reference.histogram;
    if h.edges != r.edges {
        return Err(Error::ShapeMismatch);
    }
    let total = h
        .weights
        .iter()
        .zip(&r.weights)
        .map(|(a, b)| prefix_distance(a, b))
        .sum();
    Ok(ShapeScore(total))
}

/// Runs `ld` over benign vectors until `budget` have been consumed and
/// returns the false-positive alert vectors.
pub fn collect_false_positives<I>(
    benign_fvs: I,
    ld: &LocalDetector,
    budget: usize,
) -> Result<Vec<FeatureVector>>
where
    I: IntoIterator<Item = FeatureVector>,
{
    let dims = ld.dims();
    let mut consumed = 0usize;
    let mut alerts = Vec::new();
    for fv in benign_fvs.into_iter().take(budget) {
        if fv.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: fv.dims(),
            });
        }
        consumed += 1;
        if ld.fires_unchecked(fv.values()) {
            alerts.push(fv);
        }
    }
    if consumed < budget {
        return Err(Error::InsufficientSample {
            needed: budget,
            got: consumed,
        });
    }
    Ok(alerts)
}

/// Builds a reference from collected false positives. Edges span the
/// per-dimension range of the alerts.
pub fn reference_from_alerts(
    alerts: &[FeatureVector],
    training_fv_count: usize,
    bins: usize,
) -> Result<ReferenceHistogram> {
    if alerts.len() < 2 {
        return Err(Error::InsufficientSample {
            needed: 2,
            got: alerts.len(),
        });
    }
    let edges = BinEdges::spanning(alerts, bins)?;
    let histogram = build_histogram(alerts, &edges)?;
    Ok(ReferenceHistogram {
        histogram,
        training_fv_count,
    })
}

/// Trains the reference histogram from the false positives `ld` raises on
/// the first `budget` vectors of a purely benign stream.
pub fn train_reference<I>(
    benign_fvs: I,
    ld: &LocalDetector,
    budget: usize,
    bins: usize,
) -> Result<ReferenceHistogram>
where
    I: IntoIterator<Item = FeatureVector>,
{
    let alerts = collect_false_positives(benign_fvs, ld, budget)?;
    reference_from_alerts(&alerts, budget, bins)
}

/// Mean of a set of vectors.
pub fn centroid(fvs: &[FeatureVector]) -> Result<Vec<f64>> {
    let first = fvs.first().ok_or(Error::EmptyInput("vector set"))?;
    let mut acc = vec![0.0; first.dims()];
    for fv in fvs {
        if fv.dims() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                got: fv.dims(),
            });
        }
        for (a, v) in acc.iter_mut().zip(fv.values()) {
            *a += v;
        }
    }
    let n = fvs.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Decision threshold on the shape score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaThreshold {
    pub gamma: f64,
    pub percentile: f64,
}

/// Smallest sample that makes the nearest-rank `percentile` meaningful.
pub fn min_calibration_sample(percentile: f64) -> usize {
    if percentile >= 1.0 {
        1
    } else {
        (1.0 / (1.0 - percentile) - 1e-9).ceil() as usize
    }
}

/// Nearest-rank percentile of benign neighborhood scores.
pub fn calibrate_gamma(benign_scores: &[ShapeScore], percentile: f64) -> Result<GammaThreshold> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "percentile {percentile} outside (0, 1]"
        )));
    }
    let needed = min_calibration_sample(percentile);
    if benign_scores.len() < needed {
        return Err(Error::InsufficientSample {
            needed,
            got: benign_scores.len(),
        });
    }
    let values: Vec<f64> = benign_scores.iter().map(|s| s.0).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    let gamma = stats::nearest_rank(&stats::sorted(&values), percentile)
        .expect("non-empty sample and valid percentile");
    Ok(GammaThreshold { gamma, percentile })
}

const REFERENCE_MAGIC: &str = "shapegd-reference";
const REFERENCE_VERSION: u32 = 1;

fn write_row<W: Write>(out: &mut W, tag: &str, dim: usize, row: &[f64]) -> Result<()> {
    write!(out, "{tag} {dim}")?;
    for v in row {
        write!(out, " {v:?}")?;
    }
    writeln!(out)?;
    Ok(())
}

/// Writes a reference histogram and its threshold as versioned text.
///
/// Floats use the shortest representation that parses back to the same
/// bits, so a write/read cycle is exact.
pub fn write_reference<W: Write>(
    mut out: W,
    reference: &ReferenceHistogram,
    gamma: &GammaThreshold,
) -> Result<()> {
    let h = &reference.histogram;
    writeln!(out, "{REFERENCE_MAGIC} v{REFERENCE_VERSION}")?;
    writeln!(out, "dims {}", h.dims())?;
    writeln!(out, "bins {}", h.bins())?;
    writeln!(out, "percentile {:?}", gamma.percentile)?;
    writeln!(out, "gamma {:?}", gamma.gamma)?;
    writeln!(out, "training_fv_count {}", reference.training_fv_count)?;
    writeln!(out, "alert_count {}", h.samples())?;
    for l in 0..h.dims() {
        write_row(&mut out, "edges", l, h.edges.row(l))?;
    }
    for l in 0..h.dims() {
        write_row(&mut out, "weights", l, h.row(l))?;
    }
    Ok(())
}

pub fn read_reference<R: BufRead>(input: R) -> Result<(ReferenceHistogram, GammaThreshold)> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| r.as_ref().map_or(true, |(_, l)| !l.trim().is_empty()));

    let mut next = |what: &str| -> Result<(usize, Vec<String>)> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected {what}")))??;
        Ok((no, line.split_whitespace().map(str::to_owned).collect()))
    };
    fn value<T: std::str::FromStr>(no: usize, fields: &[String], key: &str) -> Result<T> {
        if fields.len() != 2 || fields[0] != key {
            return Err(Error::parse(no, format!("expected `{key} <value>`")));
        }
        fields[1]
            .parse()
            .map_err(|_| Error::parse(no, format!("bad value for {key}")))
    }

    let (no, header) = next("header")?;
    if header.len() != 2 || header[0] != REFERENCE_MAGIC {
        return Err(Error::parse(no, "not a reference histogram file"));
    }
    if header[1] != format!("v{REFERENCE_VERSION}") {
        return Err(Error::parse(
            no,
            format!("unsupported version {}", header[1]),
        ));
    }
    let (no, f) = next("dims")?;
    let dims: usize = value(no, &f, "dims")?;
    let (no, f) = next("bins")?;
    let bins: usize = value(no, &f, "bins")?;
    let (no, f) = next("percentile")?;
    let percentile: f64 = value(no, &f, "percentile")?;
    let (no, f) = next("gamma")?;
    let gamma: f64 = value(no, &f, "gamma")?;
    let (no, f) = next("training_fv_count")?;
    let training_fv_count: usize = value(no, &f, "training_fv_count")?;
    let (no, f) = next("alert_count")?;
    let alert_count: usize = value(no, &f, "alert_count")?;

    let mut read_rows = |tag: &str, len: usize| -> Result<Vec<Vec<f64>>> {
        (0..dims)
            .map(|l| {
                let (no, f) = next(tag)?;
                if f.len() != len + 2 || f[0] != tag || f[1] != l.to_string() {
                    return Err(Error::parse(
                        no,
                        format!("expected `{tag} {l}` with {len} values"),
                    ));
                }
                f[2..]
                    .iter()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::parse(no, e.to_string()))
            })
            .collect()
    };
    let edges = BinEdges::new(read_rows("edges", bins + 1)?)?;
    let weights = read_rows("weights", bins)?;
    let histogram = VectorHistogram::from_weights(weights, edges, alert_count)?;
    Ok((
        ReferenceHistogram {
            histogram,
            training_fv_count,
        },
        GammaThreshold { gamma, percentile },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::LinearLd;
    use crate::seed;
    use crate::synthetic::{sample_fv, ClassLabel, FvClassModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn unit_edges(dims: usize, bins: usize) -> BinEdges {
        BinEdges::uniform(&vec![0.0; dims], &vec![bins as f64; dims], bins).unwrap()
    }

    #[test]
    fn one_vector_gives_one_hot_rows() {
        let edges = unit_edges(3, 5);
        let h = build_histogram(&[fv(&[3.5, 3.0, 3.99])], &edges).unwrap();
        for l in 0..3 {
            let mut expect = vec![0.0; 5];
            expect[3] = 1.0;
            assert_eq!(h.row(l), expect.as_slice());
        }
    }

    #[test]
    fn out_of_range_values_clamp() {
        let edges = unit_edges(1, 4);
        assert_eq!(edges.bin_index(0, -10.0), 0);
        assert_eq!(edges.bin_index(0, 4.0), 3);
        assert_eq!(edges.bin_index(0, 40.0), 3);
        assert_eq!(edges.bin_index(0, 1.0), 1);
    }

    #[test]
    fn empty_set_is_invalid() {
        let edges = unit_edges(2, 4);
        let none: Vec<FeatureVector> = Vec::new();
        assert!(matches!(
            build_histogram(&none, &edges),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn duplicating_the_multiset_changes_nothing() {
        let edges = unit_edges(2, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set: Vec<_> = (0..37)
            .map(|_| fv(&[rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]))
            .collect();
        let mut tenfold = Vec::new();
        for _ in 0..10 {
            tenfold.extend(set.iter().cloned());
        }
        let a = build_histogram(&set, &edges).unwrap();
        let b = build_histogram(&tenfold, &edges).unwrap();
        assert_eq!(a.rows(), b.rows());
    }

    #[test]
    fn uniform_draws_fill_bins_evenly() {
        let bins = 50;
        let edges = unit_edges(1, bins);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set: Vec<_> = (0..10_000)
            .map(|_| fv(&[rng.random_range(0.0..bins as f64)]))
            .collect();
        let h = build_histogram(&set, &edges).unwrap();
        for &w in h.row(0) {
            assert!((w - 1.0 / bins as f64).abs() < 0.02);
        }
    }

    #[test]
    fn wasserstein_hand_values() {
        assert_eq!(wasserstein_1d(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(
            wasserstein_1d(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0]).unwrap(),
            3.0
        );
        assert_eq!(wasserstein_1d(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.5);
        let p = [0.2, 0.3, 0.5];
        assert_eq!(wasserstein_1d(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_rejects_bad_input() {
        assert!(matches!(
            wasserstein_1d(&[1.0], &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            wasserstein_1d(&[0.5, 0.6], &[0.5, 0.5]),
            Err(Error::Unnormalized(_))
        ));
    }

    fn reference_of(rows: Vec<Vec<f64>>) -> ReferenceHistogram {
        let edges = unit_edges(rows.len(), rows[0].len());
        ReferenceHistogram {
            histogram: VectorHistogram::from_weights(rows, edges, 1).unwrap(),
            training_fv_count: 1,
        }
    }

    #[test]
    fn shape_score_sums_rows() {
        let r = reference_of(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let h = VectorHistogram::from_weights(
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            r.edges().clone(),
            1,
        )
        .unwrap();
        assert_eq!(shape_score(&h, &r).unwrap(), ShapeScore(1.5));
        assert_eq!(shape_score(&r.histogram, &r).unwrap(), ShapeScore(0.0));
    }

    #[test]
    fn shape_score_requires_identical_edges() {
        let r = reference_of(vec![vec![0.0, 1.0]]);
        let other = BinEdges::uniform(&[0.0], &[3.0], 2).unwrap();
        let h = VectorHistogram::from_weights(vec![vec![0.0, 1.0]], other, 1).unwrap();
        assert!(matches!(shape_score(&h, &r), Err(Error::ShapeMismatch)));
    }

    #[test]
    fn gamma_nearest_rank() {
        let scores: Vec<_> = (1..=100).map(|i| ShapeScore(i as f64)).collect();
        assert_eq!(calibrate_gamma(&scores, 0.99).unwrap().gamma, 99.0);
        assert_eq!(calibrate_gamma(&scores, 1.0).unwrap().gamma, 100.0);
        assert!(matches!(
            calibrate_gamma(&scores[..99], 0.99),
            Err(Error::InsufficientSample {
                needed: 100,
                got: 99
            })
        ));
    }

    #[test]
    fn reference_needs_false_positives() {
        let m = FvClassModel::isotropic(2, 3.0).unwrap();
        // Boundary far beyond any benign draw: no false positives.
        let ld = LocalDetector::from(LinearLd::new(vec![1.0, 0.0], -1e6).unwrap());
        let fvs = (0..1000).map(|i| sample_fv(&m, ClassLabel::Benign, seed::derive(1, i)));
        assert!(matches!(
            train_reference(fvs, &ld, 1000, 50),
            Err(Error::InsufficientSample { .. })
        ));
        let short = (0..10).map(|i| sample_fv(&m, ClassLabel::Benign, seed::derive(1, i)));
        assert!(train_reference(short, &ld, 1000, 50).is_err());
    }

    #[test]
    fn reference_file_round_trip_is_exact() {
        let m = FvClassModel::isotropic(4, 3.0).unwrap();
        let ld = LocalDetector::from(LinearLd::new(vec![0.5; 4], -1.0).unwrap());
        let fvs = (0..5000).map(|i| sample_fv(&m, ClassLabel::Benign, seed::derive(2, i)));
        let reference = train_reference(fvs, &ld, 5000, 20).unwrap();
        let gamma = GammaThreshold {
            gamma: 1.0 / 3.0,
            percentile: 0.99,
        };
        let mut buf = Vec::new();
        write_reference(&mut buf, &reference, &gamma).unwrap();
        let (back, g) = read_reference(buf.as_slice()).unwrap();
        assert_eq!(back, reference);
        assert_eq!(g, gamma);
        let mut again = Vec::new();
        write_reference(&mut again, &back, &g).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn accumulator_matches_batch_histogram() {
        let m = FvClassModel::isotropic(3, 2.0).unwrap();
        let set: Vec<_> = (0..500)
            .map(|i| sample_fv(&m, ClassLabel::Benign, seed::derive(4, i)))
            .collect();
        let edges = BinEdges::spanning(&set[..100], 25).unwrap();
        let reference = ReferenceHistogram {
            histogram: build_histogram(&set[..100], &edges).unwrap(),
            training_fv_count: 100,
        };
        let mut acc = HistogramAccumulator::new(edges.clone());
        assert!(acc.score(&reference).is_err());
        for fv in &set {
            acc.add(fv).unwrap();
        }
        for fv in &set[..200] {
            acc.remove(fv).unwrap();
        }
        let h = build_histogram(&set[200..], &edges).unwrap();
        assert_eq!(acc.histogram().unwrap(), h);
        assert_eq!(
            acc.score(&reference).unwrap().0.to_bits(),
            shape_score(&h, &reference).unwrap().0.to_bits()
        );
        let mut empty = HistogramAccumulator::new(edges);
        assert!(empty.remove(&set[0]).is_err());
    }

    #[test]
    fn reference_file_rejects_garbage() {
        assert!(read_reference("hello\n".as_bytes()).is_err());
        assert!(read_reference("shapegd-reference v9\n".as_bytes()).is_err());
    }
}
