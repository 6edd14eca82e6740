//! Shape-based global malware detection.
//!
//! Weak per-node local detectors (LDs) emit alert feature vectors. A global
//! detector groups those alerts into neighborhoods defined by an attack
//! vector (clients of the same servers, recipients of the same mailing
//! lists), summarizes each neighborhood as a per-coordinate histogram and
//! flags neighborhoods whose histogram sits far, in Wasserstein distance,
//! from the histogram of known false positives. Count-based and
//! centroid-clustering baselines are provided for comparison, together with
//! synthetic trace generators and an experiment harness.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod detectors;
pub mod error;
pub mod experiment;
pub mod local;
pub mod neighborhood;
pub mod roc;
pub mod seed;
pub mod shape;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
