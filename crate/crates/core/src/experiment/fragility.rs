//! Count-GD under a mis-estimated neighborhood size, with Shape-GD on the
//! same neighborhoods for comparison.

use rayon::prelude::*;
use serde::Serialize;

use super::config::FragilityConfig;
use super::setup::DetectorSetup;
use crate::detectors::{count_gd_sensitivity, shape_gd_decide, CountGdConfig, Decision, SizeError};
use crate::seed::{self, stream};
use crate::shape::{build_histogram, shape_score};
use crate::synthetic::{node_fv_seed, sample_fv, ClassLabel, FeatureVector, NodeId};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FragilityRow {
    pub relative_error: f64,
    pub estimated_fv_count: u64,
    pub threshold: u64,
    pub count_fp: f64,
    pub count_tp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FragilityResult {
    pub true_fv_count: u64,
    pub ld_fp_rate: f64,
    pub rows: Vec<FragilityRow>,
    /// Shape-GD rates on the same neighborhoods; independent of the size
    /// estimate.
    pub shape_fp: f64,
    pub shape_tp: f64,
    pub benign_alerts: Vec<u64>,
    pub malicious_alerts: Vec<u64>,
}

struct Sim {
    alerts: u64,
    decision: Decision,
}

/// One neighborhood of `nodes` nodes observed for `seconds` seconds; in an
/// infected run the first `infected_nodes` nodes emit malicious vectors.
fn simulate(
    setup: &DetectorSetup,
    cfg: &FragilityConfig,
    infected: bool,
    fv_seed: u64,
) -> Result<Sim> {
    let reference = setup.primary();
    let mut alerts: Vec<FeatureVector> = Vec::new();
    for n in 0..cfg.nodes {
        let label = if infected && n < cfg.infected_nodes {
            ClassLabel::Malicious
        } else {
            ClassLabel::Benign
        };
        for s in 0..cfg.seconds as u64 {
            let fv = sample_fv(
                &setup.model,
                label,
                node_fv_seed(fv_seed, NodeId(n as u32), s),
            );
            if setup.ld.fires_unchecked(fv.values()) {
                alerts.push(fv);
            }
        }
    }
    let total = (cfg.nodes * cfg.seconds) as u64;
    let score = match build_histogram(&alerts, reference.reference.edges()) {
        Ok(h) => Some(shape_score(&h, &reference.reference)?),
        Err(Error::EmptyInput(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Sim {
        alerts: alerts.len() as u64,
        decision: shape_gd_decide(score, total, &reference.gamma, setup.min_fvs),
    })
}

pub fn run_count_fragility(
    setup: &DetectorSetup,
    cfg: &FragilityConfig,
    run_seed: u64,
) -> Result<FragilityResult> {
    if cfg.runs < 100 || cfg.infected_nodes > cfg.nodes {
        return Err(Error::Config(
            "fragility needs >= 100 runs and infected_nodes <= nodes".into(),
        ));
    }
    let base = seed::derive(run_seed, stream::FRAGILITY);
    let sims: Vec<(Sim, Sim)> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|r| {
            let b = simulate(setup, cfg, false, seed::derive_path(base, &[0, r]))?;
            let m = simulate(setup, cfg, true, seed::derive_path(base, &[1, r]))?;
            Ok((b, m))
        })
        .collect::<Result<_>>()?;
    let benign: Vec<u64> = sims.iter().map(|(b, _)| b.alerts).collect();
    let malicious: Vec<u64> = sims.iter().map(|(_, m)| m.alerts).collect();
    let rate = |f: &dyn Fn(&(Sim, Sim)) -> &Sim| {
        sims.iter()
            .filter(|p| f(p).decision == Decision::Malicious)
            .count() as f64
            / sims.len() as f64
    };
    let true_fv_count = (cfg.nodes * cfg.seconds) as u64;
    let ld_fp_rate = setup.exact.fp_rate;
    let count_cfg = CountGdConfig::new(true_fv_count, ld_fp_rate)?;
    let rows = cfg
        .grid()?
        .into_iter()
        .map(|e| {
            let err = SizeError::new(e)?;
            let est = err.apply(true_fv_count);
            let threshold = CountGdConfig::new(est, ld_fp_rate)?.threshold()?;
            let (count_fp, count_tp) =
                count_gd_sensitivity(true_fv_count, err, &count_cfg, &benign, &malicious)?;
            Ok(FragilityRow {
                relative_error: e,
                estimated_fv_count: est,
                threshold,
                count_fp,
                count_tp,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FragilityResult {
        true_fv_count,
        ld_fp_rate,
        rows,
        shape_fp: rate(&|p| &p.0),
        shape_tp: rate(&|p| &p.1),
        benign_alerts: benign,
        malicious_alerts: malicious,
    })
}
