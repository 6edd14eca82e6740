//! Shape-GD against a centroid-distance baseline on early-stage phishing
//! neighborhoods, each paired with a benign neighborhood at the same time.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ClusterConfig;
use super::detection::{run_batch, Checkpoint, RunContext};
use super::setup::DetectorSetup;
use crate::attack::{generate_phishing_trace, PhishingScenario};
use crate::neighborhood::{PartitionSpec, ResourceId, TemplateType};
use crate::roc::compute_roc;
use crate::seed::{self, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterPair {
    pub repetition: usize,
    pub eval_time: f64,
    pub infected: usize,
    pub infected_shape: f64,
    pub infected_cluster: f64,
    pub benign_shape: f64,
    pub benign_cluster: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub pairs: Vec<ClusterPair>,
    /// Repetitions with no eligible checkpoint in the infection range.
    pub skipped: usize,
    pub shape_auc: Option<f64>,
    pub cluster_auc: Option<f64>,
}

/// Single-neighborhood scores at one checkpoint, if eligible.
fn scores(cp: &Checkpoint, min_fvs: u64) -> Option<(f64, f64)> {
    let nb = cp.neighborhoods.first()?;
    if nb.total_fv_count < min_fvs {
        return None;
    }
    Some((nb.score?, nb.centroid_distance?))
}

fn observe(
    setup: &DetectorSetup,
    scenario: &PhishingScenario,
    cfg: &ClusterConfig,
    trace_seed: u64,
    mut pick: impl FnMut(&Checkpoint) -> ControlFlow<()>,
) -> Result<()> {
    let trace = generate_phishing_trace(scenario, cfg.ntw, trace_seed)?;
    let partition =
        PartitionSpec::contiguous((0..scenario.thread_count as u32).map(ResourceId), 1)?;
    let ctx = RunContext {
        setup,
        reference: setup.primary(),
        infections: &trace.infections,
        fv_seed: seed::derive(trace_seed, stream::NODE_FV),
    };
    run_batch(
        &ctx,
        TemplateType::Phishing,
        partition,
        &trace.events,
        cfg.ntw,
        cfg.ntw,
        cfg.checkpoint_interval,
        &mut pick,
    )?;
    Ok(())
}

fn pair(
    setup: &DetectorSetup,
    scenario: &PhishingScenario,
    cfg: &ClusterConfig,
    run_seed: u64,
    rep: usize,
) -> Result<Option<ClusterPair>> {
    let max_infected = (cfg.max_infected_fraction * scenario.universe_size as f64).floor() as usize;
    let mut chosen: Option<(f64, usize, f64, f64)> = None;
    observe(
        setup,
        scenario,
        cfg,
        seed::derive_path(run_seed, &[stream::CLUSTER, 0, rep as u64]),
        |cp| {
            if cp.infected > max_infected {
                return ControlFlow::Break(());
            }
            if cp.infected >= 1 {
                if let Some((s, c)) = scores(cp, setup.min_fvs) {
                    chosen = Some((cp.time, cp.infected, s, c));
                }
            }
            ControlFlow::Continue(())
        },
    )?;
    let Some((eval_time, infected, infected_shape, infected_cluster)) = chosen else {
        return Ok(None);
    };
    let benign_scn = PhishingScenario {
        click_rate: 0.0,
        ..scenario.clone()
    };
    let mut benign = None;
    observe(
        setup,
        &benign_scn,
        cfg,
        seed::derive_path(run_seed, &[stream::CLUSTER, 1, rep as u64]),
        |cp| {
            if cp.time >= eval_time {
                benign = scores(cp, setup.min_fvs);
                return ControlFlow::Break(());
            }
            ControlFlow::Continue(())
        },
    )?;
    Ok(benign.map(|(benign_shape, benign_cluster)| ClusterPair {
        repetition: rep,
        eval_time,
        infected,
        infected_shape,
        infected_cluster,
        benign_shape,
        benign_cluster,
    }))
}

pub fn run_cluster_experiment(
    setup: &DetectorSetup,
    cfg: &ClusterConfig,
    scenario: &PhishingScenario,
    run_seed: u64,
) -> Result<ClusterResult> {
    if !(cfg.checkpoint_interval > 0.0) || !(cfg.ntw > 0.0) {
        return Err(Error::Config(
            "cluster ntw and checkpoint_interval must be > 0".into(),
        ));
    }
    let found: Vec<Option<ClusterPair>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| pair(setup, scenario, cfg, run_seed, rep))
        .collect::<Result<_>>()?;
    let pairs: Vec<ClusterPair> = found.iter().flatten().copied().collect();
    let auc = |pos: Vec<f64>, neg: Vec<f64>| compute_roc(&pos, &neg).ok().map(|r| r.auc);
    Ok(ClusterResult {
        skipped: found.len() - pairs.len(),
        shape_auc: auc(
            pairs.iter().map(|p| p.infected_shape).collect(),
            pairs.iter().map(|p| p.benign_shape).collect(),
        ),
        cluster_auc: auc(
            pairs.iter().map(|p| p.infected_cluster).collect(),
            pairs.iter().map(|p| p.benign_cluster).collect(),
        ),
        pairs,
    })
}
