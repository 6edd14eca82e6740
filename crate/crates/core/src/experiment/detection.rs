//! Time-to-detection simulation: a trace drives a neighborhood engine,
//! every active node emits one feature vector per second labeled by its
//! infection state, and Shape-GD scores the neighborhoods as they fill.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Scenario};
use super::setup::{BinnedReference, DetectorSetup};
use crate::attack::{
    generate_phishing_trace, generate_waterhole_trace, label_stream, InfectionState,
    PhishingScenario, WaterholeScenario,
};
use crate::detectors::{mean_distance, shape_gd_decide, Decision, DetectorKind, GlobalVerdict};
use crate::local::AlertFv;
use crate::neighborhood::{
    BatchEngine, Neighborhood, NeighborhoodId, OnlineEngine, PartitionSpec, ResourceId,
    RoutingStats, TemplateType, TraceEvent,
};
use crate::seed::{self, stream};
use crate::shape::HistogramAccumulator;
use crate::stats;
use crate::synthetic::{node_fv_seed, sample_fv, NodeId};
use crate::{Error, Result};

/// Default simulated duration of a waterhole run, in seconds.
pub const DEFAULT_WATERHOLE_HORIZON: f64 = 300.0;

/// One neighborhood at one scoring pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborhoodScore {
    pub id: NeighborhoodId,
    pub window_start: f64,
    pub total_fv_count: u64,
    pub alerts: u64,
    pub score: Option<f64>,
    pub centroid_distance: Option<f64>,
    pub decision: Decision,
    /// Some member is infected at the time of the pass.
    pub infected_member: bool,
}

impl NeighborhoodScore {
    pub fn verdict(&self) -> GlobalVerdict {
        GlobalVerdict {
            neighborhood_id: self.id,
            window_start: self.window_start,
            detector: DetectorKind::ShapeGd,
            decision: self.decision,
            score: self.score,
            eligible_fv_count: self.total_fv_count,
        }
    }
}

/// All neighborhoods at one scoring pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub time: f64,
    /// Nodes infected at or before `time`, population-wide.
    pub infected: usize,
    pub neighborhoods: Vec<NeighborhoodScore>,
}

/// Everything a run needs besides the trace.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub setup: &'a DetectorSetup,
    pub reference: &'a BinnedReference,
    pub infections: &'a InfectionState,
    /// Seed of the per-node feature streams.
    pub fv_seed: u64,
}

impl RunContext<'_> {
    /// The alert `node` raises during second `s`, if any.
    fn alert(&self, node: NodeId, s: u64) -> Option<Arc<AlertFv>> {
        let ts = s as f64;
        let label = label_stream(self.infections, node, ts);
        let fv = sample_fv(
            &self.setup.model,
            label,
            node_fv_seed(self.fv_seed, node, s),
        );
        self.setup.ld.fires_unchecked(fv.values()).then(|| {
            Arc::new(AlertFv {
                fv,
                node,
                timestamp: ts,
                true_label: label,
            })
        })
    }

    fn infected_member(&self, nb: &Neighborhood, t: f64) -> bool {
        self.infections
            .iter()
            .any(|(n, at)| at <= t && nb.is_member(n))
    }

    fn decide(&self, score: Option<f64>, total: u64) -> Decision {
        shape_gd_decide(
            score.map(crate::shape::ShapeScore),
            total,
            &self.reference.gamma,
            self.setup.min_fvs,
        )
    }
}

struct Running {
    acc: HistogramAccumulator,
    sum: Vec<f64>,
    seen: usize,
}

/// Tumbling windows of `ntw` seconds over `[0, horizon)`, scored every
/// `interval` seconds and at each window end. Alerts accumulate for the
/// whole window, so each pass sees the window's alerts so far.
#[allow(clippy::too_many_arguments)]
pub fn run_batch<F>(
    ctx: &RunContext<'_>,
    template: TemplateType,
    partition: PartitionSpec,
    events: &[TraceEvent],
    ntw: f64,
    horizon: f64,
    interval: f64,
    mut on_checkpoint: F,
) -> Result<RoutingStats>
where
    F: FnMut(&Checkpoint) -> ControlFlow<()>,
{
    if !(interval > 0.0) {
        return Err(Error::InvalidParameter(
            "checkpoint interval must be > 0".into(),
        ));
    }
    let mut engine = BatchEngine::new(template, partition, ntw, 0.0, 1.0)?;
    let mut next_event = 0;
    let edges = ctx.reference.reference.edges();
    let dims = ctx.setup.model.dims;
    let mut window_start = 0.0;
    while window_start < horizon {
        let window_end = (window_start + ntw).min(horizon);
        while next_event < events.len() && events[next_event].timestamp < window_start + ntw {
            engine.ingest_event(events[next_event].clone())?;
            next_event += 1;
        }
        let nodes = engine.active_nodes();
        let mut running: BTreeMap<u32, Running> = BTreeMap::new();
        let mut next_cp = window_start + interval;
        let mut s = window_start.ceil() as u64;
        while (s as f64) < window_end {
            for &node in &nodes {
                if let Some(a) = ctx.alert(node, s) {
                    engine.route_alert(a);
                }
            }
            s += 1;
            let t = s as f64;
            let last = t >= window_end;
            if t < next_cp && !last {
                continue;
            }
            while next_cp <= t {
                next_cp += interval;
            }
            let infected = ctx.infections.count_at(t);
            let mut neighborhoods = Vec::new();
            for nb in engine.checkpoint(t) {
                let r = running.entry(nb.id.group).or_insert_with(|| Running {
                    acc: HistogramAccumulator::new(edges.clone()),
                    sum: vec![0.0; dims],
                    seen: 0,
                });
                for a in &nb.alert_fvs[r.seen..] {
                    r.acc.add(&a.fv)?;
                    for (s, v) in r.sum.iter_mut().zip(a.fv.values()) {
                        *s += v;
                    }
                }
                r.seen = nb.alert_fvs.len();
                let n = r.acc.samples();
                let score = if n > 0 {
                    Some(r.acc.score(&ctx.reference.reference)?.value())
                } else {
                    None
                };
                neighborhoods.push(NeighborhoodScore {
                    id: nb.id,
                    window_start: nb.window_start,
                    total_fv_count: nb.total_fv_count,
                    alerts: n,
                    score,
                    centroid_distance: (n > 0)
                        .then(|| mean_distance(&r.sum, n as f64, &ctx.setup.centroid)),
                    decision: ctx.decide(score, nb.total_fv_count),
                    infected_member: ctx.infected_member(nb, t),
                });
            }
            let cp = Checkpoint {
                time: t,
                infected,
                neighborhoods,
            };
            if on_checkpoint(&cp).is_break() {
                return Ok(engine.stats());
            }
        }
        engine.advance_batch(window_start + ntw)?;
        window_start += ntw;
    }
    Ok(engine.stats())
}

/// Sliding window of `ntw` seconds advanced one second at a time over
/// `(0, horizon]`, scored at every slide. Scores are maintained
/// incrementally from the engine's change log.
#[allow(clippy::too_many_arguments)]
pub fn run_online<F>(
    ctx: &RunContext<'_>,
    template: TemplateType,
    partition: PartitionSpec,
    events: &[TraceEvent],
    ntw: f64,
    horizon: f64,
    mut on_slide: F,
) -> Result<RoutingStats>
where
    F: FnMut(&Checkpoint) -> ControlFlow<()>,
{
    let mut engine = OnlineEngine::new(template, partition, ntw, 0.0, 1.0)?;
    engine.track_changes();
    let reference = &ctx.reference.reference;
    let dims = ctx.setup.model.dims;
    let mut running: Vec<Running> = (0..engine.group_count())
        .map(|_| Running {
            acc: HistogramAccumulator::new(reference.edges().clone()),
            sum: vec![0.0; dims],
            seen: 0,
        })
        .collect();
    let mut next_event = 0;
    let mut now = 1u64;
    while now as f64 <= horizon {
        let t = now as f64;
        while next_event < events.len() && events[next_event].timestamp <= t {
            engine.ingest_event(events[next_event].clone())?;
            next_event += 1;
        }
        let trigger = engine.advance_to(t)?;
        // Seconds s with s > now - ntw.
        let first = ((t - ntw).floor() + 1.0).max(0.0) as u64;
        for &node in &trigger.joined {
            for s in first..now {
                if let Some(a) = ctx.alert(node, s) {
                    engine.route_alert(a);
                }
            }
        }
        for node in engine.active_nodes() {
            if let Some(a) = ctx.alert(node, now) {
                engine.route_alert(a);
            }
        }
        for c in engine.drain_changes() {
            let r = &mut running[c.group];
            let sign = if c.added {
                r.acc.add(&c.alert.fv)?;
                1.0
            } else {
                r.acc.remove(&c.alert.fv)?;
                -1.0
            };
            for (s, v) in r.sum.iter_mut().zip(c.alert.fv.values()) {
                *s += sign * v;
            }
        }
        let infected = ctx.infections.count_at(t);
        let mut neighborhoods = Vec::new();
        for (g, r) in running.iter().enumerate() {
            if engine.group_members(g) == 0 {
                continue;
            }
            let n = r.acc.samples();
            let score = if n > 0 {
                Some(r.acc.score(reference)?.value())
            } else {
                None
            };
            let total = engine.group_fv_count(g);
            neighborhoods.push(NeighborhoodScore {
                id: engine.neighborhood_id(g),
                window_start: (t - ntw).max(0.0),
                total_fv_count: total,
                alerts: n,
                score,
                centroid_distance: (n > 0)
                    .then(|| mean_distance(&r.sum, n as f64, &ctx.setup.centroid)),
                decision: ctx.decide(score, total),
                infected_member: ctx
                    .infections
                    .iter()
                    .any(|(node, at)| at <= t && engine.is_group_member(g, node)),
            });
        }
        let cp = Checkpoint {
            time: t,
            infected,
            neighborhoods,
        };
        if on_slide(&cp).is_break() {
            break;
        }
        now += 1;
    }
    Ok(engine.stats())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub scenario: Scenario,
    pub ntw: f64,
    pub groups: usize,
    /// Click rate or per-visit infection probability.
    pub infection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub repetition: usize,
    /// Time of the first Malicious verdict on a neighborhood with an
    /// infected member; `None` when censored.
    pub detection_time: Option<f64>,
    pub infected_at_detection: Option<usize>,
    /// Malicious verdicts on neighborhoods without infected members.
    pub false_alarms: u64,
    /// Verdicts other than NoDecision.
    pub decided_checks: u64,
    /// Decided verdicts on neighborhoods without infected members.
    pub clean_checks: u64,
    pub infected_at_end: usize,
    pub population: usize,
}

impl RunOutcome {
    pub fn censored(&self) -> bool {
        self.detection_time.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub repetitions: usize,
    pub detected: usize,
    pub censored: usize,
    pub median_infected: Option<f64>,
    pub p01_infected: Option<f64>,
    pub p99_infected: Option<f64>,
    pub median_time: Option<f64>,
    pub p01_time: Option<f64>,
    pub p99_time: Option<f64>,
    /// False alarms per decided check on neighborhoods without infected
    /// members.
    pub false_alarm_rate: Option<f64>,
}

pub fn summarize(runs: &[RunOutcome]) -> PointSummary {
    let infected: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.infected_at_detection.map(|n| n as f64))
        .collect();
    let times: Vec<f64> = runs.iter().filter_map(|r| r.detection_time).collect();
    let whisker = |v: &[f64], q: f64| stats::nearest_rank(&stats::sorted(v), q);
    let false_alarms: u64 = runs.iter().map(|r| r.false_alarms).sum();
    let clean: u64 = runs.iter().map(|r| r.clean_checks).sum();
    PointSummary {
        repetitions: runs.len(),
        detected: times.len(),
        censored: runs.len() - times.len(),
        median_infected: stats::median(&infected),
        p01_infected: whisker(&infected, 0.01),
        p99_infected: whisker(&infected, 0.99),
        median_time: stats::median(&times),
        p01_time: whisker(&times, 0.01),
        p99_time: whisker(&times, 0.99),
        false_alarm_rate: (clean > 0).then(|| false_alarms as f64 / clean as f64),
    }
}

/// Folds scoring passes into a run outcome.
struct DetectionTracker {
    outcome: RunOutcome,
    stop_at_detection: bool,
    verdicts: Option<Vec<GlobalVerdict>>,
}

impl DetectionTracker {
    fn new(repetition: usize, population: usize, stop: bool, record: bool) -> Self {
        DetectionTracker {
            outcome: RunOutcome {
                repetition,
                detection_time: None,
                infected_at_detection: None,
                false_alarms: 0,
                decided_checks: 0,
                clean_checks: 0,
                infected_at_end: 0,
                population,
            },
            stop_at_detection: stop,
            verdicts: record.then(Vec::new),
        }
    }

    fn observe(&mut self, cp: &Checkpoint) -> ControlFlow<()> {
        let o = &mut self.outcome;
        o.infected_at_end = cp.infected;
        for nb in &cp.neighborhoods {
            if let Some(v) = &mut self.verdicts {
                v.push(nb.verdict());
            }
            if nb.decision == Decision::NoDecision {
                continue;
            }
            o.decided_checks += 1;
            if !nb.infected_member {
                o.clean_checks += 1;
            }
            if nb.decision != Decision::Malicious {
                continue;
            }
            if nb.infected_member {
                if o.detection_time.is_none() {
                    o.detection_time = Some(cp.time);
                    o.infected_at_detection = Some(cp.infected);
                }
            } else {
                o.false_alarms += 1;
            }
        }
        if self.stop_at_detection && o.detection_time.is_some() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }
}

/// Options shared by the single-run drivers.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub ntw: f64,
    pub groups: usize,
    pub horizon: f64,
    pub checkpoint_interval: f64,
    pub stop_at_detection: bool,
    pub record_verdicts: bool,
}

/// Seeds of the trace and of the node feature streams for a repetition.
fn run_seeds(base: u64, infection_index: usize, repetition: usize) -> (u64, u64) {
    let trace = seed::derive_path(
        base,
        &[stream::TRACE, infection_index as u64, repetition as u64],
    );
    (trace, seed::derive(trace, stream::NODE_FV))
}

pub fn phishing_run(
    setup: &DetectorSetup,
    scenario: &PhishingScenario,
    opts: &RunOptions,
    trace_seed: u64,
    fv_seed: u64,
    repetition: usize,
) -> Result<(RunOutcome, Vec<GlobalVerdict>)> {
    let trace = generate_phishing_trace(scenario, opts.horizon, trace_seed)?;
    let partition = PartitionSpec::contiguous(
        (0..scenario.thread_count as u32).map(ResourceId),
        opts.groups,
    )?;
    let ctx = RunContext {
        setup,
        reference: setup.primary(),
        infections: &trace.infections,
        fv_seed,
    };
    let mut tracker = DetectionTracker::new(
        repetition,
        scenario.universe_size,
        opts.stop_at_detection,
        opts.record_verdicts,
    );
    run_batch(
        &ctx,
        TemplateType::Phishing,
        partition,
        &trace.events,
        opts.ntw,
        opts.horizon,
        opts.checkpoint_interval,
        |cp| tracker.observe(cp),
    )?;
    Ok((tracker.outcome, tracker.verdicts.unwrap_or_default()))
}

pub fn waterhole_run(
    setup: &DetectorSetup,
    scenario: &WaterholeScenario,
    opts: &RunOptions,
    trace_seed: u64,
    fv_seed: u64,
    repetition: usize,
) -> Result<(RunOutcome, Vec<GlobalVerdict>)> {
    let trace = generate_waterhole_trace(scenario, opts.horizon, trace_seed)?;
    let partition = PartitionSpec::contiguous(
        (0..scenario.server_count as u32).map(ResourceId),
        opts.groups,
    )?;
    let ctx = RunContext {
        setup,
        reference: setup.primary(),
        infections: &trace.infections,
        fv_seed,
    };
    let mut tracker = DetectionTracker::new(
        repetition,
        scenario.population(),
        opts.stop_at_detection,
        opts.record_verdicts,
    );
    run_online(
        &ctx,
        TemplateType::Waterhole,
        partition,
        &trace.events,
        opts.ntw,
        opts.horizon,
        |cp| tracker.observe(cp),
    )?;
    Ok((tracker.outcome, tracker.verdicts.unwrap_or_default()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub point: SweepPoint,
    pub runs: Vec<RunOutcome>,
    pub summary: PointSummary,
    /// Verdicts of repetition 0 when the verdict log is enabled.
    pub verdicts: Vec<GlobalVerdict>,
}

/// Runs every (ntw, groups, infection) combination of the configured
/// scenario. Repetition `r` of a given infection level replays the same
/// trace and feature streams at every ntw and group count.
pub fn run_detection_sweep(
    cfg: &ExperimentConfig,
    setup: &DetectorSetup,
) -> Result<Vec<SweepEntry>> {
    let d = &cfg.detection;
    let scenario = cfg.scenario;
    if !matches!(scenario, Scenario::Phishing | Scenario::Waterhole) {
        return Err(Error::Config(format!(
            "detection sweeps need the phishing or waterhole scenario, got {scenario:?}"
        )));
    }
    let max_ntw = d.ntw.iter().cloned().fold(0.0, f64::max);
    let horizon = d.horizon.unwrap_or(match scenario {
        Scenario::Phishing => max_ntw,
        _ => DEFAULT_WATERHOLE_HORIZON,
    });
    let mut points = Vec::new();
    for &ntw in &d.ntw {
        for &groups in &d.groups {
            for (ii, &infection) in d.infection.iter().enumerate() {
                points.push((
                    SweepPoint {
                        scenario,
                        ntw,
                        groups,
                        infection,
                    },
                    ii,
                ));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..d.repetitions).map(move |r| (p, r)))
        .collect();
    let results: Vec<(RunOutcome, Vec<GlobalVerdict>)> = jobs
        .par_iter()
        .map(|&(p, rep)| {
            let (point, ii) = points[p];
            let opts = RunOptions {
                ntw: point.ntw,
                groups: point.groups,
                horizon,
                checkpoint_interval: d.checkpoint_interval,
                stop_at_detection: d.stop_at_detection,
                record_verdicts: d.verdict_log && rep == 0,
            };
            let (trace_seed, fv_seed) = run_seeds(cfg.seed, ii, rep);
            match scenario {
                Scenario::Phishing => {
                    let s = PhishingScenario {
                        click_rate: point.infection,
                        ..cfg.phishing.clone()
                    };
                    phishing_run(setup, &s, &opts, trace_seed, fv_seed, rep)
                }
                _ => {
                    let s = WaterholeScenario {
                        infection_probability: point.infection,
                        ..cfg.waterhole.clone()
                    };
                    waterhole_run(setup, &s, &opts, trace_seed, fv_seed, rep)
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut results = results.into_iter();
    Ok(points
        .into_iter()
        .map(|(point, _)| {
            let mut runs = Vec::with_capacity(d.repetitions);
            let mut verdicts = Vec::new();
            for _ in 0..d.repetitions {
                let (o, v) = results.next().expect("one result per job");
                runs.push(o);
                verdicts.extend(v);
            }
            SweepEntry {
                point,
                summary: summarize(&runs),
                runs,
                verdicts,
            }
        })
        .collect())
}
