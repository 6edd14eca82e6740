use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use shapegd::local::AlertFv;
use shapegd::neighborhood::{
    BatchEngine, OnlineEngine, PartitionSpec, ResourceId, TemplateType, TraceEvent,
};
use shapegd::synthetic::{ClassLabel, FeatureVector, NodeId};

const RESOURCES: u32 = 6;
const NODES: u32 = 12;
const HORIZON: u64 = 30;

fn alert(node: u32, s: u64) -> Arc<AlertFv> {
    Arc::new(AlertFv {
        fv: FeatureVector::new(vec![node as f64, s as f64]).unwrap(),
        node: NodeId(node),
        timestamp: s as f64,
        true_label: ClassLabel::Benign,
    })
}

/// Whether `node` alerts during second `s`; a fixed pseudo-random pattern.
fn fires(node: u32, s: u64) -> bool {
    (node as u64 * 7 + s * 13) % 5 < 2
}

fn key(a: &AlertFv) -> (u32, u64) {
    (a.node.0, a.timestamp as u64)
}

fn events_strategy(template: TemplateType) -> impl Strategy<Value = Vec<TraceEvent>> {
    prop::collection::vec(
        (
            0.0..HORIZON as f64,
            0..RESOURCES,
            prop::collection::btree_set(0..NODES, 1..4),
        ),
        1..100,
    )
    .prop_map(move |raw| {
        let mut evs: Vec<TraceEvent> = raw
            .into_iter()
            .map(|(ts, r, nodes)| match template {
                TemplateType::Waterhole => {
                    let n = *nodes.iter().next().unwrap();
                    TraceEvent::access(ts, NodeId(n), ResourceId(r)).unwrap()
                }
                TemplateType::Phishing => {
                    TraceEvent::email(ts, ResourceId(r), nodes.into_iter().map(NodeId).collect())
                        .unwrap()
                }
            })
            .collect();
        evs.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        evs
    })
}

fn group_members(
    events: &[TraceEvent],
    partition: &PartitionSpec,
    keep: impl Fn(f64) -> bool,
) -> BTreeMap<usize, BTreeSet<u32>> {
    let mut out: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
    for ev in events.iter().filter(|e| keep(e.timestamp)) {
        let g = partition.group_of(ev.resource()).unwrap();
        out.entry(g)
            .or_default()
            .extend(ev.nodes().iter().map(|n| n.0));
    }
    out
}

type Snapshot = BTreeMap<usize, (BTreeSet<u32>, BTreeSet<(u32, u64)>)>;

/// Per window, per group: members and alert keys, from the batch engine.
fn run_batch_engine(events: &[TraceEvent], partition: &PartitionSpec, ntw: u64) -> Vec<Snapshot> {
    let mut engine = BatchEngine::new(
        TemplateType::Phishing,
        partition.clone(),
        ntw as f64,
        0.0,
        1.0,
    )
    .unwrap();
    let mut out = Vec::new();
    let mut next = 0;
    let mut start = 0;
    while start < HORIZON {
        while next < events.len() && events[next].timestamp < (start + ntw) as f64 {
            engine.ingest_event(events[next].clone()).unwrap();
            next += 1;
        }
        for s in start..start + ntw {
            for n in 0..NODES {
                if fires(n, s) {
                    engine.route_alert(alert(n, s));
                }
            }
        }
        out.push(
            engine
                .advance_batch((start + ntw) as f64)
                .unwrap()
                .into_iter()
                .map(|nb| {
                    (
                        nb.partition_label,
                        (
                            nb.member_nodes.iter().map(|n| n.0).collect(),
                            nb.alert_fvs.iter().map(|a| key(a)).collect(),
                        ),
                    )
                })
                .collect(),
        );
        start += ntw;
    }
    out
}

fn brute_batch(events: &[TraceEvent], partition: &PartitionSpec, ntw: u64) -> Vec<Snapshot> {
    (0..HORIZON)
        .step_by(ntw as usize)
        .map(|start| {
            let (lo, hi) = (start as f64, (start + ntw) as f64);
            group_members(events, partition, |t| t >= lo && t < hi)
                .into_iter()
                .map(|(g, members)| {
                    let alerts = (start..start + ntw)
                        .flat_map(|s| {
                            members
                                .iter()
                                .filter(move |&&n| fires(n, s))
                                .map(move |&n| (n, s))
                        })
                        .collect();
                    (g, (members, alerts))
                })
                .collect()
        })
        .collect()
}

/// Per second, per group: members and alert keys, from the online engine
/// driven the way the detection runner drives it.
fn run_online_engine(events: &[TraceEvent], partition: &PartitionSpec, ntw: u64) -> Vec<Snapshot> {
    let mut engine = OnlineEngine::new(
        TemplateType::Waterhole,
        partition.clone(),
        ntw as f64,
        0.0,
        1.0,
    )
    .unwrap();
    engine.track_changes();
    let mut tracked: BTreeMap<usize, BTreeMap<(u32, u64), i64>> = BTreeMap::new();
    let mut out = Vec::new();
    let mut next = 0;
    for now in 1..=HORIZON {
        while next < events.len() && events[next].timestamp <= now as f64 {
            engine.ingest_event(events[next].clone()).unwrap();
            next += 1;
        }
        let trig = engine.advance_to(now as f64).unwrap();
        let first = (now + 1).saturating_sub(ntw);
        for n in &trig.joined {
            for s in first..now {
                if fires(n.0, s) {
                    engine.route_alert(alert(n.0, s));
                }
            }
        }
        for n in engine.active_nodes() {
            if fires(n.0, now) {
                engine.route_alert(alert(n.0, now));
            }
        }
        for c in engine.drain_changes() {
            let n = tracked
                .entry(c.group)
                .or_default()
                .entry(key(&c.alert))
                .or_default();
            *n += if c.added { 1 } else { -1 };
            assert!(*n == 0 || *n == 1, "alert counted {n} times");
        }
        let snap = engine.snapshot();
        for g in 0..partition.group_count() {
            let from_log: BTreeSet<(u32, u64)> = tracked
                .get(&g)
                .map(|m| m.iter().filter(|(_, &c)| c == 1).map(|(k, _)| *k).collect())
                .unwrap_or_default();
            let from_snap: BTreeSet<(u32, u64)> = snap
                .iter()
                .filter(|nb| nb.partition_label == g)
                .flat_map(|nb| nb.alert_fvs.iter().map(|a| key(a)))
                .collect();
            assert_eq!(from_log, from_snap, "group {g} at {now}");
        }
        out.push(
            snap.into_iter()
                .map(|nb| {
                    (
                        nb.partition_label,
                        (
                            nb.member_nodes.iter().map(|n| n.0).collect(),
                            nb.alert_fvs.iter().map(|a| key(a)).collect(),
                        ),
                    )
                })
                .collect(),
        );
    }
    out
}

fn brute_online(events: &[TraceEvent], partition: &PartitionSpec, ntw: u64) -> Vec<Snapshot> {
    (1..=HORIZON)
        .map(|now| {
            let (lo, hi) = (now as f64 - ntw as f64, now as f64);
            group_members(events, partition, |t| t > lo && t <= hi)
                .into_iter()
                .map(|(g, members)| {
                    let alerts = ((now + 1).saturating_sub(ntw)..=now)
                        .flat_map(|s| {
                            members
                                .iter()
                                .filter(move |&&n| fires(n, s))
                                .map(move |&n| (n, s))
                        })
                        .collect();
                    (g, (members, alerts))
                })
                .collect()
        })
        .collect()
}

fn partition(k: usize) -> PartitionSpec {
    PartitionSpec::contiguous((0..RESOURCES).map(ResourceId), k).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_matches_brute_force(
        events in events_strategy(TemplateType::Phishing),
        k in 1usize..=6,
        ntw in prop::sample::select(vec![5u64, 10, 15]),
    ) {
        let p = partition(k);
        prop_assert_eq!(run_batch_engine(&events, &p, ntw), brute_batch(&events, &p, ntw));
    }

    #[test]
    fn online_matches_brute_force(
        events in events_strategy(TemplateType::Waterhole),
        k in 1usize..=6,
        ntw in 1u64..=8,
    ) {
        let p = partition(k);
        prop_assert_eq!(run_online_engine(&events, &p, ntw), brute_online(&events, &p, ntw));
    }

    /// Splitting each group into finer ones redistributes members and
    /// alerts without losing or inventing any.
    #[test]
    fn finer_partitions_refine_coarser(
        events in events_strategy(TemplateType::Phishing),
        (coarse, factor) in prop::sample::select(vec![(1usize, 2usize), (1, 3), (1, 6), (2, 3), (3, 2)]),
    ) {
        let c = run_batch_engine(&events, &partition(coarse), 10);
        let f = run_batch_engine(&events, &partition(coarse * factor), 10);
        for (cw, fw) in c.iter().zip(&f) {
            let mut merged: Snapshot = BTreeMap::new();
            for (g, (m, a)) in fw {
                let e = merged.entry(g / factor).or_default();
                e.0.extend(m);
                e.1.extend(a);
            }
            prop_assert_eq!(cw, &merged);
        }
    }
}

#[test]
fn every_alert_is_routed_or_counted_as_dropped() {
    let events: Vec<TraceEvent> = (0..20)
        .map(|i| {
            TraceEvent::email(
                i as f64,
                ResourceId(i % RESOURCES),
                vec![NodeId(i), NodeId(i + 1)],
            )
            .unwrap()
        })
        .collect();
    let mut engine =
        BatchEngine::new(TemplateType::Phishing, partition(3), 10.0, 0.0, 1.0).unwrap();
    for ev in &events[..10] {
        engine.ingest_event(ev.clone()).unwrap();
    }
    let mut sent = 0;
    for n in 0..30 {
        for s in [0u64, 5, 12] {
            engine.route_alert(alert(n, s));
            sent += 1;
        }
    }
    let st = engine.stats();
    assert_eq!(
        st.routed + st.dropped_non_member + st.dropped_out_of_window,
        sent
    );
    assert!(st.routed > 0 && st.dropped_non_member > 0 && st.dropped_out_of_window > 0);
}
