//! Sliding windows. Each group keeps the nodes that satisfied the predicate
//! in `(now - ntw, now]` together with their in-window alerts, and the
//! engine emits a scoring trigger on every slide.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use super::{
    fv_count, Neighborhood, NeighborhoodId, PartitionSpec, RoutingStats, TemplateType, TraceEvent,
    WindowBounds,
};
use crate::local::AlertFv;
use crate::synthetic::NodeId;
use crate::{Error, Result};

/// Slide step in seconds, one feature vector per node per step.
pub const SLIDE_STEP: f64 = 1.0;

#[derive(Debug, Clone)]
pub enum OnlineInput {
    Event(TraceEvent),
    Alert(Arc<AlertFv>),
}

/// Emitted when the window slides.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideTrigger {
    pub now: f64,
    /// Nodes that became members of some group during this step and were
    /// not members of any group before it, sorted.
    pub joined: Vec<NodeId>,
}

/// An alert entering or leaving a group's neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupChange {
    pub group: usize,
    pub alert: Arc<AlertFv>,
    pub added: bool,
}

#[derive(Debug, Clone, Default)]
struct NodeState {
    /// Groups the node is currently a member of.
    groups: Vec<usize>,
    alerts: VecDeque<Arc<AlertFv>>,
}

fn log(
    changes: &mut Option<Vec<GroupChange>>,
    group: usize,
    alerts: &VecDeque<Arc<AlertFv>>,
    added: bool,
) {
    if let Some(c) = changes {
        c.extend(alerts.iter().map(|a| GroupChange {
            group,
            alert: Arc::clone(a),
            added,
        }));
    }
}

#[derive(Debug, Clone)]
pub struct OnlineEngine {
    template: TemplateType,
    partition: PartitionSpec,
    ntw: f64,
    rate: f64,
    origin: f64,
    now: f64,
    seq: u64,
    buffer: Vec<TraceEvent>,
    /// Per group: member -> time of its latest qualifying event.
    groups: Vec<BTreeMap<NodeId, f64>>,
    nodes: HashMap<NodeId, NodeState>,
    joined: Vec<NodeId>,
    stats: RoutingStats,
    changes: Option<Vec<GroupChange>>,
}

impl OnlineEngine {
    pub fn new(
        template: TemplateType,
        partition: PartitionSpec,
        ntw: f64,
        start: f64,
        rate: f64,
    ) -> Result<Self> {
        if !(ntw >= SLIDE_STEP) || !ntw.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "NTW must be finite and >= the {SLIDE_STEP} s slide step"
            )));
        }
        if !(rate > 0.0) {
            return Err(Error::InvalidParameter("FV rate must be > 0".into()));
        }
        let groups = vec![BTreeMap::new(); partition.group_count()];
        Ok(OnlineEngine {
            template,
            partition,
            ntw,
            rate,
            origin: start,
            now: start,
            seq: 0,
            buffer: Vec::new(),
            groups,
            nodes: HashMap::new(),
            joined: Vec::new(),
            stats: RoutingStats::default(),
            changes: None,
        })
    }

    /// Starts recording every alert that enters or leaves a group.
    pub fn track_changes(&mut self) {
        self.changes.get_or_insert_with(Vec::new);
    }

    /// Changes recorded since the last call, in the order they happened.
    pub fn drain_changes(&mut self) -> Vec<GroupChange> {
        self.changes
            .as_mut()
            .map(std::mem::take)
            .unwrap_or_default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn ntw(&self) -> f64 {
        self.ntw
    }

    pub fn stats(&self) -> RoutingStats {
        self.stats
    }

    /// Nodes that are currently members of at least one group, sorted.
    pub fn active_nodes(&self) -> Vec<NodeId> {
        let mut nodes: Vec<NodeId> = self.nodes.keys().copied().collect();
        nodes.sort_unstable();
        nodes
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.nodes.contains_key(&node)
    }

    /// Number of groups with at least one member.
    pub fn live_groups(&self) -> usize {
        self.groups.iter().filter(|g| !g.is_empty()).count()
    }

    /// Queues a future event, applies one that is late by less than a slide
    /// step, and drops older ones.
    pub fn ingest_event(&mut self, event: TraceEvent) -> Result<()> {
        event.validate()?;
        if !self.template.accepts(&event) {
            return Ok(());
        }
        self.partition.group_of(event.resource())?;
        if event.timestamp > self.now {
            self.buffer.push(event);
        } else if event.timestamp > self.now - SLIDE_STEP {
            self.apply(&event)?;
            let cutoff = self.now - self.ntw;
            self.expire(cutoff);
        } else {
            self.stats.dropped_late_events += 1;
        }
        Ok(())
    }

    fn apply(&mut self, event: &TraceEvent) -> Result<()> {
        let g = self.partition.group_of(event.resource())?;
        let (group, nodes, joined, changes) = (
            &mut self.groups[g],
            &mut self.nodes,
            &mut self.joined,
            &mut self.changes,
        );
        for &node in event.nodes() {
            let last = group.entry(node).or_insert(f64::NEG_INFINITY);
            if *last == f64::NEG_INFINITY {
                let state = nodes.entry(node).or_insert_with(|| {
                    joined.push(node);
                    NodeState::default()
                });
                state.groups.push(g);
                log(changes, g, &state.alerts, true);
            }
            *last = last.max(event.timestamp);
        }
        Ok(())
    }

    fn expire(&mut self, cutoff: f64) {
        let (nodes, changes) = (&mut self.nodes, &mut self.changes);
        for (g, group) in self.groups.iter_mut().enumerate() {
            group.retain(|node, last| {
                if *last > cutoff {
                    return true;
                }
                let state = nodes.get_mut(node).expect("member has node state");
                state.groups.retain(|&x| x != g);
                log(changes, g, &state.alerts, false);
                if state.groups.is_empty() {
                    nodes.remove(node);
                }
                false
            });
        }
        // Sorted so the change log does not depend on hash order.
        let mut ids: Vec<NodeId> = nodes.keys().copied().collect();
        if changes.is_some() {
            ids.sort_unstable();
        }
        for id in ids {
            let state = nodes.get_mut(&id).expect("listed node");
            while state.alerts.front().is_some_and(|a| a.timestamp <= cutoff) {
                let a = state.alerts.pop_front().expect("front exists");
                if let Some(c) = changes {
                    for &g in &state.groups {
                        c.push(GroupChange {
                            group: g,
                            alert: Arc::clone(&a),
                            added: false,
                        });
                    }
                }
            }
        }
    }

    /// Slides the window to end at `now`: applies buffered events up to
    /// `now` in timestamp order, then expires memberships and alerts that
    /// fell out of `(now - ntw, now]`.
    pub fn advance_to(&mut self, now: f64) -> Result<SlideTrigger> {
        if !(now > self.now) {
            return Err(Error::InvalidParameter(format!(
                "cannot slide from {} to {now}",
                self.now
            )));
        }
        self.now = now;
        self.seq += 1;
        self.buffer
            .sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let split = self.buffer.partition_point(|e| e.timestamp <= now);
        let due: Vec<TraceEvent> = self.buffer.drain(..split).collect();
        for ev in &due {
            self.apply(ev)?;
        }
        self.expire(now - self.ntw);
        let mut joined = std::mem::take(&mut self.joined);
        joined.retain(|n| self.nodes.contains_key(n));
        joined.sort_unstable();
        joined.dedup();
        Ok(SlideTrigger { now, joined })
    }

    /// Stores an alert for its node if the node is active and the timestamp
    /// lies in the current window. Returns the number of groups it counts
    /// toward.
    pub fn route_alert(&mut self, alert: Arc<AlertFv>) -> usize {
        let cutoff = self.now - self.ntw;
        let Some(state) = self.nodes.get_mut(&alert.node) else {
            self.stats.dropped_non_member += 1;
            return 0;
        };
        if !(alert.timestamp > cutoff && alert.timestamp <= self.now) {
            self.stats.dropped_out_of_window += 1;
            return 0;
        }
        let pos = state
            .alerts
            .partition_point(|a| a.timestamp <= alert.timestamp);
        if let Some(c) = &mut self.changes {
            for &g in &state.groups {
                c.push(GroupChange {
                    group: g,
                    alert: Arc::clone(&alert),
                    added: true,
                });
            }
        }
        state.alerts.insert(pos, alert);
        self.stats.routed += 1;
        state.groups.len()
    }

    /// Slides if `now` is past the current time, then applies `input`.
    pub fn online_update(&mut self, input: OnlineInput, now: f64) -> Result<Option<SlideTrigger>> {
        let trigger = if now > self.now {
            Some(self.advance_to(now)?)
        } else {
            None
        };
        match input {
            OnlineInput::Event(ev) => self.ingest_event(ev)?,
            OnlineInput::Alert(a) => {
                self.route_alert(a);
            }
        }
        Ok(trigger)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_members(&self, group: usize) -> usize {
        self.groups[group].len()
    }

    pub fn is_group_member(&self, group: usize, node: NodeId) -> bool {
        self.groups[group].contains_key(&node)
    }

    /// Identifier of `group`'s neighborhood in the current window.
    pub fn neighborhood_id(&self, group: usize) -> NeighborhoodId {
        NeighborhoodId {
            window: self.seq,
            group: group as u32,
        }
    }

    /// Feature vectors `group`'s members produced in the current window.
    pub fn group_fv_count(&self, group: usize) -> u64 {
        let elapsed = (self.now - self.origin).min(self.ntw);
        fv_count(self.groups[group].len(), elapsed, self.rate)
    }

    /// Number of alerts held for `group`'s members.
    pub fn group_alert_count(&self, group: usize) -> usize {
        self.groups[group]
            .keys()
            .map(|n| self.nodes[n].alerts.len())
            .sum()
    }

    /// Materializes the current neighborhood of every non-empty group.
    pub fn snapshot(&self) -> Vec<Neighborhood> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, members)| !members.is_empty())
            .map(|(g, members)| {
                let alert_fvs = members
                    .keys()
                    .flat_map(|n| self.nodes[n].alerts.iter().cloned())
                    .collect();
                Neighborhood {
                    id: self.neighborhood_id(g),
                    partition_label: g,
                    window_start: (self.now - self.ntw).max(self.origin),
                    expiration_time: self.now,
                    bounds: WindowBounds::OpenClosed,
                    member_nodes: members.keys().copied().collect(),
                    alert_fvs,
                    total_fv_count: self.group_fv_count(g),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::alert;
    use super::super::ResourceId;
    use super::*;

    fn engine(ntw: f64, k: usize) -> OnlineEngine {
        let p = PartitionSpec::contiguous((0..2).map(ResourceId), k).unwrap();
        OnlineEngine::new(TemplateType::Waterhole, p, ntw, 0.0, 1.0).unwrap()
    }

    fn acc(ts: f64, c: u32, s: u32) -> TraceEvent {
        TraceEvent::access(ts, NodeId(c), ResourceId(s)).unwrap()
    }

    #[test]
    fn window_arithmetic() {
        let mut e = engine(6.0, 1);
        for t in 1..=10 {
            e.advance_to(t as f64).unwrap();
        }
        e.ingest_event(acc(10.0, 1, 0)).unwrap();
        let nb = &e.snapshot()[0];
        assert_eq!((nb.window_start, nb.expiration_time), (4.0, 10.0));
        assert!(!nb.contains_time(4.0));
        assert!(nb.contains_time(10.0));
    }

    #[test]
    fn membership_expires_exactly_ntw_after_access() {
        let mut e = engine(6.0, 1);
        e.ingest_event(acc(0.5, 1, 0)).unwrap();
        let t = e.advance_to(1.0).unwrap();
        assert_eq!(t.joined, vec![NodeId(1)]);
        e.advance_to(6.0).unwrap();
        assert!(e.is_active(NodeId(1)));
        e.advance_to(6.5).unwrap();
        assert!(!e.is_active(NodeId(1)));
        assert!(e.snapshot().is_empty());
    }

    #[test]
    fn alerts_follow_membership_and_window() {
        let mut e = engine(3.0, 2);
        e.ingest_event(acc(1.0, 1, 0)).unwrap();
        e.ingest_event(acc(1.0, 1, 1)).unwrap();
        e.ingest_event(acc(1.0, 2, 1)).unwrap();
        e.advance_to(1.0).unwrap();
        assert_eq!(e.route_alert(alert(1, 1.0)), 2);
        assert_eq!(e.route_alert(alert(2, 0.0)), 1);
        assert_eq!(e.route_alert(alert(3, 1.0)), 0);
        assert_eq!(e.route_alert(alert(2, -2.0)), 0);
        assert_eq!(e.route_alert(alert(2, 2.0)), 0);
        let snap = e.snapshot();
        assert_eq!(snap.len(), 2);
        assert_eq!(snap[0].alert_fvs.len(), 1);
        assert_eq!(snap[1].alert_fvs.len(), 2);
        assert_eq!(snap[1].total_fv_count, 2);
        // Alert at 0 leaves the window (0, 3] once it slides to 3.
        e.advance_to(3.0).unwrap();
        assert_eq!(e.snapshot()[1].alert_fvs.len(), 1);
        assert_eq!(e.snapshot()[1].total_fv_count, 6);
        let s = e.stats();
        assert_eq!(
            (s.routed, s.dropped_non_member, s.dropped_out_of_window),
            (2, 1, 2)
        );
    }

    #[test]
    fn late_events_within_one_step_are_kept() {
        let mut e = engine(6.0, 1);
        e.advance_to(5.0).unwrap();
        e.ingest_event(acc(4.5, 1, 0)).unwrap();
        e.ingest_event(acc(3.9, 2, 0)).unwrap();
        assert!(e.is_active(NodeId(1)));
        assert!(!e.is_active(NodeId(2)));
        assert_eq!(e.stats().dropped_late_events, 1);
        // Buffered out-of-order events are applied in timestamp order.
        e.ingest_event(acc(5.9, 3, 0)).unwrap();
        e.ingest_event(acc(5.2, 3, 0)).unwrap();
        e.advance_to(6.0).unwrap();
        e.advance_to(11.5).unwrap();
        assert!(e.is_active(NodeId(3)));
        e.advance_to(11.9).unwrap();
        assert!(!e.is_active(NodeId(3)));
    }

    #[test]
    fn online_update_emits_one_trigger_per_slide() {
        let mut e = engine(6.0, 1);
        let mut triggers = 0;
        for t in 1..=5 {
            let now = t as f64;
            if e.online_update(OnlineInput::Event(acc(now, t, 0)), now)
                .unwrap()
                .is_some()
            {
                triggers += 1;
            }
            e.online_update(OnlineInput::Alert(alert(t, now)), now)
                .unwrap();
        }
        assert_eq!(triggers, 5);
        assert_eq!(e.snapshot()[0].alert_fvs.len(), 5);
    }
}
