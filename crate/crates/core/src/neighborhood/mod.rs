//! Neighborhood instantiation from attack templates, alert routing and the
//! batch and online window engines.

mod batch;
mod online;
mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::local::AlertFv;
use crate::synthetic::NodeId;
use crate::{Error, Result};

pub use batch::BatchEngine;
pub use online::{GroupChange, OnlineEngine, OnlineInput, SlideTrigger};
pub use trace::{parse_event, read_trace, write_trace, EventKind, ResourceId, TraceEvent};

/// Attack vector that defines which nodes share a neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateType {
    /// Clients that accessed a server in the group.
    Waterhole,
    /// Recipients of a mailing list in the group.
    Phishing,
}

impl TemplateType {
    /// Whether `event` can satisfy this template's predicate.
    pub fn accepts(self, event: &TraceEvent) -> bool {
        matches!(
            (self, &event.kind),
            (TemplateType::Waterhole, EventKind::Access { .. })
                | (TemplateType::Phishing, EventKind::Email { .. })
        )
    }
}

/// Assignment of servers or lists to `group_count` disjoint groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    group_count: usize,
    assignment: BTreeMap<ResourceId, usize>,
}

impl PartitionSpec {
    pub fn new(group_count: usize, assignment: BTreeMap<ResourceId, usize>) -> Result<Self> {
        if group_count == 0 {
            return Err(Error::InvalidParameter("group count must be >= 1".into()));
        }
        let mut seen = vec![false; group_count];
        for &g in assignment.values() {
            if g >= group_count {
                return Err(Error::InvalidParameter(format!(
                    "group index {g} out of range for {group_count} groups"
                )));
            }
            seen[g] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(
                "every group must be non-empty".into(),
            ));
        }
        Ok(PartitionSpec {
            group_count,
            assignment,
        })
    }

    /// Sorts `ids` and splits them into `k` contiguous groups whose sizes
    /// differ by at most one.
    pub fn contiguous<I>(ids: I, k: usize) -> Result<Self>
    where
        I: IntoIterator<Item = ResourceId>,
    {
        let ids: BTreeSet<ResourceId> = ids.into_iter().collect();
        if k == 0 || k > ids.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot split {} ids into {k} non-empty groups",
                ids.len()
            )));
        }
        let n = ids.len();
        let assignment = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, i * k / n))
            .collect();
        PartitionSpec::new(k, assignment)
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn group_of(&self, id: ResourceId) -> Result<usize> {
        self.assignment
            .get(&id)
            .copied()
            .ok_or(Error::UnknownGroupMember(id.0))
    }

    pub fn ids(&self) -> impl Iterator<Item = ResourceId> + '_ {
        self.assignment.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeighborhoodId {
    /// Window sequence number within the engine that produced it.
    pub window: u64,
    pub group: u32,
}

impl fmt::Display for NeighborhoodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.window, self.group)
    }
}

/// Which end of a neighborhood window is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowBounds {
    /// `[window_start, expiration_time)`, used by batch windows.
    ClosedOpen,
    /// `(window_start, expiration_time]`, used by sliding windows.
    OpenClosed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub id: NeighborhoodId,
    /// Group index of the partition the neighborhood was formed from.
    pub partition_label: usize,
    pub window_start: f64,
    pub expiration_time: f64,
    pub bounds: WindowBounds,
    pub member_nodes: BTreeSet<NodeId>,
    pub alert_fvs: Vec<Arc<AlertFv>>,
    /// Feature vectors generated by members in the elapsed part of the
    /// window, alerting or not.
    pub total_fv_count: u64,
}

impl Neighborhood {
    pub fn contains_time(&self, ts: f64) -> bool {
        match self.bounds {
            WindowBounds::ClosedOpen => ts >= self.window_start && ts < self.expiration_time,
            WindowBounds::OpenClosed => ts > self.window_start && ts <= self.expiration_time,
        }
    }

    pub fn is_member(&self, node: NodeId) -> bool {
        self.member_nodes.contains(&node)
    }

    /// Whether the alert belongs here by membership and timestamp.
    pub fn accepts(&self, alert: &AlertFv) -> bool {
        self.is_member(alert.node) && self.contains_time(alert.timestamp)
    }
}

/// Counters for alerts that reached no neighborhood and events that were
/// discarded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingStats {
    pub routed: u64,
    /// Alerts whose node belongs to no neighborhood.
    pub dropped_non_member: u64,
    /// Alerts whose node is a member but whose timestamp is outside the
    /// window.
    pub dropped_out_of_window: u64,
    /// Events that arrived too late to be applied.
    pub dropped_late_events: u64,
}

/// `members * seconds * rate`, rounded to the nearest integer.
pub(crate) fn fv_count(members: usize, seconds: f64, rate: f64) -> u64 {
    (members as f64 * seconds.max(0.0) * rate).round() as u64
}

/// Forms one neighborhood per partition group that has at least one node
/// satisfying the template predicate in `[window_start, window_start + ntw)`.
///
/// The returned neighborhoods have no alerts yet. `total_fv_count` assumes
/// the full window has elapsed at one feature vector per second.
pub fn instantiate_neighborhoods(
    template: TemplateType,
    events: &[TraceEvent],
    ntw: f64,
    partition: &PartitionSpec,
    window_start: f64,
) -> Result<Vec<Neighborhood>> {
    if !(ntw > 0.0) {
        return Err(Error::InvalidParameter("NTW must be > 0".into()));
    }
    let end = window_start + ntw;
    let mut groups: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
    for ev in events {
        if !(ev.timestamp >= window_start && ev.timestamp < end) {
            return Err(Error::InvalidParameter(format!(
                "event at {} outside window [{window_start}, {end})",
                ev.timestamp
            )));
        }
        if !template.accepts(ev) {
            continue;
        }
        let g = partition.group_of(ev.resource())?;
        groups
            .entry(g)
            .or_default()
            .extend(ev.nodes().iter().copied());
    }
    Ok(groups
        .into_iter()
        .map(|(g, members)| Neighborhood {
            id: NeighborhoodId {
                window: 0,
                group: g as u32,
            },
            partition_label: g,
            window_start,
            expiration_time: end,
            bounds: WindowBounds::ClosedOpen,
            total_fv_count: fv_count(members.len(), ntw, 1.0),
            member_nodes: members,
            alert_fvs: Vec::new(),
        })
        .collect())
}

/// Appends `alert` to every neighborhood that contains its node and
/// timestamp. Returns the number of neighborhoods that received it.
pub fn route_alert(
    nbds: &mut [Neighborhood],
    alert: Arc<AlertFv>,
    stats: &mut RoutingStats,
) -> usize {
    let mut hits = 0;
    let mut member_anywhere = false;
    for nb in nbds.iter_mut() {
        if nb.is_member(alert.node) {
            member_anywhere = true;
            if nb.contains_time(alert.timestamp) {
                nb.alert_fvs.push(Arc::clone(&alert));
                hits += 1;
            }
        }
    }
    if hits > 0 {
        stats.routed += 1;
    } else if member_anywhere {
        stats.dropped_out_of_window += 1;
    } else {
        stats.dropped_non_member += 1;
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{ClassLabel, FeatureVector};

    fn acc(ts: f64, c: u32, s: u32) -> TraceEvent {
        TraceEvent::access(ts, NodeId(c), ResourceId(s)).unwrap()
    }

    pub(crate) fn alert(node: u32, ts: f64) -> Arc<AlertFv> {
        Arc::new(AlertFv {
            fv: FeatureVector::new(vec![0.0]).unwrap(),
            node: NodeId(node),
            timestamp: ts,
            true_label: ClassLabel::Benign,
        })
    }

    fn members(nb: &Neighborhood) -> Vec<u32> {
        nb.member_nodes.iter().map(|n| n.0).collect()
    }

    #[test]
    fn contiguous_partition_balances_groups() {
        let p = PartitionSpec::contiguous((0..10).rev().map(ResourceId), 3).unwrap();
        let sizes: Vec<usize> = (0..3)
            .map(|g| p.ids().filter(|&id| p.group_of(id).unwrap() == g).count())
            .collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert_eq!(p.group_of(ResourceId(0)).unwrap(), 0);
        assert_eq!(p.group_of(ResourceId(9)).unwrap(), 2);
        assert!(PartitionSpec::contiguous((0..2).map(ResourceId), 3).is_err());
        assert!(PartitionSpec::contiguous((0..2).map(ResourceId), 0).is_err());
    }

    #[test]
    fn trivial_and_per_server_partitions() {
        let events = vec![acc(0.0, 1, 1), acc(1.0, 2, 1), acc(2.0, 3, 2)];
        let one = PartitionSpec::contiguous([ResourceId(1), ResourceId(2)], 1).unwrap();
        let nbds =
            instantiate_neighborhoods(TemplateType::Waterhole, &events, 10.0, &one, 0.0).unwrap();
        assert_eq!(nbds.len(), 1);
        assert_eq!(members(&nbds[0]), vec![1, 2, 3]);

        let two = PartitionSpec::contiguous([ResourceId(1), ResourceId(2)], 2).unwrap();
        let nbds =
            instantiate_neighborhoods(TemplateType::Waterhole, &events, 10.0, &two, 0.0).unwrap();
        assert_eq!(nbds.len(), 2);
        assert_eq!(members(&nbds[0]), vec![1, 2]);
        assert_eq!(members(&nbds[1]), vec![3]);
        assert_eq!(nbds[0].expiration_time, 10.0);
    }

    #[test]
    fn missing_partition_entry_is_an_error() {
        let events = vec![acc(0.0, 1, 5)];
        let p = PartitionSpec::contiguous([ResourceId(1)], 1).unwrap();
        assert!(matches!(
            instantiate_neighborhoods(TemplateType::Waterhole, &events, 10.0, &p, 0.0),
            Err(Error::UnknownGroupMember(5))
        ));
    }

    #[test]
    fn template_ignores_other_event_kinds() {
        let events = vec![
            acc(0.0, 1, 0),
            TraceEvent::email(0.0, ResourceId(0), vec![NodeId(4), NodeId(5)]).unwrap(),
        ];
        let p = PartitionSpec::contiguous([ResourceId(0)], 1).unwrap();
        let nbds =
            instantiate_neighborhoods(TemplateType::Phishing, &events, 5.0, &p, 0.0).unwrap();
        assert_eq!(members(&nbds[0]), vec![4, 5]);
    }

    #[test]
    fn routing_respects_membership_and_window() {
        let events = vec![
            acc(0.0, 1, 1),
            acc(0.0, 2, 1),
            acc(0.0, 2, 2),
            acc(0.0, 3, 2),
        ];
        let p = PartitionSpec::contiguous([ResourceId(1), ResourceId(2)], 2).unwrap();
        let mut nbds =
            instantiate_neighborhoods(TemplateType::Waterhole, &events, 10.0, &p, 0.0).unwrap();
        let mut stats = RoutingStats::default();
        assert_eq!(route_alert(&mut nbds, alert(1, 1.0), &mut stats), 1);
        assert_eq!(route_alert(&mut nbds, alert(2, 1.0), &mut stats), 2);
        assert_eq!(route_alert(&mut nbds, alert(9, 1.0), &mut stats), 0);
        assert_eq!(route_alert(&mut nbds, alert(1, 10.0), &mut stats), 0);
        assert_eq!(nbds[0].alert_fvs.len(), 2);
        assert_eq!(nbds[1].alert_fvs.len(), 1);
        assert_eq!(
            stats,
            RoutingStats {
                routed: 2,
                dropped_non_member: 1,
                dropped_out_of_window: 1,
                dropped_late_events: 0,
            }
        );
    }
}
