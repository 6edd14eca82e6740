//! Tumbling windows of length NTW. Neighborhoods accumulate members and
//! alerts for one window, are emitted once at its end and then discarded.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use super::{
    fv_count, Neighborhood, NeighborhoodId, PartitionSpec, RoutingStats, TemplateType, TraceEvent,
    WindowBounds,
};
use crate::local::AlertFv;
use crate::synthetic::NodeId;
use crate::{Error, Result};

/// Membership is evaluated over the whole window: a node that satisfies the
/// predicate at any time in `[start, start + ntw)` belongs to the group's
/// neighborhood for that window. Alerts are accepted once the node is a
/// member, so events should be ingested before the alerts they qualify.
#[derive(Debug, Clone)]
pub struct BatchEngine {
    template: TemplateType,
    partition: PartitionSpec,
    ntw: f64,
    rate: f64,
    window_start: f64,
    window_seq: u64,
    pending: VecDeque<TraceEvent>,
    nbds: BTreeMap<usize, Neighborhood>,
    index: HashMap<NodeId, Vec<usize>>,
    stats: RoutingStats,
}

impl BatchEngine {
    pub fn new(
        template: TemplateType,
        partition: PartitionSpec,
        ntw: f64,
        start: f64,
        rate: f64,
    ) -> Result<Self> {
        if !(ntw > 0.0) || !ntw.is_finite() {
            return Err(Error::InvalidParameter("NTW must be finite and > 0".into()));
        }
        if !(rate > 0.0) {
            return Err(Error::InvalidParameter("FV rate must be > 0".into()));
        }
        Ok(BatchEngine {
            template,
            partition,
            ntw,
            rate,
            window_start: start,
            window_seq: 0,
            pending: VecDeque::new(),
            nbds: BTreeMap::new(),
            index: HashMap::new(),
            stats: RoutingStats::default(),
        })
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    pub fn window_end(&self) -> f64 {
        self.window_start + self.ntw
    }

    pub fn stats(&self) -> RoutingStats {
        self.stats
    }

    /// Neighborhoods of the current window, ordered by group.
    pub fn neighborhoods(&self) -> impl Iterator<Item = &Neighborhood> {
        self.nbds.values()
    }

    pub fn neighborhood(&self, group: usize) -> Option<&Neighborhood> {
        self.nbds.get(&group)
    }

    /// Nodes that belong to at least one current neighborhood, sorted.
    pub fn active_nodes(&self) -> Vec<NodeId> {
        let mut nodes: Vec<NodeId> = self.index.keys().copied().collect();
        nodes.sort_unstable();
        nodes
    }

    /// Groups whose neighborhood contains `node`.
    pub fn groups_of(&self, node: NodeId) -> &[usize] {
        self.index.get(&node).map_or(&[], Vec::as_slice)
    }

    /// Applies an event to the current window or queues it for a later one.
    /// Events older than the current window are dropped and counted.
    pub fn ingest_event(&mut self, event: TraceEvent) -> Result<()> {
        event.validate()?;
        if !self.template.accepts(&event) {
            return Ok(());
        }
        // Surface partition errors at ingestion, not when the window opens.
        self.partition.group_of(event.resource())?;
        if event.timestamp < self.window_start {
            self.stats.dropped_late_events += 1;
        } else if event.timestamp >= self.window_end() {
            self.pending.push_back(event);
        } else {
            self.apply(&event)?;
        }
        Ok(())
    }

    fn apply(&mut self, event: &TraceEvent) -> Result<()> {
        let g = self.partition.group_of(event.resource())?;
        let (start, end, seq) = (self.window_start, self.window_end(), self.window_seq);
        let nb = self.nbds.entry(g).or_insert_with(|| Neighborhood {
            id: NeighborhoodId {
                window: seq,
                group: g as u32,
            },
            partition_label: g,
            window_start: start,
            expiration_time: end,
            bounds: WindowBounds::ClosedOpen,
            member_nodes: BTreeSet::new(),
            alert_fvs: Vec::new(),
            total_fv_count: 0,
        });
        for &node in event.nodes() {
            if nb.member_nodes.insert(node) {
                self.index.entry(node).or_default().push(g);
            }
        }
        Ok(())
    }

    /// Routes an alert to every current neighborhood containing its node.
    pub fn route_alert(&mut self, alert: Arc<AlertFv>) -> usize {
        let Some(groups) = self.index.get(&alert.node) else {
            self.stats.dropped_non_member += 1;
            return 0;
        };
        if !(alert.timestamp >= self.window_start && alert.timestamp < self.window_end()) {
            self.stats.dropped_out_of_window += 1;
            return 0;
        }
        for g in groups {
            let nb = self
                .nbds
                .get_mut(g)
                .expect("index refers to live neighborhood");
            nb.alert_fvs.push(Arc::clone(&alert));
        }
        self.stats.routed += 1;
        groups.len()
    }

    /// Updates every neighborhood's FV count to the part of the window
    /// elapsed at `now` and returns the neighborhoods.
    pub fn checkpoint(&mut self, now: f64) -> impl Iterator<Item = &Neighborhood> {
        let elapsed = (now - self.window_start).clamp(0.0, self.ntw);
        let rate = self.rate;
        for nb in self.nbds.values_mut() {
            nb.total_fv_count = fv_count(nb.member_nodes.len(), elapsed, rate);
        }
        self.nbds.values()
    }

    /// Closes every window that ends at or before `now`. Returns the expired
    /// neighborhoods in window then group order; the engine continues with
    /// the window that contains `now`.
    pub fn advance_batch(&mut self, now: f64) -> Result<Vec<Neighborhood>> {
        if now < self.window_end() {
            return Err(Error::InvalidParameter(format!(
                "cannot advance to {now} before window end {}",
                self.window_end()
            )));
        }
        let mut expired = Vec::new();
        while now >= self.window_end() {
            let ntw = self.ntw;
            let rate = self.rate;
            expired.extend(std::mem::take(&mut self.nbds).into_values().map(|mut nb| {
                nb.total_fv_count = fv_count(nb.member_nodes.len(), ntw, rate);
                nb
            }));
            self.index.clear();
            self.window_start = self.window_end();
            self.window_seq += 1;
            while let Some(ev) = self.pending.front() {
                if ev.timestamp >= self.window_end() {
                    break;
                }
                let ev = self.pending.pop_front().expect("front exists");
                self.apply(&ev)?;
            }
        }
        Ok(expired)
    }
}
