//! Trace events and the line-oriented trace format.
//!
//! ```text
//! A,<timestamp>,<client_id>,<server_id>
//! E,<timestamp>,<list_id>,<recipient_1>;<recipient_2>;...
//! ```

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::synthetic::NodeId;
use crate::{Error, Result};

/// A server (waterhole) or mailing list (phishing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceId(pub u32);

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Access {
        client: NodeId,
        server: ResourceId,
    },
    Email {
        list: ResourceId,
        recipients: Vec<NodeId>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub timestamp: f64,
    pub kind: EventKind,
}

impl TraceEvent {
    pub fn access(timestamp: f64, client: NodeId, server: ResourceId) -> Result<Self> {
        let ev = TraceEvent {
            timestamp,
            kind: EventKind::Access { client, server },
        };
        ev.validate()?;
        Ok(ev)
    }

    pub fn email(timestamp: f64, list: ResourceId, recipients: Vec<NodeId>) -> Result<Self> {
        let ev = TraceEvent {
            timestamp,
            kind: EventKind::Email { list, recipients },
        };
        ev.validate()?;
        Ok(ev)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timestamp >= 0.0) || !self.timestamp.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "event timestamp {} must be finite and >= 0",
                self.timestamp
            )));
        }
        if let EventKind::Email { recipients, .. } = &self.kind {
            if recipients.is_empty() {
                return Err(Error::EmptyInput("email recipient list"));
            }
        }
        Ok(())
    }

    /// The server or list the event refers to.
    pub fn resource(&self) -> ResourceId {
        match &self.kind {
            EventKind::Access { server, .. } => *server,
            EventKind::Email { list, .. } => *list,
        }
    }

    /// Nodes that satisfy the template predicate through this event.
    pub fn nodes(&self) -> &[NodeId] {
        match &self.kind {
            EventKind::Access { client, .. } => std::slice::from_ref(client),
            EventKind::Email { recipients, .. } => recipients,
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            EventKind::Access { client, server } => {
                write!(f, "A,{},{},{}", self.timestamp, client.0, server.0)
            }
            EventKind::Email { list, recipients } => {
                write!(f, "E,{},{},", self.timestamp, list.0)?;
                for (i, r) in recipients.iter().enumerate() {
                    if i > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{}", r.0)?;
                }
                Ok(())
            }
        }
    }
}

pub fn write_trace<W: Write>(mut out: W, events: &[TraceEvent]) -> Result<()> {
    for ev in events {
        writeln!(out, "{ev}")?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {what} `{s}`")))
}

pub fn parse_event(line_no: usize, line: &str) -> Result<TraceEvent> {
    let fields: Vec<&str> = line.trim().splitn(4, ',').collect();
    if fields.len() != 4 {
        return Err(Error::parse(line_no, "expected 4 comma-separated fields"));
    }
    let ts: f64 = parse_field(line_no, fields[1], "timestamp")?;
    let ev = match fields[0] {
        "A" => TraceEvent {
            timestamp: ts,
            kind: EventKind::Access {
                client: NodeId(parse_field(line_no, fields[2], "client id")?),
                server: ResourceId(parse_field(line_no, fields[3], "server id")?),
            },
        },
        "E" => {
            let recipients = fields[3]
                .split(';')
                .map(|r| parse_field(line_no, r, "recipient id").map(NodeId))
                .collect::<Result<Vec<_>>>()?;
            TraceEvent {
                timestamp: ts,
                kind: EventKind::Email {
                    list: ResourceId(parse_field(line_no, fields[2], "list id")?),
                    recipients,
                },
            }
        }
        other => {
            return Err(Error::parse(
                line_no,
                format!("unknown record type `{other}`"),
            ))
        }
    };
    ev.validate()
        .map_err(|e| Error::parse(line_no, e.to_string()))?;
    Ok(ev)
}

/// Reads a trace, rejecting files whose timestamps decrease. Blank lines
/// and lines starting with `#` are skipped.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let ev = parse_event(i + 1, t)?;
        if ev.timestamp < last {
            return Err(Error::parse(i + 1, "timestamps must be non-decreasing"));
        }
        last = ev.timestamp;
        events.push(ev);
    }
    Ok(events)
}
