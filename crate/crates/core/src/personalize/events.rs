use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDateTime;

use crate::graph::Day;
use crate::ingest::{tsv_reader, IngestError};

pub type Timestamp = NaiveDateTime;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Funnel stage of an engagement event. The declaration order is the
/// tie-break used when events share a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Sent,
    Opened,
    RatedUseful,
    RatedNotUseful,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [
        EventKind::Sent,
        EventKind::Opened,
        EventKind::RatedUseful,
        EventKind::RatedNotUseful,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Sent => "Sent",
            EventKind::Opened => "Opened",
            EventKind::RatedUseful => "RatedUseful",
            EventKind::RatedNotUseful => "RatedNotUseful",
        }
    }

    pub fn is_rating(self) -> bool {
        matches!(self, EventKind::RatedUseful | EventKind::RatedNotUseful)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventStatus {
    Ok,
    /// The sink refused the delivery; only meaningful for `Sent`.
    Failed,
}

impl EventStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EventStatus::Ok => "ok",
            EventStatus::Failed => "failed",
        }
    }
}

impl FromStr for EventStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(EventStatus::Ok),
            "failed" => Ok(EventStatus::Failed),
            _ => Err(format!("unknown event status `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EngagementEvent {
    pub timestamp: Timestamp,
    pub participant: String,
    pub nudge: String,
    pub kind: EventKind,
    pub status: EventStatus,
}

impl EngagementEvent {
    pub fn new(timestamp: Timestamp, participant: impl Into<String>, nudge: impl Into<String>, kind: EventKind) -> Self {
        Self {
            timestamp,
            participant: participant.into(),
            nudge: nudge.into(),
            kind,
            status: EventStatus::Ok,
        }
    }

    pub fn day(&self) -> Day {
        self.timestamp.date()
    }

    pub fn is_ok(&self) -> bool {
        self.status == EventStatus::Ok
    }

    /// Sort key: timestamp, then funnel order, then the pair.
    pub fn causal_key(&self) -> (Timestamp, EventKind, &str, &str) {
        (self.timestamp, self.kind, &self.participant, &self.nudge)
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.timestamp.format(TIMESTAMP_FORMAT),
            self.participant,
            self.nudge,
            self.kind,
            self.status.as_str()
        )
    }
}

/// Sorts events into causal order in place.
pub fn sort_causally(events: &mut [EngagementEvent]) {
    events.sort_by(|a, b| a.causal_key().cmp(&b.causal_key()).then(a.status.cmp(&b.status)));
}

/// Reads `timestamp, participant, nudge, kind, status` records.
pub fn read_events<R: Read>(r: R) -> Result<Vec<EngagementEvent>, IngestError> {
    let mut out = Vec::new();
    for rec in tsv_reader(r).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| IngestError::Parse { line, message };
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let timestamp = NaiveDateTime::parse_from_str(&rec[0], TIMESTAMP_FORMAT)
            .map_err(|_| bad(format!("bad timestamp `{}`", &rec[0])))?;
        if rec[1].is_empty() || rec[2].is_empty() {
            return Err(bad("empty participant or nudge key".into()));
        }
        out.push(EngagementEvent {
            timestamp,
            participant: rec[1].to_string(),
            nudge: rec[2].to_string(),
            kind: rec[3].parse().map_err(bad)?,
            status: rec[4].parse().map_err(bad)?,
        });
    }
    Ok(out)
}

pub fn write_events<'a, W: Write>(mut w: W, events: impl IntoIterator<Item = &'a EngagementEvent>) -> std::io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_line())?;
    }
    Ok(())
}
