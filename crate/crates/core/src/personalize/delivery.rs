use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::events::{EngagementEvent, EventKind, EventStatus, Timestamp, TIMESTAMP_FORMAT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedNudge {
    pub participant: String,
    pub nudge: String,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("sink unreachable")]
    Unreachable,
    #[error("delivery refused: {0}")]
    Refused(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Where rendered nudges go. Push transport is out of scope; the shipped
/// sinks append to a file or keep messages in memory.
pub trait DeliverySink {
    fn is_reachable(&self) -> bool {
        true
    }

    fn deliver(&mut self, nudge: &RenderedNudge, at: Timestamp) -> Result<(), SinkError>;
}

/// Appends `timestamp, participant, nudge, text` lines.
#[derive(Debug)]
pub struct FileSink {
    path: PathBuf,
    file: Option<File>,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), file: None }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl DeliverySink for FileSink {
    fn is_reachable(&self) -> bool {
        self.file.is_some() || self.path.parent().map_or(true, |p| p.as_os_str().is_empty() || p.is_dir())
    }

    fn deliver(&mut self, nudge: &RenderedNudge, at: Timestamp) -> Result<(), SinkError> {
        if self.file.is_none() {
            self.file = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
        }
        let f = self.file.as_mut().expect("opened above");
        writeln!(
            f,
            "{}\t{}\t{}\t{}",
            at.format(TIMESTAMP_FORMAT),
            nudge.participant,
            nudge.nudge,
            nudge.text.replace(['\t', '\n'], " ")
        )?;
        Ok(())
    }
}

/// In-memory sink for the simulator and tests. Pairs in `refuse` are
/// rejected; `offline` makes the whole sink unreachable.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub delivered: Vec<(Timestamp, RenderedNudge)>,
    pub refuse: BTreeSet<(String, String)>,
    pub offline: bool,
}

impl DeliverySink for MemorySink {
    fn is_reachable(&self) -> bool {
        !self.offline
    }

    fn deliver(&mut self, nudge: &RenderedNudge, at: Timestamp) -> Result<(), SinkError> {
        if self.offline {
            return Err(SinkError::Unreachable);
        }
        if self.refuse.contains(&(nudge.participant.clone(), nudge.nudge.clone())) {
            return Err(SinkError::Refused(format!("{} -> {}", nudge.nudge, nudge.participant)));
        }
        self.delivered.push((at, nudge.clone()));
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeliveryReport {
    /// One `Sent` event per nudge, status `failed` where the sink refused.
    pub events: Vec<EngagementEvent>,
    pub delivered: usize,
    pub failed: usize,
    pub sink_unreachable: bool,
}

impl DeliveryReport {
    pub fn is_success(&self) -> bool {
        !self.sink_unreachable && self.failed == 0
    }
}

/// Hands each nudge to the sink. A refusal only fails that nudge.
pub fn deliver(sends: &[RenderedNudge], sink: &mut dyn DeliverySink, at: Timestamp) -> DeliveryReport {
    let mut report = DeliveryReport {
        sink_unreachable: !sink.is_reachable(),
        ..Default::default()
    };
    for n in sends {
        let status = if report.sink_unreachable {
            EventStatus::Failed
        } else {
            match sink.deliver(n, at) {
                Ok(()) => EventStatus::Ok,
                Err(e) => {
                    log::warn!("delivery of {} to {} failed: {e}", n.nudge, n.participant);
                    EventStatus::Failed
                }
            }
        };
        match status {
            EventStatus::Ok => report.delivered += 1,
            EventStatus::Failed => report.failed += 1,
        }
        report.events.push(EngagementEvent {
            timestamp: at,
            participant: n.participant.clone(),
            nudge: n.nudge.clone(),
            kind: EventKind::Sent,
            status,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Day;

    fn at() -> Timestamp {
        Day::from_ymd_opt(2023, 4, 3).unwrap().and_hms_opt(9, 0, 0).unwrap()
    }

    fn sends() -> Vec<RenderedNudge> {
        (1..=3)
            .map(|i| RenderedNudge { participant: format!("p{i}"), nudge: "n1".into(), text: "Walk.".into() })
            .collect()
    }

    #[test]
    fn healthy_file_sink() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = FileSink::new(dir.path().join("outbox.tsv"));
        let r = deliver(&sends(), &mut sink, at());
        assert!(r.is_success());
        assert_eq!(r.events.len(), 3);
        assert!(r.events.iter().all(|e| e.kind == EventKind::Sent && e.is_ok()));
        let text = std::fs::read_to_string(sink.path()).unwrap();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn one_refusal_does_not_abort_batch() {
        let mut sink = MemorySink::default();
        sink.refuse.insert(("p2".into(), "n1".into()));
        let r = deliver(&sends(), &mut sink, at());
        assert_eq!((r.delivered, r.failed), (2, 1));
        assert_eq!(r.events[1].status, EventStatus::Failed);
        assert_eq!(sink.delivered.len(), 2);
    }

    #[test]
    fn unreachable_sink_fails_everything() {
        let mut sink = MemorySink { offline: true, ..Default::default() };
        let r = deliver(&sends(), &mut sink, at());
        assert!(r.sink_unreachable && !r.is_success());
        assert_eq!(r.failed, 3);
        let mut sink = FileSink::new("/nonexistent-dir/outbox.tsv");
        assert!(deliver(&sends(), &mut sink, at()).sink_unreachable);
    }
}
