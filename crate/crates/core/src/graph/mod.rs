//! Heterogeneous knowledge graph of participants, nudges and the knowledge
//! attached to them.
//!
//! The graph keeps the *current* edge set. Every edge carries the calendar day
//! on which it became effective; a point-in-time view is obtained with
//! [`KnowledgeGraph::snapshot`], which drops edges that became effective after
//! the requested day.

mod snapshot;

pub use snapshot::{GraphSnapshot, SnapshotError, SNAPSHOT_FORMAT};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

/// Calendar day used throughout the crate.
pub type Day = NaiveDate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Participant,
    Nudge,
    Marker,
    Topic,
    Segment,
    BehaviorGoal,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::Participant,
        NodeKind::Nudge,
        NodeKind::Marker,
        NodeKind::Topic,
        NodeKind::Segment,
        NodeKind::BehaviorGoal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Participant => "Participant",
            NodeKind::Nudge => "Nudge",
            NodeKind::Marker => "Marker",
            NodeKind::Topic => "Topic",
            NodeKind::Segment => "Segment",
            NodeKind::BehaviorGoal => "BehaviorGoal",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown node kind `{s}`"))
    }
}

/// A node reference. `(kind, key)` is globally unique; keys are case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub kind: NodeKind,
    pub key: String,
}

impl NodeId {
    pub fn new(kind: NodeKind, key: impl Into<String>) -> Self {
        Self {
            kind,
            key: key.into(),
        }
    }

    pub fn participant(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Participant, key)
    }

    pub fn nudge(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Nudge, key)
    }

    pub fn marker(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Marker, key)
    }

    pub fn topic(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Topic, key)
    }

    pub fn segment(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Segment, key)
    }

    pub fn goal(key: impl Into<String>) -> Self {
        Self::new(NodeKind::BehaviorGoal, key)
    }

    /// Keys end up in tab-separated files, so tabs and line breaks are refused.
    pub fn has_valid_key(&self) -> bool {
        !self.key.is_empty() && !self.key.contains(['\t', '\n', '\r'])
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.key)
    }
}

/// Marker topic: the part of a `"topic: value"` key before the colon.
pub fn marker_topic(marker_key: &str) -> &str {
    marker_key
        .split_once(": ")
        .map(|(topic, _)| topic)
        .unwrap_or(marker_key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Opened,
    RatedUseful,
    RatedNotUseful,
    HasMarker,
    InTopic,
    InSegment,
    TargetsSegment,
    TargetsGoal,
    EncouragesGoal,
}

impl Relation {
    pub const ALL: [Relation; 9] = [
        Relation::Opened,
        Relation::RatedUseful,
        Relation::RatedNotUseful,
        Relation::HasMarker,
        Relation::InTopic,
        Relation::InSegment,
        Relation::TargetsSegment,
        Relation::TargetsGoal,
        Relation::EncouragesGoal,
    ];

    /// Required `(src, dst)` node kinds.
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        use NodeKind::*;
        match self {
            Relation::Opened | Relation::RatedUseful | Relation::RatedNotUseful => {
                (Participant, Nudge)
            }
            Relation::HasMarker => (Participant, Marker),
            Relation::InTopic => (Marker, Topic),
            Relation::InSegment => (Participant, Segment),
            Relation::TargetsSegment => (Nudge, Segment),
            Relation::TargetsGoal | Relation::EncouragesGoal => (Nudge, BehaviorGoal),
        }
    }

    /// Engagement relations are dated events and may recur on different days.
    /// All other relations describe state: at most one live edge per
    /// `(src, rel, dst)`.
    pub fn is_event(self) -> bool {
        matches!(
            self,
            Relation::Opened | Relation::RatedUseful | Relation::RatedNotUseful
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Opened => "Opened",
            Relation::RatedUseful => "RatedUseful",
            Relation::RatedNotUseful => "RatedNotUseful",
            Relation::HasMarker => "HasMarker",
            Relation::InTopic => "InTopic",
            Relation::InSegment => "InSegment",
            Relation::TargetsSegment => "TargetsSegment",
            Relation::TargetsGoal => "TargetsGoal",
            Relation::EncouragesGoal => "EncouragesGoal",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown relation `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub rel: Relation,
    pub dst: NodeId,
    pub effective_date: Day,
}

/// One command in a mutation batch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Mutation {
    AddNode(NodeId),
    /// Removes the node and every edge incident to it.
    RemoveNode(NodeId),
    /// Adds an edge effective on the batch day.
    AddEdge {
        src: NodeId,
        rel: Relation,
        dst: NodeId,
    },
    /// Closes every dated instance of `(src, rel, dst)`.
    RemoveEdge {
        src: NodeId,
        rel: Relation,
        dst: NodeId,
    },
}

impl Mutation {
    pub fn add_edge(src: NodeId, rel: Relation, dst: NodeId) -> Self {
        Mutation::AddEdge { src, rel, dst }
    }

    pub fn remove_edge(src: NodeId, rel: Relation, dst: NodeId) -> Self {
        Mutation::RemoveEdge { src, rel, dst }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RejectReason {
    #[error("endpoint kind mismatch")]
    EndpointKindMismatch,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("duplicate node")]
    DuplicateNode,
    #[error("duplicate edge")]
    DuplicateEdge,
    #[error("no such edge")]
    NoSuchEdge,
    #[error("conflicting rating on the same day")]
    ConflictingRating,
    #[error("invalid key")]
    InvalidKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// Position of the command in the batch.
    pub index: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MutationReport {
    pub nodes_added: usize,
    pub nodes_removed: usize,
    pub edges_added: usize,
    pub edges_removed: usize,
    pub rejected: Vec<Rejection>,
    /// Graph version after the batch.
    pub version: u64,
}

impl MutationReport {
    pub fn applied(&self) -> usize {
        self.nodes_added + self.nodes_removed + self.edges_added + self.edges_removed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

type OutEntry = (Relation, NodeId, Day);
type InEntry = (NodeId, Relation, Day);

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: BTreeSet<NodeId>,
    out: BTreeMap<NodeId, BTreeSet<OutEntry>>,
    inc: BTreeMap<NodeId, BTreeSet<InEntry>>,
    edge_count: usize,
    version: u64,
}

/// Graphs compare equal on nodes, edges and version.
impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.nodes == other.nodes
            && self.edge_count == other.edge_count
            && self.edges().eq(other.edges())
    }
}

impl Eq for KnowledgeGraph {}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    pub fn marker_count(&self) -> usize {
        self.nodes_of(NodeKind::Marker).count()
    }

    /// All edges in `(src, rel, dst, date)` order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.out.iter().flat_map(|(src, entries)| {
            entries.iter().map(move |(rel, dst, day)| Edge {
                src: src.clone(),
                rel: *rel,
                dst: dst.clone(),
                effective_date: *day,
            })
        })
    }

    pub fn has_edge(&self, src: &NodeId, rel: Relation, dst: &NodeId) -> bool {
        self.out
            .get(src)
            .is_some_and(|set| set.iter().any(|(r, d, _)| *r == rel && d == dst))
    }

    /// Out-edges of `node`, optionally restricted to `rel_filter`, ordered by
    /// relation and then destination. Repeated dated instances of the same
    /// `(rel, dst)` pair are reported once.
    pub fn neighborhood(
        &self,
        node: &NodeId,
        rel_filter: Option<&[Relation]>,
    ) -> Result<Vec<(Relation, NodeId)>, GraphError> {
        if !self.nodes.contains(node) {
            return Err(GraphError::UnknownNode(node.clone()));
        }
        let mut result: Vec<(Relation, NodeId)> = Vec::new();
        if let Some(entries) = self.out.get(node) {
            for (rel, dst, _) in entries {
                if rel_filter.is_some_and(|f| !f.contains(rel)) {
                    continue;
                }
                if result.last().is_some_and(|(r, d)| r == rel && d == dst) {
                    continue;
                }
                result.push((*rel, dst.clone()));
            }
        }
        Ok(result)
    }

    /// Dated out-edges of `node` for one relation.
    pub fn dated_out(&self, node: &NodeId, rel: Relation) -> Vec<(NodeId, Day)> {
        self.out
            .get(node)
            .map(|set| {
                set.iter()
                    .filter(|(r, _, _)| *r == rel)
                    .map(|(_, d, day)| (d.clone(), *day))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Applies a batch of commands in order. Invalid commands are rejected
    /// individually; the version is bumped exactly once per batch.
    pub fn apply_mutation(&mut self, batch: &[Mutation], day: Day) -> MutationReport {
        let mut report = MutationReport::default();
        for (index, cmd) in batch.iter().enumerate() {
            if let Err(reason) = self.apply_one(cmd, day, &mut report) {
                report.rejected.push(Rejection { index, reason });
            }
        }
        self.version += 1;
        report.version = self.version;
        report
    }

    fn apply_one(
        &mut self,
        cmd: &Mutation,
        day: Day,
        report: &mut MutationReport,
    ) -> Result<(), RejectReason> {
        match cmd {
            Mutation::AddNode(node) => {
                if !node.has_valid_key() {
                    return Err(RejectReason::InvalidKey);
                }
                if !self.nodes.insert(node.clone()) {
                    return Err(RejectReason::DuplicateNode);
                }
                report.nodes_added += 1;
            }
            Mutation::RemoveNode(node) => {
                if !self.nodes.remove(node) {
                    return Err(RejectReason::UnknownNode(node.clone()));
                }
                let outgoing = self.out.remove(node).unwrap_or_default();
                for (rel, dst, d) in &outgoing {
                    if let Some(set) = self.inc.get_mut(dst) {
                        set.remove(&(node.clone(), *rel, *d));
                    }
                }
                let incoming = self.inc.remove(node).unwrap_or_default();
                for (src, rel, d) in &incoming {
                    if let Some(set) = self.out.get_mut(src) {
                        set.remove(&(*rel, node.clone(), *d));
                    }
                }
                let removed = outgoing.len() + incoming.len();
                self.edge_count -= removed;
                report.edges_removed += removed;
                report.nodes_removed += 1;
            }
            Mutation::AddEdge { src, rel, dst } => {
                self.check_endpoints(src, *rel, dst)?;
                let out = self.out.entry(src.clone()).or_default();
                if rel.is_event() {
                    if out.contains(&(*rel, dst.clone(), day)) {
                        return Err(RejectReason::DuplicateEdge);
                    }
                    let rival = match rel {
                        Relation::RatedUseful => Some(Relation::RatedNotUseful),
                        Relation::RatedNotUseful => Some(Relation::RatedUseful),
                        _ => None,
                    };
                    if let Some(rival) = rival {
                        if out.contains(&(rival, dst.clone(), day)) {
                            return Err(RejectReason::ConflictingRating);
                        }
                    }
                } else if out.iter().any(|(r, d, _)| r == rel && d == dst) {
                    return Err(RejectReason::DuplicateEdge);
                }
                out.insert((*rel, dst.clone(), day));
                self.inc
                    .entry(dst.clone())
                    .or_default()
                    .insert((src.clone(), *rel, day));
                self.edge_count += 1;
                report.edges_added += 1;
            }
            Mutation::RemoveEdge { src, rel, dst } => {
                self.check_endpoints(src, *rel, dst)?;
                let Some(out) = self.out.get_mut(src) else {
                    return Err(RejectReason::NoSuchEdge);
                };
                let days: Vec<Day> = out
                    .iter()
                    .filter(|(r, d, _)| r == rel && d == dst)
                    .map(|(_, _, day)| *day)
                    .collect();
                if days.is_empty() {
                    return Err(RejectReason::NoSuchEdge);
                }
                for d in &days {
                    out.remove(&(*rel, dst.clone(), *d));
                    if let Some(set) = self.inc.get_mut(dst) {
                        set.remove(&(src.clone(), *rel, *d));
                    }
                }
                self.edge_count -= days.len();
                report.edges_removed += days.len();
            }
        }
        Ok(())
    }

    fn check_endpoints(&self, src: &NodeId, rel: Relation, dst: &NodeId) -> Result<(), RejectReason> {
        let (src_kind, dst_kind) = rel.endpoints();
        if src.kind != src_kind || dst.kind != dst_kind {
            return Err(RejectReason::EndpointKindMismatch);
        }
        if !self.nodes.contains(src) {
            return Err(RejectReason::UnknownNode(src.clone()));
        }
        if !self.nodes.contains(dst) {
            return Err(RejectReason::UnknownNode(dst.clone()));
        }
        Ok(())
    }

    /// Point-in-time view: all nodes, and the edges effective on or before `day`.
    pub fn snapshot(&self, day: Day) -> GraphSnapshot {
        GraphSnapshot {
            as_of: day,
            version: self.version,
            nodes: self.nodes.clone(),
            edges: self.edges().filter(|e| e.effective_date <= day).collect(),
        }
    }

    /// Rebuilds a graph from a snapshot. Edges are inserted verbatim.
    pub fn from_snapshot(snapshot: &GraphSnapshot) -> Self {
        let mut graph = KnowledgeGraph {
            nodes: snapshot.nodes.clone(),
            version: snapshot.version,
            ..Default::default()
        };
        for e in &snapshot.edges {
            graph
                .out
                .entry(e.src.clone())
                .or_default()
                .insert((e.rel, e.dst.clone(), e.effective_date));
            graph
                .inc
                .entry(e.dst.clone())
                .or_default()
                .insert((e.src.clone(), e.rel, e.effective_date));
            graph.edge_count += 1;
        }
        graph
    }

    /// Checks referential integrity and the rel-endpoint table. Used by audits.
    pub fn check_integrity(&self) -> Result<(), String> {
        let mut count = 0;
        for e in self.edges() {
            count += 1;
            let (s, d) = e.rel.endpoints();
            if e.src.kind != s || e.dst.kind != d {
                return Err(format!("edge {} -{}-> {} has wrong endpoint kinds", e.src, e.rel, e.dst));
            }
            if !self.nodes.contains(&e.src) || !self.nodes.contains(&e.dst) {
                return Err(format!("edge {} -{}-> {} dangles", e.src, e.rel, e.dst));
            }
            if e.rel == Relation::RatedUseful {
                let rival = (Relation::RatedNotUseful, e.dst.clone(), e.effective_date);
                if self.out.get(&e.src).is_some_and(|s| s.contains(&rival)) {
                    return Err(format!("{} rated {} both ways on {}", e.src, e.dst, e.effective_date));
                }
            }
        }
        if count != self.edge_count {
            return Err(format!("edge count {} != stored {}", count, self.edge_count));
        }
        Ok(())
    }
}
