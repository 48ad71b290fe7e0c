//! Line-oriented snapshot files.
//!
//! ```text
//! nudgerank-snapshot<TAB>1<TAB>2023-04-03<TAB>17
//! N<TAB>Participant<TAB>p1
//! E<TAB>HasMarker<TAB>p1<TAB>age: 30s<TAB>2023-04-01
//! ```
//!
//! The header carries the format version, the as-of day and the graph
//! version. Node records precede edge records; both are sorted, so identical
//! graphs serialize to identical bytes.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::{Day, Edge, NodeId, NodeKind, Relation};

pub const SNAPSHOT_FORMAT: &str = "nudgerank-snapshot";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSnapshot {
    pub as_of: Day,
    pub version: u64,
    pub nodes: BTreeSet<NodeId>,
    pub edges: BTreeSet<Edge>,
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record `{record}`: {reason}")]
    Malformed {
        line: usize,
        record: String,
        reason: String,
    },
}

impl GraphSnapshot {
    pub fn empty(as_of: Day) -> Self {
        Self {
            as_of,
            version: 0,
            nodes: BTreeSet::new(),
            edges: BTreeSet::new(),
        }
    }

    pub fn marker_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Marker).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{SNAPSHOT_FORMAT}\t{FORMAT_VERSION}\t{}\t{}\n",
            self.as_of.format("%Y-%m-%d"),
            self.version
        );
        for n in &self.nodes {
            out.push_str(&format!("N\t{}\t{}\n", n.kind, n.key));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "E\t{}\t{}\t{}\t{}\n",
                e.rel,
                e.src.key,
                e.dst.key,
                e.effective_date.format("%Y-%m-%d")
            ));
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<(), SnapshotError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, SnapshotError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, SnapshotError> {
        let mut lines = text.lines().enumerate();
        let malformed = |line: usize, record: &str, reason: &str| SnapshotError::Malformed {
            line: line + 1,
            record: record.to_string(),
            reason: reason.to_string(),
        };
        let (i, header) = lines.next().ok_or_else(|| malformed(0, "", "missing header"))?;
        let h: Vec<&str> = header.split('\t').collect();
        if h.len() != 4 || h[0] != SNAPSHOT_FORMAT {
            return Err(malformed(i, header, "bad header"));
        }
        if h[1].parse::<u32>().ok() != Some(FORMAT_VERSION) {
            return Err(malformed(i, header, "unsupported format version"));
        }
        let as_of = parse_day(h[2]).ok_or_else(|| malformed(i, header, "bad as-of day"))?;
        let version = h[3]
            .parse::<u64>()
            .map_err(|_| malformed(i, header, "bad graph version"))?;

        let mut snap = GraphSnapshot::empty(as_of);
        snap.version = version;
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match f[0] {
                "N" if f.len() == 3 => {
                    let kind: NodeKind = f[1].parse().map_err(|e: String| malformed(i, line, &e))?;
                    let node = NodeId::new(kind, f[2]);
                    if !node.has_valid_key() {
                        return Err(malformed(i, line, "empty key"));
                    }
                    snap.nodes.insert(node);
                }
                "E" if f.len() == 5 => {
                    let rel: Relation = f[1].parse().map_err(|e: String| malformed(i, line, &e))?;
                    let (sk, dk) = rel.endpoints();
                    let src = NodeId::new(sk, f[2]);
                    let dst = NodeId::new(dk, f[3]);
                    if !snap.nodes.contains(&src) || !snap.nodes.contains(&dst) {
                        return Err(malformed(i, line, "edge references unknown node"));
                    }
                    let effective_date =
                        parse_day(f[4]).ok_or_else(|| malformed(i, line, "bad effective date"))?;
                    if effective_date > as_of {
                        return Err(malformed(i, line, "edge effective after as-of day"));
                    }
                    snap.edges.insert(Edge {
                        src,
                        rel,
                        dst,
                        effective_date,
                    });
                }
                _ => return Err(malformed(i, line, "unrecognized record")),
            }
        }
        Ok(snap)
    }
}

pub(crate) fn parse_day(s: &str) -> Option<Day> {
    Day::parse_from_str(s, "%Y-%m-%d").ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{KnowledgeGraph, Mutation};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn day(offset: i64) -> Day {
        Day::from_ymd_opt(2023, 4, 1).unwrap() + chrono::Duration::days(offset)
    }

    #[test]
    fn empty_graph_round_trips() {
        let g = KnowledgeGraph::new();
        let s = g.snapshot(day(0));
        assert!(s.nodes.is_empty() && s.edges.is_empty());
        let back = GraphSnapshot::parse(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert_eq!(KnowledgeGraph::from_snapshot(&back), g);
    }

    #[test]
    fn corrupt_record_is_named() {
        let text = "nudgerank-snapshot\t1\t2023-04-01\t3\nN\tParticipant\tp1\nE\tOpened\tp1\n";
        match GraphSnapshot::parse(text) {
            Err(SnapshotError::Malformed { line, record, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(record, "E\tOpened\tp1");
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
        assert!(GraphSnapshot::parse("garbage").is_err());
    }

    #[test]
    fn dangling_edge_in_file_rejected() {
        let text = "nudgerank-snapshot\t1\t2023-04-01\t3\nE\tOpened\tp1\tn1\t2023-04-01\n";
        assert!(matches!(
            GraphSnapshot::parse(text),
            Err(SnapshotError::Malformed { line: 2, .. })
        ));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Node(u8, u8),
        Edge(u8, u8, u8),
        Drop(u8, u8, u8),
        DropNode(u8, u8),
    }

    fn node(kind: u8, key: u8) -> NodeId {
        NodeId::new(NodeKind::ALL[kind as usize % 6], format!("k{}", key % 6))
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            3 => (any::<u8>(), any::<u8>()).prop_map(|(a, b)| Op::Node(a, b)),
            6 => (any::<u8>(), any::<u8>(), any::<u8>()).prop_map(|(a, b, c)| Op::Edge(a, b, c)),
            1 => (any::<u8>(), any::<u8>(), any::<u8>()).prop_map(|(a, b, c)| Op::Drop(a, b, c)),
            1 => (any::<u8>(), any::<u8>()).prop_map(|(a, b)| Op::DropNode(a, b)),
        ]
    }

    fn to_mutation(op: &Op) -> Mutation {
        match *op {
            Op::Node(k, key) => Mutation::AddNode(node(k, key)),
            Op::DropNode(k, key) => Mutation::RemoveNode(node(k, key)),
            Op::Edge(r, s, d) | Op::Drop(r, s, d) => {
                let rel = Relation::ALL[r as usize % 9];
                let (sk, dk) = rel.endpoints();
                let src = NodeId::new(sk, format!("k{}", s % 6));
                let dst = NodeId::new(dk, format!("k{}", d % 6));
                if matches!(op, Op::Edge(..)) {
                    Mutation::add_edge(src, rel, dst)
                } else {
                    Mutation::remove_edge(src, rel, dst)
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Random valid and invalid mutation streams: the graph stays
        /// consistent, matches a naive edge-set model, and round-trips.
        #[test]
        fn random_mutations_round_trip(ops in prop::collection::vec(op(), 10_000)) {
            let mut g = KnowledgeGraph::new();
            let mut oracle_nodes: BTreeSet<NodeId> = BTreeSet::new();
            let mut oracle_edges: BTreeSet<(NodeId, Relation, NodeId, Day)> = BTreeSet::new();
            for (i, chunk) in ops.chunks(50).enumerate() {
                let d = day(i as i64);
                let batch: Vec<Mutation> = chunk.iter().map(to_mutation).collect();
                g.apply_mutation(&batch, d);
                for m in &batch {
                    match m {
                        Mutation::AddNode(n) => { oracle_nodes.insert(n.clone()); }
                        Mutation::RemoveNode(n) => {
                            oracle_nodes.remove(n);
                            oracle_edges.retain(|(s, _, t, _)| s != n && t != n);
                        }
                        Mutation::AddEdge { src, rel, dst } => {
                            if !oracle_nodes.contains(src) || !oracle_nodes.contains(dst) { continue; }
                            let exists = oracle_edges.iter().any(|(s, r, t, dd)| {
                                s == src && r == rel && t == dst && (!rel.is_event() || *dd == d)
                            });
                            let conflict = oracle_edges.iter().any(|(s, r, t, dd)| {
                                s == src && t == dst && *dd == d && matches!((rel, r),
                                    (Relation::RatedUseful, Relation::RatedNotUseful)
                                    | (Relation::RatedNotUseful, Relation::RatedUseful))
                            });
                            if !exists && !conflict {
                                oracle_edges.insert((src.clone(), *rel, dst.clone(), d));
                            }
                        }
                        Mutation::RemoveEdge { src, rel, dst } => {
                            oracle_edges.retain(|(s, r, t, _)| !(s == src && r == rel && t == dst));
                        }
                    }
                }
                prop_assert!(g.check_integrity().is_ok());
            }
            let got: BTreeSet<_> = g.edges().map(|e| (e.src, e.rel, e.dst, e.effective_date)).collect();
            prop_assert_eq!(&got, &oracle_edges);

            let snap = g.snapshot(day(400));
            let text = snap.to_text();
            let back = GraphSnapshot::parse(&text).unwrap();
            prop_assert_eq!(back.to_text(), text);
            prop_assert_eq!(KnowledgeGraph::from_snapshot(&back), g);
        }
    }
}
