//! Nudge library and per-participant candidate generation.
//!
//! Library file, one nudge per line, tab-separated:
//!
//! ```text
//! key  goal  technique  segments  predicate  body
//! ```
//!
//! `segments` is comma-joined (`-` for untargeted). `predicate` is `-` or a
//! `;`-separated conjunction of marker conditions such as
//! `marker in walker: under 5k`. Bodies may contain `{{placeholder}}` fields.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{KnowledgeGraph, Mutation, NodeId, Relation};
use crate::ingest::{parse_condition, Condition, EvalContext, Field, WindowCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Goal {
    Steps,
    Mvpa,
}

impl Goal {
    pub const ALL: [Goal; 2] = [Goal::Steps, Goal::Mvpa];

    pub fn as_str(self) -> &'static str {
        match self {
            Goal::Steps => "Steps",
            Goal::Mvpa => "MVPA",
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Goal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Steps" => Ok(Goal::Steps),
            "MVPA" => Ok(Goal::Mvpa),
            _ => Err(format!("unknown goal `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Technique {
    Framing,
    Gamification,
    Reminder,
    SocialInfluence,
}

impl Technique {
    pub const ALL: [Technique; 4] = [
        Technique::Framing,
        Technique::Gamification,
        Technique::Reminder,
        Technique::SocialInfluence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::Framing => "Framing",
            Technique::Gamification => "Gamification",
            Technique::Reminder => "Reminder",
            Technique::SocialInfluence => "Social Influence",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Technique::ALL
            .into_iter()
            .find(|t| t.as_str() == s || t.as_str().replace(' ', "") == s)
            .ok_or_else(|| format!("unknown technique `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NudgeTemplate {
    pub key: String,
    pub goal: Goal,
    pub technique: Technique,
    /// Empty means untargeted.
    pub target_segments: BTreeSet<String>,
    /// Conjunction of marker conditions; empty means no predicate.
    pub marker_predicate: Vec<Condition>,
    pub body: String,
}

impl NudgeTemplate {
    pub fn node(&self) -> NodeId {
        NodeId::nudge(self.key.as_str())
    }

    /// Targeting test: segments are disjunctive, the marker predicate is
    /// conjunctive with them.
    pub fn targets(&self, segments: &BTreeSet<String>, markers: &BTreeSet<String>) -> bool {
        let segment_ok = self.target_segments.is_empty()
            || self.target_segments.iter().any(|s| segments.contains(s));
        if !segment_ok {
            return false;
        }
        if self.marker_predicate.is_empty() {
            return true;
        }
        // Marker predicates never look at dates or behavior windows.
        let ctx = EvalContext {
            markers: Some(markers),
            ..EvalContext::new(chrono::NaiveDate::MIN)
        };
        let mut cache = WindowCache::default();
        self.marker_predicate.iter().all(|c| c.eval(&ctx, &mut cache))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LibraryError {
    #[error("library line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate nudge key `{0}`")]
    DuplicateKey(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CandidateError {
    #[error("participant `{0}` is not in the graph")]
    UnknownParticipant(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NudgeLibrary {
    nudges: Vec<NudgeTemplate>,
    index: BTreeMap<String, usize>,
}

impl NudgeLibrary {
    pub fn new(nudges: Vec<NudgeTemplate>) -> Result<Self, LibraryError> {
        let mut index = BTreeMap::new();
        for (i, n) in nudges.iter().enumerate() {
            if index.insert(n.key.clone(), i).is_some() {
                return Err(LibraryError::DuplicateKey(n.key.clone()));
            }
        }
        Ok(Self { nudges, index })
    }

    pub fn parse(text: &str) -> Result<Self, LibraryError> {
        let mut nudges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            nudges.push(parse_nudge(raw).map_err(|reason| LibraryError::Parse { line, reason })?);
        }
        Self::new(nudges)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# key\tgoal\ttechnique\tsegments\tpredicate\tbody\n");
        for n in &self.nudges {
            let segs = if n.target_segments.is_empty() {
                "-".to_string()
            } else {
                n.target_segments.iter().cloned().collect::<Vec<_>>().join(",")
            };
            let pred = if n.marker_predicate.is_empty() {
                "-".to_string()
            } else {
                n.marker_predicate
                    .iter()
                    .map(predicate_term)
                    .collect::<Vec<_>>()
                    .join("; ")
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                n.key, n.goal, n.technique, segs, pred, n.body
            ));
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&NudgeTemplate> {
        self.index.get(key).map(|&i| &self.nudges[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &NudgeTemplate> {
        self.nudges.iter()
    }

    pub fn len(&self) -> usize {
        self.nudges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nudges.is_empty()
    }

    pub fn count_by_goal(&self, goal: Goal) -> usize {
        self.nudges.iter().filter(|n| n.goal == goal).count()
    }

    /// Graph mutations that register the library: nudge, goal and segment
    /// nodes plus `TargetsSegment` and `EncouragesGoal` edges. Already
    /// present nodes and edges are skipped.
    pub fn graph_mutations(&self, graph: &KnowledgeGraph) -> Vec<Mutation> {
        let mut nodes = BTreeSet::new();
        let mut edges = Vec::new();
        for n in &self.nudges {
            let nudge = n.node();
            let goal = NodeId::goal(n.goal.as_str());
            nodes.insert(nudge.clone());
            nodes.insert(goal.clone());
            if !graph.has_edge(&nudge, Relation::EncouragesGoal, &goal) {
                edges.push(Mutation::add_edge(nudge.clone(), Relation::EncouragesGoal, goal));
            }
            for s in &n.target_segments {
                let seg = NodeId::segment(s.as_str());
                nodes.insert(seg.clone());
                if !graph.has_edge(&nudge, Relation::TargetsSegment, &seg) {
                    edges.push(Mutation::add_edge(nudge.clone(), Relation::TargetsSegment, seg));
                }
            }
        }
        nodes
            .into_iter()
            .filter(|n| !graph.contains(n))
            .map(Mutation::AddNode)
            .chain(edges)
            .collect()
    }
}

fn predicate_term(c: &Condition) -> String {
    // Condition displays as "field<TAB>-<TAB>-<TAB>cmp<TAB>value".
    let text = c.to_string();
    let parts: Vec<&str> = text.split('\t').collect();
    format!("{} {} {}", parts[0], parts[3], parts[4])
}

fn parse_nudge(line: &str) -> Result<NudgeTemplate, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 6 {
        return Err(format!("expected 6 tab-separated fields, found {}", f.len()));
    }
    let key = f[0].trim();
    if key.is_empty() {
        return Err("empty nudge key".into());
    }
    let goal: Goal = f[1].trim().parse()?;
    let technique: Technique = f[2].trim().parse()?;
    let target_segments: BTreeSet<String> = match f[3].trim() {
        "-" | "" => BTreeSet::new(),
        s => s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
    };
    let marker_predicate = match f[4].trim() {
        "-" | "" => Vec::new(),
        s => s
            .split(';')
            .map(|term| parse_predicate_term(term.trim()))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let body = f[5].trim();
    if body.is_empty() {
        return Err("empty body".into());
    }
    Ok(NudgeTemplate {
        key: key.to_string(),
        goal,
        technique,
        target_segments,
        marker_predicate,
        body: body.to_string(),
    })
}

fn parse_predicate_term(term: &str) -> Result<Condition, String> {
    let mut it = term.splitn(3, ' ');
    let (field, cmp, value) = match (it.next(), it.next(), it.next()) {
        (Some(f), Some(c), Some(v)) => (f, c, v),
        _ => return Err(format!("bad predicate term `{term}`")),
    };
    let cond = parse_condition(&[field, "-", "-", cmp, value])?;
    if cond.field != Field::Marker {
        return Err(format!("nudge predicates may only test markers, found `{field}`"));
    }
    Ok(cond)
}

const DEFAULT_LIBRARY: &str = include_str!("../data/nudge_library.tsv");

/// The bundled 96-nudge library (31 steps, 65 MVPA).
pub fn default_library() -> NudgeLibrary {
    NudgeLibrary::parse(DEFAULT_LIBRARY).expect("bundled library parses")
}

pub fn default_library_text() -> &'static str {
    DEFAULT_LIBRARY
}

fn keys_of(graph: &KnowledgeGraph, participant: &NodeId, rel: Relation) -> BTreeSet<String> {
    graph
        .neighborhood(participant, Some(&[rel]))
        .map(|n| n.into_iter().map(|(_, d)| d.key).collect())
        .unwrap_or_default()
}

/// Nudges whose targeting matches the participant's current segments and
/// markers. Returned in library-key order.
pub fn candidates(
    participant: &str,
    graph: &KnowledgeGraph,
    library: &NudgeLibrary,
) -> Result<Vec<String>, CandidateError> {
    let p = NodeId::participant(participant);
    if !graph.contains(&p) {
        return Err(CandidateError::UnknownParticipant(participant.to_string()));
    }
    let segments = keys_of(graph, &p, Relation::InSegment);
    let markers = keys_of(graph, &p, Relation::HasMarker);
    Ok(library
        .index
        .iter()
        .filter(|(_, &i)| library.nudges[i].targets(&segments, &markers))
        .map(|(k, _)| k.clone())
        .collect())
}
