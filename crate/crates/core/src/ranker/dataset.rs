use std::collections::{HashMap, HashSet};

use crate::graph::{GraphSnapshot, KnowledgeGraph, NodeId, NodeKind, Relation};

/// Relation kinds that take part in propagation; each has a forward and an
/// inverse direction.
pub const RELATION_KINDS: [&str; 6] = [
    "interact",
    "has_marker",
    "in_segment",
    "targets_segment",
    "targets_goal",
    "encourages_goal",
];
pub const NUM_RELATIONS: usize = 2 * RELATION_KINDS.len();
pub const INTERACT: usize = 0;

fn knowledge_relation(rel: Relation) -> Option<usize> {
    match rel {
        Relation::HasMarker => Some(1),
        Relation::InSegment => Some(2),
        Relation::TargetsSegment => Some(3),
        Relation::TargetsGoal => Some(4),
        Relation::EncouragesGoal => Some(5),
        _ => None,
    }
}

pub fn relation_name(r: usize) -> String {
    let base = RELATION_KINDS[r / 2];
    if r % 2 == 0 {
        base.to_string()
    } else {
        format!("{base}^-1")
    }
}

/// Which engagement edges count as positive interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveSignal {
    /// Opened or rated useful, unless also rated not useful.
    #[default]
    OpenedOrUseful,
    UsefulOnly,
    OpenedOnly,
}

/// Dense index over the entities the model embeds. Topics are left out.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityIndex {
    ids: Vec<NodeId>,
    pos: HashMap<NodeId, usize>,
}

impl EntityIndex {
    pub fn new(mut ids: Vec<NodeId>) -> Self {
        ids.retain(|n| n.kind != NodeKind::Topic);
        ids.sort();
        ids.dedup();
        let pos = ids.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { ids, pos }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &NodeId) -> Option<usize> {
        self.pos.get(id).copied()
    }

    pub fn id(&self, i: usize) -> &NodeId {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn of_kind(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.ids.len()).filter(|&i| self.ids[i].kind == kind).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub h: usize,
    pub r: usize,
    pub t: usize,
}

/// Everything training needs from one graph state.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub entities: EntityIndex,
    /// Forward and inverse triples, sorted.
    pub triples: Vec<Triple>,
    pub triple_set: HashSet<Triple>,
    /// (participant, nudge) entity indices.
    pub positives: Vec<(usize, usize)>,
    /// Pairs joined by any engagement edge; never sampled as negatives.
    pub interacted: HashSet<(usize, usize)>,
    pub nudges: Vec<usize>,
    kinds: HashMap<NodeKind, Vec<usize>>,
}

impl TrainingSet {
    pub fn from_graph(graph: &KnowledgeGraph, signal: PositiveSignal) -> Self {
        let index = EntityIndex::new(graph.nodes().cloned().collect());
        Self::with_index(index, graph.edges().map(|e| (e.src, e.rel, e.dst)), signal)
    }

    pub fn from_snapshot(snapshot: &GraphSnapshot, signal: PositiveSignal) -> Self {
        let index = EntityIndex::new(snapshot.nodes.iter().cloned().collect());
        Self::with_index(index, snapshot.edges.iter().map(|e| (e.src.clone(), e.rel, e.dst.clone())), signal)
    }

    /// Builds over a fixed index; edges touching entities outside it are
    /// dropped.
    pub fn with_index(
        entities: EntityIndex,
        edges: impl IntoIterator<Item = (NodeId, Relation, NodeId)>,
        signal: PositiveSignal,
    ) -> Self {
        let mut opened = HashSet::new();
        let mut useful = HashSet::new();
        let mut not_useful = HashSet::new();
        let mut interacted = HashSet::new();
        let mut triple_set = HashSet::new();
        for (src, rel, dst) in edges {
            let (Some(h), Some(t)) = (entities.get(&src), entities.get(&dst)) else {
                continue;
            };
            match rel {
                Relation::Opened => {
                    opened.insert((h, t));
                }
                Relation::RatedUseful => {
                    useful.insert((h, t));
                }
                Relation::RatedNotUseful => {
                    not_useful.insert((h, t));
                }
                _ => {
                    if let Some(k) = knowledge_relation(rel) {
                        triple_set.insert(Triple { h, r: 2 * k, t });
                        triple_set.insert(Triple { h: t, r: 2 * k + 1, t: h });
                    }
                    continue;
                }
            }
            interacted.insert((h, t));
        }
        let mut positives: Vec<(usize, usize)> = match signal {
            PositiveSignal::OpenedOrUseful => opened.union(&useful).copied().collect(),
            PositiveSignal::UsefulOnly => useful.into_iter().collect(),
            PositiveSignal::OpenedOnly => opened.into_iter().collect(),
        };
        positives.retain(|p| !not_useful.contains(p));
        positives.sort_unstable();
        for &(u, i) in &positives {
            triple_set.insert(Triple { h: u, r: INTERACT, t: i });
            triple_set.insert(Triple { h: i, r: INTERACT + 1, t: u });
        }
        let mut triples: Vec<Triple> = triple_set.iter().copied().collect();
        triples.sort_unstable();
        let mut kinds: HashMap<NodeKind, Vec<usize>> = HashMap::new();
        for (i, id) in entities.ids().iter().enumerate() {
            kinds.entry(id.kind).or_default().push(i);
        }
        Self {
            nudges: kinds.get(&NodeKind::Nudge).cloned().unwrap_or_default(),
            entities,
            triples,
            triple_set,
            positives,
            interacted,
            kinds,
        }
    }

    /// No positive interactions yet: only the knowledge phase can train.
    pub fn is_cold_start(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn entities_of_kind(&self, kind: NodeKind) -> &[usize] {
        self.kinds.get(&kind).map_or(&[], Vec::as_slice)
    }
}

/// Neighbor lists per head, in (relation, tail) order, with shared
/// projection slots for each distinct (relation, entity) pair.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub offsets: Vec<usize>,
    pub rel: Vec<usize>,
    pub tail: Vec<usize>,
    pub head_proj: Vec<usize>,
    pub tail_proj: Vec<usize>,
    pub proj_keys: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn new(n_entities: usize, triples: &[Triple]) -> Self {
        let mut sorted = triples.to_vec();
        sorted.sort_unstable();
        let mut offsets = vec![0; n_entities + 1];
        for t in &sorted {
            offsets[t.h + 1] += 1;
        }
        for i in 0..n_entities {
            offsets[i + 1] += offsets[i];
        }
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        let mut proj_keys = Vec::new();
        let mut intern = |key: (usize, usize)| {
            *slot.entry(key).or_insert_with(|| {
                proj_keys.push(key);
                proj_keys.len() - 1
            })
        };
        let mut head_proj = Vec::with_capacity(sorted.len());
        let mut tail_proj = Vec::with_capacity(sorted.len());
        for t in &sorted {
            head_proj.push(intern((t.r, t.h)));
            tail_proj.push(intern((t.r, t.t)));
        }
        Self {
            offsets,
            rel: sorted.iter().map(|t| t.r).collect(),
            tail: sorted.iter().map(|t| t.t).collect(),
            head_proj,
            tail_proj,
            proj_keys,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.tail.len()
    }

    #[inline]
    pub fn edges_of(&self, h: usize) -> std::ops::Range<usize> {
        self.offsets[h]..self.offsets[h + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Day, Mutation};

    fn day() -> Day {
        Day::from_ymd_opt(2023, 4, 3).unwrap()
    }

    fn graph() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        let (p, q) = (NodeId::participant("p"), NodeId::participant("q"));
        let (a, b) = (NodeId::nudge("a"), NodeId::nudge("b"));
        let m = NodeId::marker("age: 30s");
        let batch = vec![
            Mutation::AddNode(p.clone()),
            Mutation::AddNode(q.clone()),
            Mutation::AddNode(a.clone()),
            Mutation::AddNode(b.clone()),
            Mutation::AddNode(m.clone()),
            Mutation::AddNode(NodeId::topic("age")),
            Mutation::add_edge(p.clone(), Relation::HasMarker, m.clone()),
            Mutation::add_edge(m, Relation::InTopic, NodeId::topic("age")),
            Mutation::add_edge(p.clone(), Relation::Opened, a.clone()),
            Mutation::add_edge(q.clone(), Relation::Opened, b.clone()),
            Mutation::add_edge(q, Relation::RatedNotUseful, b),
            Mutation::add_edge(p, Relation::RatedUseful, a),
        ];
        let report = g.apply_mutation(&batch, day());
        assert!(report.rejected.is_empty(), "{:?}", report.rejected);
        g
    }

    #[test]
    fn builds_triples_and_positives() {
        let set = TrainingSet::from_graph(&graph(), PositiveSignal::OpenedOrUseful);
        assert_eq!(set.entities.len(), 5); // topic excluded
        assert_eq!(set.positives.len(), 1);
        let (u, i) = set.positives[0];
        assert_eq!(set.entities.id(u), &NodeId::participant("p"));
        assert_eq!(set.entities.id(i), &NodeId::nudge("a"));
        // has_marker both ways, interact both ways
        assert_eq!(set.triples.len(), 4);
        assert_eq!(set.interacted.len(), 2);
        assert!(!set.is_cold_start());
        let snap = TrainingSet::from_snapshot(&graph().snapshot(day()), PositiveSignal::OpenedOrUseful);
        assert_eq!(snap.triples, set.triples);
    }

    #[test]
    fn adjacency_shares_projection_slots() {
        let set = TrainingSet::from_graph(&graph(), PositiveSignal::UsefulOnly);
        let adj = Adjacency::new(set.entities.len(), &set.triples);
        assert_eq!(adj.n_edges(), 4);
        assert_eq!(adj.proj_keys.len(), 8);
        let p = set.entities.get(&NodeId::participant("p")).unwrap();
        assert_eq!(adj.edges_of(p).len(), 2);
        assert!(adj.rel[adj.edges_of(p)].windows(2).all(|w| w[0] <= w[1]));
    }
}
