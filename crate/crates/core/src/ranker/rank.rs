use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Day, GraphSnapshot, KnowledgeGraph, NodeId, NodeKind};

use super::dataset::{Adjacency, EntityIndex, TrainingSet};
use super::matrix::{dot, Matrix};
use super::model::RankerModel;
use super::propagate::forward;
use super::RankerError;

/// Final representations of every entity the model knows, propagated over
/// one graph state.
#[derive(Debug, Clone)]
pub struct Representations {
    entities: EntityIndex,
    output: Matrix,
}

impl RankerModel {
    /// Propagates over `graph`. Entities the model has never seen are
    /// ignored, as are edges touching them.
    pub fn represent(&self, graph: &KnowledgeGraph) -> Result<Representations, RankerError> {
        let edges = graph.edges().map(|e| (e.src, e.rel, e.dst));
        self.represent_edges(edges)
    }

    pub fn represent_snapshot(&self, snapshot: &GraphSnapshot) -> Result<Representations, RankerError> {
        let edges = snapshot.edges.iter().map(|e| (e.src.clone(), e.rel, e.dst.clone()));
        self.represent_edges(edges)
    }

    fn represent_edges(
        &self,
        edges: impl IntoIterator<Item = (NodeId, crate::graph::Relation, NodeId)>,
    ) -> Result<Representations, RankerError> {
        self.check_shapes()?;
        let set = TrainingSet::with_index(self.entities.clone(), edges, self.hyper.positive_signal);
        let adj = Adjacency::new(self.entities.len(), &set.triples);
        let fwd = forward(&self.params, &adj, self.hyper.leaky_slope);
        Ok(Representations { entities: set.entities, output: fwd.output })
    }
}

impl Representations {
    pub fn dim(&self) -> usize {
        self.output.cols
    }

    pub fn vector(&self, id: &NodeId) -> Option<&[f64]> {
        self.entities.get(id).map(|i| self.output.row(i))
    }

    pub fn score(&self, participant: &str, nudge: &str) -> Result<f64, RankerError> {
        let p = NodeId::participant(participant);
        let n = NodeId::nudge(nudge);
        let u = self.vector(&p).ok_or(RankerError::UnknownEntity(p.clone()))?;
        let i = self.vector(&n).ok_or(RankerError::UnknownEntity(n.clone()))?;
        Ok(dot(u, i))
    }

    pub fn nudges(&self) -> Vec<String> {
        self.entities
            .ids()
            .iter()
            .filter(|n| n.kind == NodeKind::Nudge)
            .map(|n| n.key.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredNudge {
    pub nudge: String,
    pub score: f64,
}

/// Candidates of one participant for one day, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedNudgeList {
    pub participant: String,
    pub day: Day,
    pub items: Vec<ScoredNudge>,
}

impl RankedNudgeList {
    fn from_scores(participant: &str, day: Day, mut items: Vec<ScoredNudge>) -> Self {
        items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.nudge.cmp(&b.nudge)));
        Self { participant: participant.to_string(), day, items }
    }

    pub fn keys(&self) -> Vec<&str> {
        self.items.iter().map(|s| s.nudge.as_str()).collect()
    }
}

/// Orders candidates by model score; ties break on nudge key.
pub fn rank(reps: &Representations, participant: &str, candidates: &[String], day: Day) -> Result<RankedNudgeList, RankerError> {
    let p = NodeId::participant(participant);
    let u = reps.vector(&p).ok_or(RankerError::UnknownEntity(p.clone()))?;
    let items = candidates
        .iter()
        .map(|c| {
            let n = NodeId::nudge(c.as_str());
            let i = reps.vector(&n).ok_or(RankerError::UnknownEntity(n))?;
            Ok(ScoredNudge { nudge: c.clone(), score: dot(u, i) })
        })
        .collect::<Result<Vec<_>, RankerError>>()?;
    Ok(RankedNudgeList::from_scores(participant, day, items))
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Uniformly random order, reproducible for a (seed, participant, day).
pub fn rank_random(participant: &str, candidates: &[String], day: Day, seed: u64) -> RankedNudgeList {
    let h = fnv1a(participant.as_bytes(), 0xcbf2_9ce4_8422_2325 ^ seed);
    let h = fnv1a(day.to_string().as_bytes(), h);
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let items = candidates.iter().map(|c| ScoredNudge { nudge: c.clone(), score: rng.gen() }).collect();
    RankedNudgeList::from_scores(participant, day, items)
}

/// Fraction of held-out (participant, nudge) pairs that land in the top `k`
/// of all nudges, after removing each participant's `exclude` pairs.
pub fn hit_rate_at_k(
    scorer: impl Fn(&str, &[String]) -> Result<Vec<String>, RankerError>,
    heldout: &[(String, String)],
    all_nudges: &[String],
    exclude: &HashSet<(String, String)>,
    k: usize,
) -> Result<f64, RankerError> {
    if heldout.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let participants: BTreeSet<&str> = heldout.iter().map(|(p, _)| p.as_str()).collect();
    for p in participants {
        let pool: Vec<String> = all_nudges
            .iter()
            .filter(|n| !exclude.contains(&(p.to_string(), (*n).clone())))
            .cloned()
            .collect();
        let order = scorer(p, &pool)?;
        let top: HashSet<&String> = order.iter().take(k).collect();
        hits += heldout.iter().filter(|(hp, hn)| hp == p && top.contains(hn)).count();
    }
    Ok(hits as f64 / heldout.len() as f64)
}
