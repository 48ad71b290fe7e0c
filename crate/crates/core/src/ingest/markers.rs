use std::collections::BTreeSet;

use crate::graph::{marker_topic, Day, KnowledgeGraph, Mutation, NodeId, Relation};

use super::records::{ParticipantHistory, ParticipantProfile};
use super::rules::{EvalContext, RuleSet};

/// Markers whose rules hold for the participant on `day`.
pub fn derive_markers(
    profile: Option<&ParticipantProfile>,
    history: Option<&ParticipantHistory>,
    rules: &RuleSet,
    day: Day,
) -> BTreeSet<String> {
    let ctx = EvalContext {
        profile,
        history,
        markers: None,
        day,
    };
    rules.matching(&ctx)
}

/// Segments whose rules hold. Segment rules may refer to markers as well as
/// to profile and behavior fields.
pub fn evaluate_segments(
    profile: Option<&ParticipantProfile>,
    history: Option<&ParticipantHistory>,
    markers: &BTreeSet<String>,
    rules: &RuleSet,
    day: Day,
) -> BTreeSet<String> {
    let ctx = EvalContext {
        profile,
        history,
        markers: Some(markers),
        day,
    };
    rules.matching(&ctx)
}

/// Mutations that move the participant's `HasMarker` edges to `markers`.
///
/// Marker and topic nodes are created on first use. Markers the participant
/// no longer holds are closed, which also supersedes stale markers of the
/// same topic. Unchanged markers yield no mutation.
pub fn marker_mutations(
    graph: &KnowledgeGraph,
    participant: &str,
    markers: &BTreeSet<String>,
) -> Vec<Mutation> {
    let p = NodeId::participant(participant);
    let mut out = Vec::new();
    let mut new_nodes = BTreeSet::new();
    for m in markers {
        let marker = NodeId::marker(m.as_str());
        if !graph.contains(&marker) && new_nodes.insert(marker.clone()) {
            let topic = NodeId::topic(marker_topic(m));
            if !graph.contains(&topic) && new_nodes.insert(topic.clone()) {
                out.push(Mutation::AddNode(topic.clone()));
            }
            out.push(Mutation::AddNode(marker.clone()));
            out.push(Mutation::add_edge(marker, Relation::InTopic, topic));
        }
    }
    out.extend(state_diff(graph, &p, Relation::HasMarker, markers, NodeId::marker));
    out
}

/// Mutations that move the participant's `InSegment` edges to `segments`.
pub fn segment_mutations(
    graph: &KnowledgeGraph,
    participant: &str,
    segments: &BTreeSet<String>,
) -> Vec<Mutation> {
    let p = NodeId::participant(participant);
    let mut out: Vec<Mutation> = segments
        .iter()
        .map(|s| NodeId::segment(s.as_str()))
        .filter(|s| !graph.contains(s))
        .map(Mutation::AddNode)
        .collect();
    out.extend(state_diff(graph, &p, Relation::InSegment, segments, NodeId::segment));
    out
}

fn state_diff(
    graph: &KnowledgeGraph,
    participant: &NodeId,
    rel: Relation,
    wanted: &BTreeSet<String>,
    make: fn(String) -> NodeId,
) -> Vec<Mutation> {
    let current: BTreeSet<String> = graph
        .neighborhood(participant, Some(&[rel]))
        .map(|n| n.into_iter().map(|(_, d)| d.key).collect())
        .unwrap_or_default();
    let mut out = Vec::new();
    for stale in current.difference(wanted) {
        out.push(Mutation::remove_edge(participant.clone(), rel, make(stale.clone())));
    }
    for fresh in wanted.difference(&current) {
        out.push(Mutation::add_edge(participant.clone(), rel, make(fresh.clone())));
    }
    out
}
