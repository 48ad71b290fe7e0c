#![allow(dead_code)]

use std::collections::HashSet;

use nudgerank::graph::{Day, KnowledgeGraph, Mutation, NodeId, Relation};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn day0() -> Day {
    Day::from_ymd_opt(2023, 4, 3).unwrap()
}

/// Planted block structure: 200 participants, 50 nudges and 20 markers in
/// five blocks. Each participant opened four nudges of its own block; one
/// more own-block nudge per participant is held out.
pub struct Planted {
    pub graph: KnowledgeGraph,
    pub heldout: Vec<(String, String)>,
    pub train_pairs: HashSet<(String, String)>,
    pub nudges: Vec<String>,
}

pub fn planted_blocks(seed: u64) -> Planted {
    const BLOCKS: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Vec::new();
    let nudges: Vec<String> = (0..50).map(|i| format!("n{i:02}")).collect();
    for n in &nudges {
        batch.push(Mutation::AddNode(NodeId::nudge(n.as_str())));
    }
    for m in 0..20 {
        batch.push(Mutation::AddNode(NodeId::marker(format!("block {}: m{m}", m / 4))));
    }
    for b in 0..BLOCKS {
        batch.push(Mutation::AddNode(NodeId::segment(format!("segment {b}"))));
        for n in &nudges[b * 10..(b + 1) * 10] {
            batch.push(Mutation::add_edge(NodeId::nudge(n.as_str()), Relation::TargetsSegment, NodeId::segment(format!("segment {b}"))));
        }
    }
    let mut heldout = Vec::new();
    let mut train_pairs = HashSet::new();
    for p in 0..200 {
        let b = p % BLOCKS;
        let pid = NodeId::participant(format!("p{p:03}"));
        batch.push(Mutation::AddNode(pid.clone()));
        batch.push(Mutation::add_edge(pid.clone(), Relation::InSegment, NodeId::segment(format!("segment {b}"))));
        let mut own: Vec<usize> = (b * 4..b * 4 + 4).collect();
        own.shuffle(&mut rng);
        for &m in own.iter().take(rng.gen_range(2..=3)) {
            batch.push(Mutation::add_edge(pid.clone(), Relation::HasMarker, NodeId::marker(format!("block {b}: m{m}"))));
        }
        let mut block_nudges: Vec<&String> = nudges[b * 10..(b + 1) * 10].iter().collect();
        block_nudges.shuffle(&mut rng);
        for n in &block_nudges[..4] {
            batch.push(Mutation::add_edge(pid.clone(), Relation::Opened, NodeId::nudge(n.as_str())));
            train_pairs.insert((pid.key.clone(), (*n).clone()));
        }
        heldout.push((pid.key.clone(), block_nudges[4].clone()));
    }
    let mut graph = KnowledgeGraph::new();
    let report = graph.apply_mutation(&batch, day0());
    assert!(report.rejected.is_empty());
    Planted { graph, heldout, train_pairs, nudges }
}
