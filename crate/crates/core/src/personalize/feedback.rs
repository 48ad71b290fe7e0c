use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::graph::{Day, KnowledgeGraph, Mutation, NodeId, Relation};

use super::events::{sort_causally, EngagementEvent, EventKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackRejection {
    UnknownPair,
    OrphanOpen,
    OrphanRating,
    OutsideAttributionHorizon,
    ConflictingRating,
    Duplicate,
}

impl fmt::Display for FeedbackRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeedbackRejection::UnknownPair => "unknown participant or nudge",
            FeedbackRejection::OrphanOpen => "open without a prior send",
            FeedbackRejection::OrphanRating => "rating without a prior open",
            FeedbackRejection::OutsideAttributionHorizon => "open outside attribution horizon",
            FeedbackRejection::ConflictingRating => "conflicting rating on the same day",
            FeedbackRejection::Duplicate => "duplicate event on the same day",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PairFunnel {
    sent: u32,
    opened: u32,
    rated: u32,
    last_sent: Option<Day>,
    open_days: BTreeSet<Day>,
    ratings: BTreeMap<Day, EventKind>,
}

/// Per-pair funnel counts carried across ingestion calls.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunnelState {
    pairs: BTreeMap<(String, String), PairFunnel>,
    /// Maximum days between the latest send and an open; `None` attributes
    /// opens regardless of delay.
    pub attribution_horizon: Option<u32>,
}

impl FunnelState {
    pub fn with_horizon(days: Option<u32>) -> Self {
        Self {
            attribution_horizon: days,
            ..Default::default()
        }
    }

    /// `(sent, opened, rated)` for a pair.
    pub fn counts(&self, participant: &str, nudge: &str) -> (u32, u32, u32) {
        self.pairs
            .get(&(participant.to_string(), nudge.to_string()))
            .map_or((0, 0, 0), |p| (p.sent, p.opened, p.rated))
    }

    fn check(&self, e: &EngagementEvent) -> Result<(), FeedbackRejection> {
        let pair = self.pairs.get(&(e.participant.clone(), e.nudge.clone()));
        let day = e.day();
        match e.kind {
            EventKind::Sent => Ok(()),
            EventKind::Opened => {
                let p = pair.ok_or(FeedbackRejection::OrphanOpen)?;
                if p.opened >= p.sent {
                    return Err(FeedbackRejection::OrphanOpen);
                }
                if p.open_days.contains(&day) {
                    return Err(FeedbackRejection::Duplicate);
                }
                if let (Some(h), Some(last)) = (self.attribution_horizon, p.last_sent) {
                    if (day - last).num_days() > h as i64 {
                        return Err(FeedbackRejection::OutsideAttributionHorizon);
                    }
                }
                Ok(())
            }
            EventKind::RatedUseful | EventKind::RatedNotUseful => {
                let p = pair.ok_or(FeedbackRejection::OrphanRating)?;
                match p.ratings.get(&day) {
                    Some(k) if *k == e.kind => return Err(FeedbackRejection::Duplicate),
                    Some(_) => return Err(FeedbackRejection::ConflictingRating),
                    None => {}
                }
                if p.rated >= p.opened {
                    return Err(FeedbackRejection::OrphanRating);
                }
                Ok(())
            }
        }
    }

    fn record(&mut self, e: &EngagementEvent) {
        let p = self.pairs.entry((e.participant.clone(), e.nudge.clone())).or_default();
        let day = e.day();
        match e.kind {
            EventKind::Sent => {
                p.sent += 1;
                p.last_sent = Some(p.last_sent.map_or(day, |d| d.max(day)));
            }
            EventKind::Opened => {
                p.opened += 1;
                p.open_days.insert(day);
            }
            EventKind::RatedUseful | EventKind::RatedNotUseful => {
                p.rated += 1;
                p.ratings.insert(day, e.kind);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngagementIngest {
    /// Edge additions grouped by the day they take effect.
    pub mutations: BTreeMap<Day, Vec<Mutation>>,
    pub accepted: Vec<EngagementEvent>,
    pub rejected: Vec<(EngagementEvent, FeedbackRejection)>,
}

impl EngagementIngest {
    pub fn mutation_count(&self) -> usize {
        self.mutations.values().map(Vec::len).sum()
    }

    /// Applies each day's batch in day order.
    pub fn apply(&self, graph: &mut KnowledgeGraph) {
        for (day, batch) in &self.mutations {
            let report = graph.apply_mutation(batch, *day);
            for r in &report.rejected {
                log::warn!("engagement edge rejected on {day}: {}", r.reason);
            }
        }
    }
}

/// Turns engagement events into graph edges, enforcing the send, open,
/// rate funnel. Events are processed in causal order whatever order they
/// arrive in; failed deliveries are ignored.
pub fn ingest_engagement(events: &[EngagementEvent], graph: &KnowledgeGraph, state: &mut FunnelState) -> EngagementIngest {
    let mut sorted: Vec<EngagementEvent> = events.iter().filter(|e| e.is_ok()).cloned().collect();
    sort_causally(&mut sorted);
    let mut out = EngagementIngest::default();
    for e in sorted {
        let participant = NodeId::participant(e.participant.as_str());
        let nudge = NodeId::nudge(e.nudge.as_str());
        let verdict = if graph.contains(&participant) && graph.contains(&nudge) {
            state.check(&e)
        } else {
            Err(FeedbackRejection::UnknownPair)
        };
        match verdict {
            Ok(()) => {
                state.record(&e);
                let rel = match e.kind {
                    EventKind::Sent => None,
                    EventKind::Opened => Some(Relation::Opened),
                    EventKind::RatedUseful => Some(Relation::RatedUseful),
                    EventKind::RatedNotUseful => Some(Relation::RatedNotUseful),
                };
                if let Some(rel) = rel {
                    out.mutations
                        .entry(e.day())
                        .or_default()
                        .push(Mutation::add_edge(participant, rel, nudge));
                }
                out.accepted.push(e);
            }
            Err(reason) => {
                log::debug!("engagement event rejected ({reason}): {}", e.to_line());
                out.rejected.push((e, reason));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::personalize::events::Timestamp;
    use proptest::prelude::*;

    fn ts(d: u32, h: u32) -> Timestamp {
        Day::from_ymd_opt(2023, 4, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn world() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        let mut batch = Vec::new();
        for p in ["p1", "p2", "p3"] {
            batch.push(Mutation::AddNode(NodeId::participant(p)));
        }
        for n in ["n1", "n2"] {
            batch.push(Mutation::AddNode(NodeId::nudge(n)));
        }
        g.apply_mutation(&batch, Day::from_ymd_opt(2023, 4, 1).unwrap());
        g
    }

    fn ev(d: u32, h: u32, p: &str, n: &str, k: EventKind) -> EngagementEvent {
        EngagementEvent::new(ts(d, h), p, n, k)
    }

    #[test]
    fn funnel_becomes_edges() {
        let mut g = world();
        let events = vec![
            ev(3, 9, "p1", "n1", EventKind::Sent),
            ev(3, 10, "p1", "n1", EventKind::Opened),
            ev(3, 11, "p1", "n1", EventKind::RatedUseful),
        ];
        let mut st = FunnelState::default();
        let r = ingest_engagement(&events, &g, &mut st);
        assert!(r.rejected.is_empty());
        r.apply(&mut g);
        let p1 = NodeId::participant("p1");
        let n1 = NodeId::nudge("n1");
        assert!(g.has_edge(&p1, Relation::Opened, &n1));
        assert!(g.has_edge(&p1, Relation::RatedUseful, &n1));
        assert_eq!(st.counts("p1", "n1"), (1, 1, 1));
    }

    #[test]
    fn empty_and_orphans() {
        let g = world();
        let mut st = FunnelState::default();
        assert_eq!(ingest_engagement(&[], &g, &mut st).mutation_count(), 0);
        let r = ingest_engagement(
            &[
                ev(3, 10, "p1", "n1", EventKind::Opened),
                ev(3, 11, "p2", "n1", EventKind::RatedUseful),
                ev(3, 9, "p9", "n1", EventKind::Sent),
            ],
            &g,
            &mut st,
        );
        let reasons: Vec<_> = r.rejected.iter().map(|(_, r)| *r).collect();
        assert_eq!(
            reasons,
            vec![FeedbackRejection::UnknownPair, FeedbackRejection::OrphanOpen, FeedbackRejection::OrphanRating]
        );
    }

    #[test]
    fn rival_ratings_and_horizon() {
        let g = world();
        let mut st = FunnelState::with_horizon(Some(2));
        let r = ingest_engagement(
            &[
                ev(3, 9, "p1", "n1", EventKind::Sent),
                ev(3, 10, "p1", "n1", EventKind::Opened),
                ev(3, 11, "p1", "n1", EventKind::RatedUseful),
                ev(3, 12, "p1", "n1", EventKind::RatedNotUseful),
                ev(3, 9, "p2", "n2", EventKind::Sent),
                ev(9, 9, "p2", "n2", EventKind::Opened),
            ],
            &g,
            &mut st,
        );
        let reasons: Vec<_> = r.rejected.iter().map(|(_, r)| *r).collect();
        assert_eq!(
            reasons,
            vec![FeedbackRejection::ConflictingRating, FeedbackRejection::OutsideAttributionHorizon]
        );
    }

    fn valid_stream() -> Vec<EngagementEvent> {
        let mut out = Vec::new();
        for (i, p) in ["p1", "p2", "p3"].iter().enumerate() {
            for d in 3..9u32 {
                let n = if (d as usize + i) % 2 == 0 { "n1" } else { "n2" };
                out.push(ev(d, 9, p, n, EventKind::Sent));
                if (d as usize * 7 + i) % 3 != 0 {
                    out.push(ev(d, 9, p, n, EventKind::Opened));
                    if d % 2 == 0 {
                        out.push(ev(d, 9, p, n, if i == 1 { EventKind::RatedNotUseful } else { EventKind::RatedUseful }));
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn order_insensitive(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let sorted = valid_stream();
            let mut shuffled = sorted.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (mut g1, mut g2) = (world(), world());
            let a = ingest_engagement(&sorted, &g1, &mut FunnelState::default());
            let b = ingest_engagement(&shuffled, &g2, &mut FunnelState::default());
            prop_assert!(a.rejected.is_empty() && b.rejected.is_empty());
            a.apply(&mut g1);
            b.apply(&mut g2);
            prop_assert_eq!(g1.snapshot(ts(30, 0).date()).to_text(), g2.snapshot(ts(30, 0).date()).to_text());
            // accepted opens agree with Opened edges
            let opens = a.accepted.iter().filter(|e| e.kind == EventKind::Opened).count();
            prop_assert_eq!(opens, g1.edges().filter(|e| e.rel == Relation::Opened).count());
        }
    }
}
