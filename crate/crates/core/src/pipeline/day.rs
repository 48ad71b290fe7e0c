use std::collections::{BTreeMap, HashSet};

use crate::candidates::candidates;
use crate::constraints::{filter, ContactHistory, DropReason};
use crate::graph::{Day, KnowledgeGraph, Mutation, NodeId};
use crate::ingest::{
    derive_markers, evaluate_segments, marker_mutations, segment_mutations, BehaviorHistory, BehaviorRecord,
    ParticipantProfile,
};
use crate::personalize::{
    deliver, ingest_engagement, render, DeliverySink, EngagementEvent, FunnelState, RenderContext, RenderedNudge,
};
use crate::ranker::{rank, rank_random, retrain_on_update, train, LossTrace, RankedNudgeList, RankerModel};

use super::{Config, PipelineError, Resources, Stage};

/// What the pipeline knows between days.
#[derive(Debug, Clone, Default)]
pub struct PipelineState {
    pub graph: KnowledgeGraph,
    pub history: BehaviorHistory,
    pub profiles: BTreeMap<String, ParticipantProfile>,
    pub contacts: ContactHistory,
    pub funnel: FunnelState,
    pub model: Option<RankerModel>,
    pub last_trained: Option<Day>,
    pub loss: Option<LossTrace>,
    /// Sends and accepted engagement, in processing order.
    pub events: Vec<EngagementEvent>,
    completed: BTreeMap<Day, DayReport>,
}

impl PipelineState {
    /// Graph seeded with the library and one node per profile.
    pub fn new(config: &Config, resources: &Resources, profiles: Vec<ParticipantProfile>, day: Day) -> Self {
        let mut state = Self { funnel: FunnelState::with_horizon(config.attribution_horizon()), ..Default::default() };
        state.add_profiles(resources, profiles, day);
        state
    }

    /// Registers or updates profiles and makes sure the library and every
    /// participant have graph nodes. Returns the number of new participants.
    pub fn add_profiles(&mut self, resources: &Resources, profiles: Vec<ParticipantProfile>, day: Day) -> usize {
        let mut batch = resources.library.graph_mutations(&self.graph);
        let mut added = 0;
        for p in profiles {
            let node = NodeId::participant(p.participant.as_str());
            if !self.graph.contains(&node) {
                batch.push(Mutation::AddNode(node));
                added += 1;
            }
            self.profiles.insert(p.participant.clone(), p);
        }
        self.graph.apply_mutation(&batch, day);
        added
    }

    pub fn completed_days(&self) -> impl Iterator<Item = &Day> {
        self.completed.keys()
    }

    /// Feeds engagement events through the funnel; accepted events become
    /// graph edges, contact history and log entries. Returns (accepted, rejected).
    pub fn apply_events(&mut self, events: &[EngagementEvent]) -> (usize, usize) {
        let ingest = ingest_engagement(events, &self.graph, &mut self.funnel);
        ingest.apply(&mut self.graph);
        for e in &ingest.accepted {
            self.contacts.record(e);
        }
        let counts = (ingest.accepted.len(), ingest.rejected.len());
        self.events.extend(ingest.accepted);
        counts
    }
}

/// New data arriving for a day: the previous day's behavior and engagement.
#[derive(Debug, Clone, Default)]
pub struct DayInputs {
    pub records: Vec<BehaviorRecord>,
    pub events: Vec<EngagementEvent>,
}

/// Per-stage counts for one day.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DayReport {
    pub day: Day,
    pub participants: usize,
    pub records_ingested: usize,
    pub records_skipped: usize,
    pub feedback_accepted: usize,
    pub feedback_rejected: usize,
    pub graph_mutations: usize,
    pub retrained: bool,
    pub random_ranked: bool,
    pub candidates: usize,
    pub sends: usize,
    pub dropped_budget: usize,
    pub dropped_recency: usize,
    pub dropped_rating: usize,
    pub render_failed: usize,
    pub delivered: usize,
    pub delivery_failed: usize,
    pub already_sent: usize,
}

impl DayReport {
    pub const HEADER: &'static str = "day\tparticipants\trecords_ingested\trecords_skipped\tfeedback_accepted\tfeedback_rejected\tgraph_mutations\tretrained\trandom_ranked\tcandidates\tsends\tdropped_budget\tdropped_recency\tdropped_rating\trender_failed\tdelivered\tdelivery_failed\talready_sent";

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.day,
            self.participants,
            self.records_ingested,
            self.records_skipped,
            self.feedback_accepted,
            self.feedback_rejected,
            self.graph_mutations,
            u8::from(self.retrained),
            u8::from(self.random_ranked),
            self.candidates,
            self.sends,
            self.dropped_budget,
            self.dropped_recency,
            self.dropped_rating,
            self.render_failed,
            self.delivered,
            self.delivery_failed,
            self.already_sent,
        )
    }
}

/// Counts from the stages that pick and send nudges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SendCounts {
    pub sends: usize,
    pub dropped_budget: usize,
    pub dropped_recency: usize,
    pub dropped_rating: usize,
    pub render_failed: usize,
    pub delivered: usize,
    pub delivery_failed: usize,
    pub already_sent: usize,
}

impl PipelineState {
    /// Adds records of known participants dated before `day`. Returns
    /// (ingested, skipped as unknown).
    pub fn ingest_records(&mut self, records: &[BehaviorRecord], day: Day) -> Result<(usize, usize), PipelineError> {
        let (mut ingested, mut skipped) = (0, 0);
        for r in records {
            if !self.profiles.contains_key(&r.participant) {
                skipped += 1;
                continue;
            }
            if r.day >= day {
                return Err(PipelineError::stage(
                    Stage::Ingest,
                    format!("record for {} dated {} is not before {day}", r.participant, r.day),
                ));
            }
            self.history.insert(r.clone()).map_err(|e| PipelineError::stage(Stage::Ingest, e))?;
            ingested += 1;
        }
        Ok((ingested, skipped))
    }

    /// Brings markers and segments up to date for `day`; returns the number
    /// of graph mutations.
    pub fn derive(&mut self, resources: &Resources, day: Day) -> Result<usize, PipelineError> {
        let mut batch = Vec::new();
        for (key, profile) in &self.profiles {
            let history = self.history.participant(key);
            let markers = derive_markers(Some(profile), history, &resources.marker_rules, day);
            let segments = evaluate_segments(Some(profile), history, &markers, &resources.segment_rules, day);
            batch.extend(marker_mutations(&self.graph, key, &markers));
            batch.extend(segment_mutations(&self.graph, key, &segments));
        }
        // per-participant batches may each create the same new marker node
        let mut seen = HashSet::new();
        batch.retain(|m| seen.insert(m.clone()));
        let applied = self.graph.apply_mutation(&batch, day);
        if let Some(r) = applied.rejected.first() {
            return Err(PipelineError::stage(Stage::Derive, format!("mutation rejected: {}", r.reason)));
        }
        Ok(batch.len())
    }

    /// Trains from scratch without a model, otherwise warm-starts.
    pub fn train(&mut self, config: &Config, day: Day) -> Result<(), PipelineError> {
        let snapshot = self.graph.snapshot(day);
        let (model, loss) = match &self.model {
            None => train(&snapshot, &config.ranker),
            Some(prev) => retrain_on_update(prev, &snapshot, config.pipeline.retrain_epochs),
        }
        .map_err(|e| PipelineError::stage(Stage::Train, e))?;
        self.model = Some(model);
        self.loss = Some(loss);
        self.last_trained = Some(day);
        Ok(())
    }

    /// Candidate generation and ranking for every participant with at least
    /// one candidate. Without a model, or with `random_rank`, candidates
    /// are ordered by a seeded hash.
    pub fn rank_all(
        &self,
        config: &Config,
        resources: &Resources,
        day: Day,
    ) -> Result<(Vec<RankedNudgeList>, usize), PipelineError> {
        let reps = match (&self.model, config.pipeline.random_rank) {
            (Some(m), false) => Some(m.represent(&self.graph).map_err(|e| PipelineError::stage(Stage::Rank, e))?),
            _ => None,
        };
        let mut lists = Vec::new();
        let mut total = 0;
        for key in self.profiles.keys() {
            let cands =
                candidates(key, &self.graph, &resources.library).map_err(|e| PipelineError::stage(Stage::Candidates, e))?;
            total += cands.len();
            if cands.is_empty() {
                continue;
            }
            lists.push(match &reps {
                Some(reps) => rank(reps, key, &cands, day).map_err(|e| PipelineError::stage(Stage::Rank, e))?,
                None => rank_random(key, &cands, day, config.ranker.seed),
            });
        }
        Ok((lists, total))
    }

    /// Constraint filter, rendering and delivery at the configured send
    /// time. Pairs already sent on `day` are skipped.
    pub fn send(
        &mut self,
        config: &Config,
        resources: &Resources,
        day: Day,
        ranked: &[RankedNudgeList],
        sink: &mut dyn DeliverySink,
    ) -> Result<SendCounts, PipelineError> {
        let mut c = SendCounts::default();
        let mut sends = Vec::new();
        for list in ranked {
            let key = &list.participant;
            let Some(profile) = self.profiles.get(key) else {
                return Err(PipelineError::stage(Stage::Filter, format!("ranked list for unknown participant {key}")));
            };
            let outcome = filter(list, &self.contacts, &config.constraints);
            for d in &outcome.dropped {
                match d.reason {
                    DropReason::Budget => c.dropped_budget += 1,
                    DropReason::Recency => c.dropped_recency += 1,
                    DropReason::Rating => c.dropped_rating += 1,
                }
            }
            let ctx = RenderContext { profile: Some(profile), history: self.history.participant(key), day };
            for item in outcome.send {
                if self.contacts.send_days(key, &item.nudge).any(|d| d == day) {
                    c.already_sent += 1;
                    continue;
                }
                let Some(template) = resources.library.get(&item.nudge) else {
                    return Err(PipelineError::stage(Stage::Render, format!("nudge {} is not in the library", item.nudge)));
                };
                match render(&template.body, &ctx, &resources.catalogue) {
                    Ok(text) => sends.push(RenderedNudge { participant: key.clone(), nudge: item.nudge, text }),
                    Err(e) => {
                        log::warn!("{day}: {key}/{}: {e}", item.nudge);
                        c.render_failed += 1;
                    }
                }
            }
        }
        c.sends = sends.len();
        let delivery = deliver(&sends, sink, day.and_time(config.pipeline.send_time));
        if delivery.sink_unreachable && !sends.is_empty() {
            return Err(PipelineError::stage(Stage::Deliver, "delivery sink unreachable"));
        }
        c.delivered = delivery.delivered;
        c.delivery_failed = delivery.failed;
        self.apply_events(&delivery.events);
        self.events.extend(delivery.events.into_iter().filter(|e| !e.is_ok()));
        Ok(c)
    }
}

/// Runs every stage for `day`. Work happens on a copy of the state, which
/// replaces the original only if all stages succeed. A day that already
/// completed returns its stored report and changes nothing.
pub fn run_day(
    state: &mut PipelineState,
    config: &Config,
    resources: &Resources,
    day: Day,
    inputs: &DayInputs,
    sink: &mut dyn DeliverySink,
) -> Result<DayReport, PipelineError> {
    if let Some(done) = state.completed.get(&day) {
        log::info!("{day}: already completed, nothing to do");
        return Ok(done.clone());
    }
    let mut s = state.clone();
    let mut report = DayReport { day, participants: s.profiles.len(), ..Default::default() };

    (report.records_ingested, report.records_skipped) = s.ingest_records(&inputs.records, day)?;
    (report.feedback_accepted, report.feedback_rejected) = s.apply_events(&inputs.events);
    report.graph_mutations = s.derive(resources, day)?;

    report.random_ranked = config.pipeline.random_rank;
    if !config.pipeline.random_rank {
        let due = s.last_trained.map_or(true, |last| (day - last).num_days() >= config.pipeline.retrain_every_days as i64);
        if due || s.model.is_none() {
            s.train(config, day)?;
            report.retrained = true;
        }
    }

    let (ranked, n_candidates) = s.rank_all(config, resources, day)?;
    report.candidates = n_candidates;
    let c = s.send(config, resources, day, &ranked, sink)?;
    report.sends = c.sends;
    report.dropped_budget = c.dropped_budget;
    report.dropped_recency = c.dropped_recency;
    report.dropped_rating = c.dropped_rating;
    report.render_failed = c.render_failed;
    report.delivered = c.delivered;
    report.delivery_failed = c.delivery_failed;
    report.already_sent = c.already_sent;
    log::info!(
        "{day}: {} participants, {} candidates, {} sent, {} dropped",
        report.participants,
        report.candidates,
        report.delivered,
        report.dropped_budget + report.dropped_recency + report.dropped_rating
    );

    s.completed.insert(day, report.clone());
    *state = s;
    Ok(report)
}
