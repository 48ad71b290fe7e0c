use std::collections::HashMap;

use chrono::{Duration, NaiveTime};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::candidates::{Goal, NudgeLibrary, Technique};
use crate::graph::Day;
use crate::ingest::BehaviorRecord;
use crate::personalize::{EngagementEvent, EventKind, Timestamp};

use super::cohort::{Arm, Cohorts, SimParticipant};
use super::{SimConfig, SimError};

/// Hidden traits of one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    /// Mean daily steps on a synced day, before drift and lift.
    pub steps_mean: f64,
    pub mvpa_per_step: f64,
    pub sync_prob: f64,
    /// Multiplier on the goal's base open probability.
    pub propensity: f64,
    pub preferred: Technique,
}

/// Evolving state of one participant.
#[derive(Debug, Clone)]
pub(crate) struct ParticipantState {
    drift: f64,
    /// Sum of past opens, each decayed by exp(-age / decay_days).
    lift: f64,
    behavior: ChaCha8Rng,
    engagement: ChaCha8Rng,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl ParticipantState {
    pub(crate) fn new(cfg: &SimConfig, mut behavior: ChaCha8Rng, engagement: ChaCha8Rng) -> Self {
        let drift = cfg.drift_sigma * normal(&mut behavior);
        Self { drift, lift: 0.0, behavior, engagement }
    }

    /// Advances one day: drift (on week boundaries), lift decay, responses
    /// to today's deliveries, then today's behavior.
    pub(crate) fn step(
        &mut self,
        cfg: &SimConfig,
        p: &SimParticipant,
        day: Day,
        deliveries: &[(&str, Goal, Technique, Timestamp)],
        events: &mut Vec<EngagementEvent>,
    ) -> BehaviorRecord {
        let since_start = (day - cfg.first_day()).num_days();
        if since_start > 0 && since_start % 7 == 0 {
            let rho = cfg.drift_weekly_corr;
            self.drift = rho * self.drift + (1.0 - rho * rho).sqrt() * cfg.drift_sigma * normal(&mut self.behavior);
        }
        let e = &cfg.effect;
        self.lift *= (-1.0 / e.decay_days).exp();

        for &(nudge, goal, technique, sent_at) in deliveries {
            let base = match goal {
                Goal::Steps => e.open_prob_steps,
                Goal::Mvpa => e.open_prob_mvpa,
            };
            let tech = if technique == p.latent.preferred {
                e.preferred_technique_boost
            } else {
                ((4.0 - e.preferred_technique_boost) / 3.0).max(0.05)
            };
            let prob = (base * p.latent.propensity * tech).clamp(0.0, 1.0);
            let (u_open, u_rate) = (self.engagement.gen::<f64>(), self.engagement.gen::<f64>());
            let (d_open, d_rate) = (self.engagement.gen::<f64>(), self.engagement.gen::<f64>());
            if u_open >= prob {
                continue;
            }
            self.lift += 1.0;
            let end_of_day = day.and_time(NaiveTime::from_hms_opt(23, 29, 0).expect("valid time"));
            let window = (end_of_day - sent_at).num_seconds().max(60);
            let opened_at = sent_at + Duration::seconds(60 + (d_open * (window - 60) as f64) as i64);
            events.push(EngagementEvent::new(opened_at, &p.key, nudge, EventKind::Opened));
            let kind = if u_rate < e.useful_given_open {
                Some(EventKind::RatedUseful)
            } else if u_rate < e.useful_given_open + e.not_useful_given_open {
                Some(EventKind::RatedNotUseful)
            } else {
                None
            };
            if let Some(kind) = kind {
                let rated_at = opened_at + Duration::seconds(30 + (d_rate * 1800.0) as i64);
                events.push(EngagementEvent::new(rated_at, &p.key, nudge, kind));
            }
        }

        let (z_steps, z_mvpa) = (normal(&mut self.behavior), normal(&mut self.behavior));
        let synced = self.behavior.gen::<f64>() < p.latent.sync_prob;
        let (ds, dd, dm) = (cfg.drift_sigma, cfg.daily_sigma, cfg.mvpa_daily_sigma);
        let mult = 1.0 + e.lift_per_open * self.lift;
        let steps = p.latent.steps_mean * (self.drift - ds * ds / 2.0).exp() * (dd * z_steps - dd * dd / 2.0).exp() * mult;
        let mvpa = steps * p.latent.mvpa_per_step * (dm * z_mvpa - dm * dm / 2.0).exp();
        BehaviorRecord {
            participant: p.key.clone(),
            day,
            steps: if synced { steps.round() as u32 } else { 0 },
            mvpa_minutes: if synced { (mvpa * 10.0).round() / 10.0 } else { 0.0 },
            synced,
        }
    }
}

/// One nudge handed to the world for a participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub participant: String,
    pub nudge: String,
    pub sent_at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DayOutput {
    /// One record per participant of both arms.
    pub records: Vec<BehaviorRecord>,
    /// Opens and ratings caused by the day's deliveries.
    pub events: Vec<EngagementEvent>,
}

/// The synthetic population from the first nudge day on.
#[derive(Debug, Clone)]
pub struct World {
    config: SimConfig,
    participants: Vec<SimParticipant>,
    states: Vec<ParticipantState>,
    index: HashMap<String, usize>,
    nudges: HashMap<String, (Goal, Technique)>,
    next_day: Day,
}

impl World {
    pub fn new(config: &SimConfig, cohorts: &Cohorts, library: &NudgeLibrary) -> Self {
        let participants = cohorts.participants.clone();
        let index = participants.iter().enumerate().map(|(i, p)| (p.key.clone(), i)).collect();
        Self {
            config: config.clone(),
            states: cohorts.states.clone(),
            participants,
            index,
            nudges: library.iter().map(|n| (n.key.clone(), (n.goal, n.technique))).collect(),
            next_day: config.nudge_start,
        }
    }

    pub fn next_day(&self) -> Day {
        self.next_day
    }

    pub fn participants(&self) -> &[SimParticipant] {
        &self.participants
    }

    /// Simulates `day`. Every delivery is checked before anything changes:
    /// a control-arm recipient is an integrity violation.
    pub fn step_day(&mut self, day: Day, deliveries: &[Delivery]) -> Result<DayOutput, SimError> {
        if day != self.next_day {
            return Err(SimError::DayOrder { day, expected: self.next_day });
        }
        let mut per: Vec<Vec<(&str, Goal, Technique, Timestamp)>> = vec![Vec::new(); self.participants.len()];
        for d in deliveries {
            let &i = self.index.get(&d.participant).ok_or_else(|| SimError::UnknownParticipant(d.participant.clone()))?;
            if self.participants[i].arm == Arm::Control {
                return Err(SimError::ControlDelivery(d.participant.clone()));
            }
            let &(goal, tech) = self
                .nudges
                .get(&d.nudge)
                .ok_or_else(|| SimError::Config(format!("nudge `{}` is not in the library", d.nudge)))?;
            per[i].push((d.nudge.as_str(), goal, tech, d.sent_at));
        }
        let mut out = DayOutput::default();
        for (i, p) in self.participants.iter().enumerate() {
            out.records.push(self.states[i].step(&self.config, p, day, &per[i], &mut out.events));
        }
        self.next_day = day + Duration::days(1);
        Ok(out)
    }
}
