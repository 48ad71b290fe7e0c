use std::collections::HashMap;

use chrono::{Duration, NaiveTime};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::candidates::NudgeLibrary;
use crate::ingest::{week_of, WeeklyAggregate};
use crate::personalize::{EngagementEvent, EventKind};

use super::cohort::{generate_cohorts, Arm, Cohorts};
use super::world::{Delivery, World};
use super::{stream, SimConfig, SimError};

const TAG_POLICY: u64 = 4;

/// Uniform pick from the library, ignoring the graph.
pub fn random_policy<'a>(rng: &mut ChaCha8Rng, library: &'a NudgeLibrary) -> &'a str {
    let i = rng.gen_range(0..library.len());
    &library.iter().nth(i).expect("index in range").key
}

/// Result of a graph-free run where every treatment participant receives
/// one random nudge per day.
#[derive(Debug, Clone)]
pub struct FastRun {
    pub cohorts: Cohorts,
    pub control: Vec<WeeklyAggregate>,
    pub treatment: Vec<WeeklyAggregate>,
    /// Sent, opened and rated events, kept only on request.
    pub events: Vec<EngagementEvent>,
}

/// Simulates weeks 1..=study_weeks with the random policy.
pub fn run_fast(cfg: &SimConfig, library: &NudgeLibrary, keep_events: bool) -> Result<FastRun, SimError> {
    if library.is_empty() {
        return Err(SimError::Config("nudge library is empty".into()));
    }
    let cohorts = generate_cohorts(cfg)?;
    let mut world = World::new(cfg, &cohorts, library);
    let n = cohorts.participants.len();
    let weeks = cfg.study_weeks as usize;
    // [participant][week] sums of steps and MVPA
    let mut steps = vec![vec![0.0; weeks + 1]; n];
    let mut mvpa = vec![vec![0.0; weeks + 1]; n];
    let index: HashMap<&str, usize> =
        cohorts.participants.iter().enumerate().map(|(i, p)| (p.key.as_str(), i)).collect();
    for p in &cohorts.pre_study {
        if let Some(0) = week_of(cfg.nudge_start, p.day, cfg.study_weeks) {
            let i = index[p.participant.as_str()];
            steps[i][0] += p.steps as f64;
            mvpa[i][0] += p.mvpa_minutes;
        }
    }
    let mut rng = stream(cfg.seed, &[TAG_POLICY]);
    let mut events = Vec::new();
    let treated: Vec<&str> = cohorts.of_arm(Arm::Treatment).map(|p| p.key.as_str()).collect();
    for d in 0..7 * cfg.study_weeks as i64 {
        let day = cfg.nudge_start + Duration::days(d);
        let sent_at = day.and_time(NaiveTime::from_hms_opt(8, 0, 0).expect("valid time"));
        let deliveries: Vec<Delivery> = treated
            .iter()
            .map(|p| Delivery {
                participant: p.to_string(),
                nudge: random_policy(&mut rng, library).to_string(),
                sent_at,
            })
            .collect();
        let out = world.step_day(day, &deliveries)?;
        let w = (d / 7 + 1) as usize;
        for (i, r) in out.records.iter().enumerate() {
            steps[i][w] += r.steps as f64;
            mvpa[i][w] += r.mvpa_minutes;
        }
        if keep_events {
            events.extend(
                deliveries
                    .iter()
                    .map(|x| EngagementEvent::new(x.sent_at, &x.participant, &x.nudge, EventKind::Sent)),
            );
            events.extend(out.events);
        }
    }
    let (mut control, mut treatment) = (Vec::new(), Vec::new());
    for (i, p) in cohorts.participants.iter().enumerate() {
        let rows = (0..=weeks).map(|w| WeeklyAggregate {
            participant: p.key.clone(),
            week: w as u32,
            mean_daily_steps: steps[i][w] / 7.0,
            total_mvpa_minutes: mvpa[i][w],
        });
        match p.arm {
            Arm::Control => control.extend(rows),
            Arm::Treatment => treatment.extend(rows),
        }
    }
    events.sort();
    Ok(FastRun { cohorts, control, treatment, events })
}
