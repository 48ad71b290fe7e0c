mod common;

use std::collections::BTreeMap;

use chrono::Duration;
use nudgerank::candidates::NudgeLibrary;
use nudgerank::ingest::{BehaviorRecord, Os, ParticipantProfile, Program, Sex, Tracker};
use nudgerank::personalize::{EngagementEvent, EventKind, MemorySink};
use nudgerank::pipeline::{
    run_day, run_experiment, write_outputs, Config, DayInputs, PipelineError, PipelineState, Resources, Stage,
    DEFAULT_CONFIG,
};
use nudgerank::sim::{run_fast, EffectConfig};

use common::day0;

fn profile(key: &str, age: u32) -> ParticipantProfile {
    ParticipantProfile {
        participant: key.into(),
        age_years: age,
        sex: Sex::F,
        os: Os::Android,
        tracker: Tracker::Fitbit,
        enrolled_programs: [Program::Nsc].into(),
        bmi: Some(22.0),
    }
}

fn week_of_records(key: &str, steps: u32, mvpa: f64) -> Vec<BehaviorRecord> {
    (1..=7)
        .map(|d| BehaviorRecord { participant: key.into(), day: day0() - Duration::days(d), steps, mvpa_minutes: mvpa, synced: true })
        .collect()
}

const TOY_LIBRARY: &str = "n1\tSteps\tFraming\t-\t-\tEvery walk adds up.\n\
    n2\tSteps\tReminder\tInactive Young Adults\t-\tYou averaged {{avg_daily_steps}} steps. A short walk after lunch is a good start.\n";

fn toy_config() -> (Config, Resources) {
    let mut config = Config::default();
    config.ranker.epochs = 30;
    config.ranker.cf_batch_size = 8;
    config.ranker.kg_batch_size = 16;
    let mut resources = config.resources().unwrap();
    resources.library = NudgeLibrary::parse(TOY_LIBRARY).unwrap();
    (config, resources)
}

#[test]
fn default_config_file_matches_builtin_defaults() {
    assert_eq!(Config::parse(DEFAULT_CONFIG).unwrap(), Config::default());
    assert_eq!(Config::parse("").unwrap(), Config::default());
}

#[test]
fn bad_config_maps_to_exit_code_one() {
    for text in ["[pipeline]\nretrain_every_day = 3\n", "[constraints]\ndaily_budget = 0\n", "[sim.effect]\nopen_prob_steps = 2.0\n"] {
        let err = Config::parse(text).unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn empty_participant_set_reports_zero_counts() {
    let (config, resources) = toy_config();
    let mut state = PipelineState::new(&config, &resources, Vec::new(), day0());
    let mut sink = MemorySink::default();
    let r = run_day(&mut state, &config, &resources, day0(), &DayInputs::default(), &mut sink).unwrap();
    assert_eq!((r.participants, r.candidates, r.sends, r.delivered), (0, 0, 0, 0));
    assert!(sink.delivered.is_empty());
}

fn toy_state(config: &Config, resources: &Resources) -> (PipelineState, DayInputs) {
    let profiles = vec![profile("p1", 34), profile("p2", 52), profile("p3", 25)];
    let state = PipelineState::new(config, resources, profiles, day0() - Duration::days(7));
    let mut records = week_of_records("p1", 2500, 0.0);
    records.extend(week_of_records("p2", 9000, 40.0));
    records.extend(week_of_records("p3", 1800, 5.0));
    let sent = (day0() - Duration::days(1)).and_hms_opt(8, 0, 0).unwrap();
    let at = |h| (day0() - Duration::days(1)).and_hms_opt(h, 0, 0).unwrap();
    let events = vec![
        EngagementEvent::new(sent, "p1", "n1", EventKind::Sent),
        EngagementEvent::new(sent, "p3", "n1", EventKind::Sent),
        EngagementEvent::new(at(9), "p1", "n1", EventKind::Opened),
        EngagementEvent::new(at(10), "p1", "n1", EventKind::RatedUseful),
        EngagementEvent::new(at(12), "p3", "n1", EventKind::Opened),
    ];
    (state, DayInputs { records, events })
}

#[test]
fn toy_world_sends_n2_to_the_inactive_young_adults() {
    let (config, resources) = toy_config();
    let (mut state, inputs) = toy_state(&config, &resources);
    let mut sink = MemorySink::default();
    let r = run_day(&mut state, &config, &resources, day0(), &inputs, &mut sink).unwrap();
    assert!(r.retrained);
    assert_eq!(r.feedback_accepted, 5);
    let sent: BTreeMap<&str, &str> = sink.delivered.iter().map(|(_, n)| (n.participant.as_str(), n.nudge.as_str())).collect();
    assert_eq!(sent.get("p1"), Some(&"n2"));
    assert_eq!(sent.get("p3"), Some(&"n2"));
    assert_eq!(sent.get("p2"), Some(&"n1"));
    let p1 = sink.delivered.iter().find(|(_, n)| n.participant == "p1").unwrap();
    assert!(p1.1.text.contains("2,500 steps"), "{}", p1.1.text);
    assert!(sink.delivered.iter().all(|(t, _)| *t == day0().and_hms_opt(8, 0, 0).unwrap()));
}

#[test]
fn rerunning_a_completed_day_changes_nothing() {
    let (config, resources) = toy_config();
    let (mut state, inputs) = toy_state(&config, &resources);
    let mut sink = MemorySink::default();
    let first = run_day(&mut state, &config, &resources, day0(), &inputs, &mut sink).unwrap();
    let (events, delivered) = (state.events.clone(), sink.delivered.len());
    let again = run_day(&mut state, &config, &resources, day0(), &inputs, &mut sink).unwrap();
    assert_eq!(first, again);
    assert_eq!(state.events, events);
    assert_eq!(sink.delivered.len(), delivered);
}

#[test]
fn failing_stage_leaves_state_untouched() {
    let (config, resources) = toy_config();
    let (mut state, mut inputs) = toy_state(&config, &resources);
    let mut clash = inputs.records[0].clone();
    clash.steps += 1;
    inputs.records.push(clash);
    let mut sink = MemorySink::default();
    let err = run_day(&mut state, &config, &resources, day0(), &inputs, &mut sink).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: Stage::Ingest, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(state.events.is_empty() && state.history.is_empty() && state.model.is_none());
    assert_eq!(state.completed_days().count(), 0);

    let (mut state, inputs) = toy_state(&config, &resources);
    let mut offline = MemorySink { offline: true, ..Default::default() };
    let err = run_day(&mut state, &config, &resources, day0(), &inputs, &mut offline).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: Stage::Deliver, .. }), "{err}");
    assert!(state.events.is_empty());
}

#[test]
fn random_rank_fallback_still_runs() {
    let (mut config, resources) = toy_config();
    config.pipeline.random_rank = true;
    let (mut state, inputs) = toy_state(&config, &resources);
    let mut sink = MemorySink::default();
    let r = run_day(&mut state, &config, &resources, day0(), &inputs, &mut sink).unwrap();
    assert!(r.random_ranked && !r.retrained);
    assert!(state.model.is_none());
    assert_eq!(r.delivered, 3);
}

fn small_experiment(seed: u64) -> Config {
    let mut c = Config::default();
    c.sim.seed = seed;
    c.sim.n_per_arm = 120;
    c.sim.study_weeks = 3;
    c
}

#[test]
fn small_experiment_is_clean_and_complete() {
    let r = run_experiment(&small_experiment(3)).unwrap();
    assert_eq!(r.days.len(), 21);
    assert!(r.audit.is_clean(), "{:?}", r.audit.violations.first());
    assert_eq!(r.control_events, 0);
    assert!(r.days.iter().all(|d| d.delivered <= d.participants));
    assert!(r.days.iter().filter(|d| d.retrained).count() == 3);
    let first_send = r.events.iter().filter(|e| e.kind == EventKind::Sent).map(|e| e.timestamp.date()).min().unwrap();
    assert_eq!(first_send, r.cohorts.pre_study.iter().map(|b| b.day).max().unwrap() + Duration::days(1));
    assert_eq!(r.control.len(), 120);
    assert!(r.treatment.values().all(|rows| rows.len() == 4));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let config = small_experiment(4);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_outputs(&run_experiment(&config).unwrap(), d.path(), false).unwrap();
    }
    let files = |p: &std::path::Path| {
        let mut out = BTreeMap::new();
        for e in walk(p) {
            out.insert(e.strip_prefix(p).unwrap().to_path_buf(), std::fs::read(&e).unwrap());
        }
        out
    };
    let (a, b) = (files(dirs[0].path()), files(dirs[1].path()));
    assert!(a.len() > 20, "{}", a.len());
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs", k.display());
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn under_the_null_behavior_does_not_depend_on_the_policy() {
    let mut config = small_experiment(5);
    config.sim.effect = EffectConfig::null();
    let full = run_experiment(&config).unwrap();
    let fast = run_fast(&config.sim, &config.resources().unwrap().library, false).unwrap();
    let flat = |m: &BTreeMap<String, Vec<nudgerank::ingest::WeeklyAggregate>>| m.values().flatten().cloned().collect::<Vec<_>>();
    for (a, b) in flat(&full.treatment).iter().zip(&fast.treatment).chain(flat(&full.control).iter().zip(&fast.control)) {
        assert_eq!((&a.participant, a.week), (&b.participant, b.week));
        assert!((a.mean_daily_steps - b.mean_daily_steps).abs() < 1e-6);
        assert!((a.total_mvpa_minutes - b.total_mvpa_minutes).abs() < 1e-6);
    }
}
