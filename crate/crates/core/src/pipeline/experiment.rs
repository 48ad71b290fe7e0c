use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::Duration;

use crate::constraints::{audit_events, AuditReport};
use crate::graph::GraphSnapshot;
use crate::ingest::{weekly_aggregate, write_aggregates, write_behavior, write_profiles, BehaviorHistory, BehaviorRecord, WeeklyAggregate};
use crate::personalize::{sort_causally, write_events, DeliverySink, EngagementEvent};
use crate::ranker::{LossTrace, RankerModel};
use crate::sim::{generate_cohorts, Arm, Cohorts, Delivery, World};
use crate::stats::{build_report, emit_report, test_hypotheses, Hypotheses, Report, ReportInputs};

use super::{run_day, Config, DayInputs, DayReport, PipelineError, PipelineState, Stage};

/// Everything one simulated experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub cohorts: Cohorts,
    pub days: Vec<DayReport>,
    /// Sends and engagement in causal order.
    pub events: Vec<EngagementEvent>,
    /// Every behavior record of both arms, pre-study included.
    pub behavior: Vec<BehaviorRecord>,
    pub control: BTreeMap<String, Vec<WeeklyAggregate>>,
    pub treatment: BTreeMap<String, Vec<WeeklyAggregate>>,
    pub hypotheses: Hypotheses,
    pub report: Report,
    pub audit: AuditReport,
    /// Events naming a control participant; must be zero.
    pub control_events: usize,
    pub snapshots: Vec<GraphSnapshot>,
    pub model: Option<RankerModel>,
    pub loss: Option<LossTrace>,
}

struct NullSink;

impl DeliverySink for NullSink {
    fn deliver(&mut self, _: &crate::personalize::RenderedNudge, _: crate::personalize::Timestamp) -> Result<(), crate::personalize::SinkError> {
        Ok(())
    }
}

/// Matched cohorts, 7 × study_weeks daily cycles over the treatment arm
/// with the world answering each day's sends, then the evaluation.
pub fn run_experiment(config: &Config) -> Result<ExperimentResult, PipelineError> {
    config.validate()?;
    let resources = config.resources()?;
    let sim = &config.sim;
    let cohorts = generate_cohorts(sim).map_err(|e| PipelineError::stage(Stage::Simulate, e))?;
    let mut world = World::new(sim, &cohorts, &resources.library);
    let treated: Vec<_> = cohorts.of_arm(Arm::Treatment).map(|p| p.profile.clone()).collect();
    let mut state = PipelineState::new(config, &resources, treated, sim.first_day());
    let mut behavior = cohorts.pre_study.clone();
    let mut inputs = DayInputs {
        records: cohorts.pre_study.iter().filter(|r| state.profiles.contains_key(&r.participant)).cloned().collect(),
        events: Vec::new(),
    };
    let mut days = Vec::new();
    let mut snapshots = Vec::new();
    let mut sink = NullSink;
    let n_days = 7 * sim.study_weeks as i64;
    for d in 0..n_days {
        let day = sim.nudge_start + Duration::days(d);
        let report = run_day(&mut state, config, &resources, day, &inputs, &mut sink)?;
        let deliveries: Vec<Delivery> = state
            .events
            .iter()
            .rev()
            .take_while(|e| e.timestamp.date() == day)
            .filter(|e| e.kind == crate::personalize::EventKind::Sent && e.is_ok())
            .map(|e| Delivery { participant: e.participant.clone(), nudge: e.nudge.clone(), sent_at: e.timestamp })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let out = world.step_day(day, &deliveries).map_err(|e| PipelineError::stage(Stage::Simulate, e))?;
        let every = config.pipeline.snapshot_every_days as i64;
        if every > 0 && (d + 1) % every == 0 && d + 1 < n_days {
            snapshots.push(state.graph.snapshot(day));
        }
        days.push(report);
        inputs = DayInputs {
            records: out.records.iter().filter(|r| state.profiles.contains_key(&r.participant)).cloned().collect(),
            events: out.events,
        };
        behavior.extend(out.records);
    }
    // the last day's engagement still has to reach the log
    let last = sim.last_day();
    state.apply_events(&inputs.events);
    snapshots.push(state.graph.snapshot(last));

    let mut events = state.events.clone();
    sort_causally(&mut events);
    let assignment = cohorts.assignment();
    let control_events = events.iter().filter(|e| assignment.arm(&e.participant) != Some(Arm::Treatment)).count();
    let audit = audit_events(&events, &config.constraints);

    behavior.sort_by(|a, b| (a.day, &a.participant).cmp(&(b.day, &b.participant)));
    let history = BehaviorHistory::from_records(behavior.iter().cloned()).map_err(|e| PipelineError::stage(Stage::Report, e))?;
    let (mut control, mut treatment) = (BTreeMap::new(), BTreeMap::new());
    let mut groups = BTreeMap::new();
    for p in &cohorts.participants {
        let rows = weekly_aggregate(&history, sim.nudge_start, &p.key, sim.study_weeks).rows;
        groups.insert(p.key.clone(), p.group);
        match p.arm {
            Arm::Control => control.insert(p.key.clone(), rows),
            Arm::Treatment => treatment.insert(p.key.clone(), rows),
        };
    }
    let flat = |m: &BTreeMap<String, Vec<WeeklyAggregate>>| m.values().flatten().cloned().collect::<Vec<_>>();
    let hypotheses = test_hypotheses(&flat(&control), &flat(&treatment), sim.study_weeks)
        .map_err(|e| PipelineError::stage(Stage::Report, e))?;
    let report = build_report(&ReportInputs {
        control: &control,
        treatment: &treatment,
        groups: &groups,
        events: &events,
        library: &resources.library,
        nudge_start: sim.nudge_start,
        weeks: sim.study_weeks,
        dose_window: config.pipeline.dose_window.into(),
    })
    .map_err(|e| PipelineError::stage(Stage::Report, e))?;

    Ok(ExperimentResult {
        cohorts,
        days,
        events,
        behavior,
        control,
        treatment,
        hypotheses,
        report,
        audit,
        control_events,
        snapshots,
        model: state.model,
        loss: state.loss,
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::stage(Stage::Report, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

/// Writes the run's files under `dir`:
/// `cohort.tsv`, `profiles.tsv`, `behavior.tsv`, `events.tsv`,
/// `aggregates.tsv`, `days.tsv`, `hypotheses.tsv`, `model.txt`, `loss.tsv`,
/// `graph/<day>.tsv` and `report/*.csv`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path, plots: bool) -> Result<(), PipelineError> {
    fs::create_dir_all(dir.join("graph")).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("cohort.tsv"), |w| result.cohorts.assignment().write_to(w))?;
    write_file(&dir.join("profiles.tsv"), |w| write_profiles(w, result.cohorts.profiles()))?;
    write_file(&dir.join("behavior.tsv"), |w| write_behavior(w, result.behavior.iter().cloned()))?;
    write_file(&dir.join("events.tsv"), |w| write_events(w, &result.events))?;
    write_file(&dir.join("aggregates.tsv"), |w| {
        write_aggregates(&mut *w, result.control.values().flatten())?;
        write_aggregates(w, result.treatment.values().flatten())
    })?;
    write_file(&dir.join("days.tsv"), |w| {
        writeln!(w, "{}", DayReport::HEADER)?;
        result.days.iter().try_for_each(|d| writeln!(w, "{}", d.to_line()))
    })?;
    write_file(&dir.join("hypotheses.tsv"), |w| {
        writeln!(w, "hypothesis\tt\tdf\tp\tsignificant")?;
        for (name, r) in [("h1_steps", result.hypotheses.h1_steps), ("h2_mvpa", result.hypotheses.h2_mvpa)] {
            writeln!(w, "{name}\t{:.6}\t{:.3}\t{:.6e}\t{}", r.statistic, r.degrees_of_freedom, r.p_value, u8::from(r.significant))?;
        }
        Ok(())
    })?;
    for s in &result.snapshots {
        let path = dir.join("graph").join(format!("{}.tsv", s.as_of));
        s.write_to(&path).map_err(|e| io_err(&path, e))?;
    }
    if let Some(m) = &result.model {
        let path = dir.join("model.txt");
        m.write_to(&path).map_err(|e| io_err(&path, e))?;
    }
    if let Some(l) = &result.loss {
        let path = dir.join("loss.tsv");
        l.write_to(&path).map_err(|e| io_err(&path, e))?;
    }
    emit_report(&result.report, &dir.join("report"), plots).map_err(|e| io_err(&dir.join("report"), e))?;
    Ok(())
}
