use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nudgerank::constraints::audit_events;
use nudgerank::graph::Day;
use nudgerank::ingest::{read_aggregates, read_behavior, read_profiles};
use nudgerank::personalize::{read_events, FileSink};
use nudgerank::pipeline::{run_experiment, write_outputs, Config, PipelineError, Resources, Workspace};
use nudgerank::sim::{Arm, CohortAssignment};
use nudgerank::stats::{build_report, emit_report, test_hypotheses, ReportInputs};

#[derive(Parser)]
#[command(name = "nudgerank", version, about = "Knowledge-graph nudge ranking, delivery and evaluation")]
struct Cli {
    /// TOML config; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add participant profiles and daily behavior records to a workspace.
    Ingest {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        behavior: Option<PathBuf>,
        /// Processing day; records must be dated before it.
        #[arg(long)]
        day: Day,
    },
    /// Recompute markers and segments for a day.
    Derive {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        day: Day,
    },
    /// Train the ranker, warm-starting from an existing model.
    Train {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        day: Day,
        /// Ignore any saved model and train from scratch.
        #[arg(long)]
        fresh: bool,
    },
    /// Generate and rank candidates; writes ranked/<day>.tsv.
    Rank {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        day: Day,
        /// Seeded random order instead of the model.
        #[arg(long)]
        random: bool,
    },
    /// Filter, render and deliver the day's ranked nudges to outbox.tsv.
    Send {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        day: Day,
    },
    /// Ingest engagement events into the graph and the event log.
    Feedback {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        day: Day,
    },
    /// Weekly, dose-response and engagement tables plus the study hypotheses.
    Report {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        aggregates: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG chart per table.
        #[arg(long)]
        plots: bool,
    },
    /// Run a complete simulated experiment and write every output.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Overrides sim.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides sim.n_per_arm.
        #[arg(long)]
        n_per_arm: Option<usize>,
        #[arg(long)]
        plots: bool,
    },
    /// Check an event log against the contact rules and, with a cohort file,
    /// that no event names a control participant.
    Audit {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
}

enum Failure {
    Pipeline(PipelineError),
    AuditFailed(usize),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn data(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

fn reader(path: &Path) -> Result<fs::File, PipelineError> {
    fs::File::open(path).map_err(|e| data(path, e))
}

fn load_config(path: Option<&Path>) -> Result<(Config, Resources), PipelineError> {
    let config = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let resources = config.resources()?;
    Ok((config, resources))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (mut config, resources) = load_config(cli.config.as_deref())?;
    let out = std::io::stdout();
    let mut out = out.lock();
    let say = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cli.command {
        Command::Ingest { state, profiles, behavior, day } => {
            let ws = Workspace::new(&state);
            let mut s = ws.load(&config, &resources, day)?;
            if let Some(p) = profiles {
                let profiles = read_profiles(reader(&p)?).map_err(|e| data(&p, e))?;
                let added = s.add_profiles(&resources, profiles, day);
                say(&mut out, format!("participants added: {added}"));
            }
            if let Some(b) = behavior {
                let records = read_behavior(reader(&b)?).map_err(|e| data(&b, e))?;
                let (ingested, skipped) = s.ingest_records(&records, day)?;
                say(&mut out, format!("records ingested: {ingested}, skipped (unknown participant): {skipped}"));
            }
            ws.save(&s, day)?;
        }
        Command::Derive { state, day } => {
            let ws = Workspace::new(&state);
            let mut s = ws.load(&config, &resources, day)?;
            let n = s.derive(&resources, day)?;
            ws.save(&s, day)?;
            say(&mut out, format!("graph mutations: {n}"));
        }
        Command::Train { state, day, fresh } => {
            let ws = Workspace::new(&state);
            let mut s = ws.load(&config, &resources, day)?;
            if fresh {
                s.model = None;
            }
            s.train(&config, day)?;
            ws.save(&s, day)?;
            let last = s.loss.as_ref().and_then(|l| l.epochs.last()).map_or(f64::NAN, |e| e.total());
            say(&mut out, format!("trained; final loss {last:.6}"));
        }
        Command::Rank { state, day, random } => {
            config.pipeline.random_rank |= random;
            let ws = Workspace::new(&state);
            let s = ws.load(&config, &resources, day)?;
            let (lists, candidates) = s.rank_all(&config, &resources, day)?;
            ws.write_ranked(day, &lists)?;
            say(&mut out, format!("participants ranked: {}, candidates: {candidates}", lists.len()));
        }
        Command::Send { state, day } => {
            let ws = Workspace::new(&state);
            let mut s = ws.load(&config, &resources, day)?;
            let ranked = ws.read_ranked(day)?;
            let mut sink = FileSink::new(ws.outbox());
            let c = s.send(&config, &resources, day, &ranked, &mut sink)?;
            ws.save(&s, day)?;
            say(
                &mut out,
                format!(
                    "delivered: {}, failed: {}, already sent: {}, dropped budget/recency/rating: {}/{}/{}, render failures: {}",
                    c.delivered, c.delivery_failed, c.already_sent, c.dropped_budget, c.dropped_recency, c.dropped_rating, c.render_failed
                ),
            );
        }
        Command::Feedback { state, events, day } => {
            let ws = Workspace::new(&state);
            let mut s = ws.load(&config, &resources, day)?;
            let events = read_events(reader(&events)?).map_err(|e| data(&events, e))?;
            let (accepted, rejected) = s.apply_events(&events);
            ws.save(&s, day)?;
            say(&mut out, format!("events accepted: {accepted}, rejected: {rejected}"));
        }
        Command::Report { events, aggregates, cohort, out: dir, plots } => {
            let events = read_events(reader(&events)?).map_err(|e| data(&events, e))?;
            let aggs = read_aggregates(reader(&aggregates)?).map_err(|e| data(&aggregates, e))?;
            let text = fs::read(&cohort).map_err(|e| data(&cohort, e))?;
            let assignment = CohortAssignment::read_from(&text[..]).map_err(|e| data(&cohort, e))?;
            if aggs.keys().any(|k| assignment.arm(k).is_none()) {
                return Err(PipelineError::Data("aggregates name a participant missing from the cohort file".into()).into());
            }
            let split = |arm| -> std::collections::BTreeMap<_, _> {
                aggs.iter().filter(|(k, _)| assignment.arm(k) == Some(arm)).map(|(k, v)| (k.clone(), v.clone())).collect()
            };
            let (control, treatment) = (split(Arm::Control), split(Arm::Treatment));
            let groups = assignment.rows.iter().map(|(k, (_, g))| (k.clone(), *g)).collect();
            let weeks = config.sim.study_weeks;
            let report = build_report(&ReportInputs {
                control: &control,
                treatment: &treatment,
                groups: &groups,
                events: &events,
                library: &resources.library,
                nudge_start: config.sim.nudge_start,
                weeks,
                dose_window: config.pipeline.dose_window.into(),
            })
            .map_err(|e| PipelineError::Data(e.to_string()))?;
            emit_report(&report, &dir, plots).map_err(|e| data(&dir, e))?;
            let flat = |m: &std::collections::BTreeMap<String, Vec<_>>| m.values().flatten().cloned().collect::<Vec<_>>();
            match test_hypotheses(&flat(&control), &flat(&treatment), weeks) {
                Ok(h) => {
                    say(&mut out, format!("H1 steps: t = {:.3}, p = {:.3e}", h.h1_steps.statistic, h.h1_steps.p_value));
                    say(&mut out, format!("H2 mvpa:  t = {:.3}, p = {:.3e}", h.h2_mvpa.statistic, h.h2_mvpa.p_value));
                }
                Err(e) => log::warn!("hypothesis tests skipped: {e}"),
            }
            say(&mut out, format!("tables written to {}", dir.display()));
        }
        Command::Simulate { out: dir, seed, n_per_arm, plots } => {
            if let Some(s) = seed {
                config.sim.seed = s;
            }
            if let Some(n) = n_per_arm {
                config.sim.n_per_arm = n;
            }
            let result = run_experiment(&config)?;
            write_outputs(&result, &dir, plots)?;
            let h = &result.hypotheses;
            say(&mut out, format!("cohort matching attempts: {}", result.cohorts.attempts));
            say(&mut out, format!("H1 steps: t = {:.3}, p = {:.3e}", h.h1_steps.statistic, h.h1_steps.p_value));
            say(&mut out, format!("H2 mvpa:  t = {:.3}, p = {:.3e}", h.h2_mvpa.statistic, h.h2_mvpa.p_value));
            say(&mut out, format!("audit violations: {}, control events: {}", result.audit.violations.len(), result.control_events));
            say(&mut out, format!("outputs written to {}", dir.display()));
        }
        Command::Audit { events, cohort } => {
            let events = read_events(reader(&events)?).map_err(|e| data(&events, e))?;
            let audit = audit_events(&events, &config.constraints);
            for v in &audit.violations {
                say(&mut out, format!("{}\t{}\t{}\t{}", v.rule.as_str(), v.participant, v.nudge, v.day));
            }
            let mut bad = audit.violations.len();
            if let Some(c) = cohort {
                let text = fs::read(&c).map_err(|e| data(&c, e))?;
                let assignment = CohortAssignment::read_from(&text[..]).map_err(|e| data(&c, e))?;
                for e in events.iter().filter(|e| assignment.arm(&e.participant) != Some(Arm::Treatment)) {
                    say(&mut out, format!("control\t{}\t{}\t{}", e.participant, e.nudge, e.day()));
                    bad += 1;
                }
            }
            say(&mut out, format!("sends checked: {}, violations: {bad}", audit.sends_checked));
            if bad > 0 {
                return Err(Failure::AuditFailed(bad));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::AuditFailed(n)) => {
            eprintln!("audit failed: {n} violation(s)");
            ExitCode::from(3)
        }
    }
}
