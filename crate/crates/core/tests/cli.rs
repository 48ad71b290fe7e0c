use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nudgerank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nudgerank")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, n: &str) {
    let o = nudgerank(&["simulate", "--out", dir.to_str().unwrap(), "--n-per-arm", n, "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(code(&nudgerank(&["no-such-command"])), 1);
    let o = nudgerank(&["--config", "/definitely/missing.toml", "simulate", "--out", "/tmp/x"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&nudgerank(&["--help"])), 0);
}

#[test]
fn invalid_config_value_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[constraints]\ndaily_budget = 0\n").unwrap();
    let o = nudgerank(&["--config", cfg.to_str().unwrap(), "simulate", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_then_audit_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, "40");
    for f in ["cohort.tsv", "events.tsv", "aggregates.tsv", "hypotheses.tsv", "model.txt", "report/weekly_steps_all.csv"] {
        assert!(sim.join(f).exists(), "missing {f}");
    }
    let s = |f: &str| sim.join(f).to_str().unwrap().to_owned();

    let o = nudgerank(&["audit", "--events", &s("events.tsv"), "--cohort", &s("cohort.tsv")]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("violations: 0"));

    let rep = dir.path().join("rep");
    let o = nudgerank(&[
        "report", "--events", &s("events.tsv"), "--aggregates", &s("aggregates.tsv"),
        "--cohort", &s("cohort.tsv"), "--out", rep.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // Recomputed tables match the ones written by simulate.
    for f in ["weekly_steps_all.csv", "dose_response_group2.csv", "engagement_all.csv"] {
        assert_eq!(fs::read(rep.join(f)).unwrap(), fs::read(sim.join("report").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn audit_flags_control_participants_and_rule_breaks() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, "20");
    let events = fs::read_to_string(sim.join("events.tsv")).unwrap();
    let cohort = fs::read_to_string(sim.join("cohort.tsv")).unwrap();
    let control = cohort.lines().find(|l| l.contains("\tcontrol\t")).unwrap().split('\t').next().unwrap();
    let first = events.lines().find(|l| l.contains("\tSent\t")).expect("a send");
    // Same send twice for a control participant: recency break plus a control hit.
    let forged = first.replacen(first.split('\t').nth(1).unwrap(), control, 1);
    let path = dir.path().join("forged.tsv");
    fs::write(&path, format!("{events}{forged}\n{forged}\n")).unwrap();
    let o = nudgerank(&["audit", "--events", path.to_str().unwrap(), "--cohort", sim.join("cohort.tsv").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("control\t")), "{out}");
}

#[test]
fn staged_workflow_on_a_workspace() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, "15");
    let pre = dir.path().join("pre.tsv");
    let behavior = fs::read_to_string(sim.join("behavior.tsv")).unwrap();
    let kept: String = behavior.lines().filter(|l| l.split('\t').nth(1).unwrap() < "2023-04-03").map(|l| format!("{l}\n")).collect();
    fs::write(&pre, kept).unwrap();
    let ws = dir.path().join("ws");
    let w = ws.to_str().unwrap();
    let day = "2023-04-03";

    let o = nudgerank(&["ingest", "--state", w, "--profiles", sim.join("profiles.tsv").to_str().unwrap(), "--behavior", pre.to_str().unwrap(), "--day", day]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("participants added: 30"));
    for cmd in ["derive", "train", "rank"] {
        let o = nudgerank(&[cmd, "--state", w, "--day", day]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(ws.join("ranked").join(format!("{day}.tsv")).exists());
    let o = nudgerank(&["send", "--state", w, "--day", day]);
    assert!(stdout(&o).contains("delivered: 30,"), "{}", stdout(&o));
    // Re-running the send does not deliver twice.
    let o = nudgerank(&["send", "--state", w, "--day", day]);
    assert!(stdout(&o).contains("delivered: 0,"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(ws.join("outbox.tsv")).unwrap().lines().count(), 30);

    // Records on or after the processing day are a stage failure.
    let o = nudgerank(&["ingest", "--state", w, "--behavior", sim.join("behavior.tsv").to_str().unwrap(), "--day", day]);
    assert_eq!(code(&o), 3);

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "not an event\n").unwrap();
    let o = nudgerank(&["feedback", "--state", w, "--events", bad.to_str().unwrap(), "--day", day]);
    assert_eq!(code(&o), 2);
}
