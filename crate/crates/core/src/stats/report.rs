//! CSV and SVG report files.
//!
//! Weekly tables: `week, control_mean, control_sd, treatment_mean,
//! treatment_sd, difference, pct_difference, t, p`, with `pct_difference`
//! in percent. Dose tables: `opened, n, steps_mean, steps_sd, mvpa_mean,
//! mvpa_sd`. Engagement tables: `group, sent, opened, opened_per_sent,
//! useful, useful_per_opened, not_useful, not_useful_per_opened`, with rates
//! in percent and empty when undefined. The last engagement row is `Total`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use std::collections::BTreeMap;

use crate::candidates::{Goal, NudgeLibrary};
use crate::graph::Day;
use crate::ingest::WeeklyAggregate;
use crate::personalize::EngagementEvent;

use super::{
    dose_response, engagement_table, weekly_comparison, DoseResponseRow, DoseStepsWindow, EngagementCounts,
    EngagementTable, GroupBy, Metric, StatsError, WeekRow,
};

#[derive(Debug, Clone, PartialEq)]
pub enum ReportTable {
    Weekly { metric: Metric, rows: Vec<WeekRow> },
    Dose(Vec<DoseResponseRow>),
    Engagement(EngagementTable),
}

/// Named tables; each becomes `<name>.csv`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub tables: Vec<(String, ReportTable)>,
}

impl Report {
    /// The twelve appendix-style tables, empty: weekly steps and MVPA for
    /// all participants and each group, dose response for all and each
    /// group, and engagement for all, steps and MVPA nudges.
    pub fn appendix_layout() -> Self {
        let mut tables = Vec::new();
        for (metric, m) in [(Metric::Steps, "steps"), (Metric::Mvpa, "mvpa")] {
            for scope in ["all", "group1", "group2"] {
                tables.push((format!("weekly_{m}_{scope}"), ReportTable::Weekly { metric, rows: Vec::new() }));
            }
        }
        for scope in ["all", "group1", "group2"] {
            tables.push((format!("dose_response_{scope}"), ReportTable::Dose(Vec::new())));
        }
        for scope in ["all", "steps", "mvpa"] {
            tables.push((format!("engagement_{scope}"), ReportTable::Engagement(EngagementTable::default())));
        }
        Self { tables }
    }

    pub fn set(&mut self, name: &str, table: ReportTable) {
        match self.tables.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = table,
            None => self.tables.push((name.to_string(), table)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ReportTable> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn fixed(x: f64, decimals: usize) -> String {
    format!("{x:.decimals$}")
}

fn sci(p: f64) -> String {
    format!("{p:.3e}")
}

fn rate(r: Option<f64>) -> String {
    r.map(|r| format!("{:.1}", r * 100.0)).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn engagement_record(label: &str, c: &EngagementCounts) -> Vec<String> {
    vec![
        label.to_string(),
        c.sent.to_string(),
        c.opened.to_string(),
        rate(c.open_rate()),
        c.useful.to_string(),
        rate(c.useful_rate()),
        c.not_useful.to_string(),
        rate(c.not_useful_rate()),
    ]
}

fn write_table(path: &Path, table: &ReportTable) -> Result<(), StatsError> {
    match table {
        ReportTable::Weekly { metric, rows } => {
            let d = metric.display_decimals();
            write_csv(
                path,
                &["week", "control_mean", "control_sd", "treatment_mean", "treatment_sd", "difference", "pct_difference", "t", "p"],
                rows.iter()
                    .map(|r| {
                        vec![
                            r.week.to_string(),
                            fixed(r.control.mean, d),
                            fixed(r.control.sd, d),
                            fixed(r.treatment.mean, d),
                            fixed(r.treatment.sd, d),
                            fixed(r.difference, d),
                            fixed(r.pct_difference * 100.0, 2),
                            fixed(r.test.statistic, 3),
                            sci(r.test.p_value),
                        ]
                    })
                    .collect(),
            )
        }
        ReportTable::Dose(rows) => write_csv(
            path,
            &["opened", "n", "steps_mean", "steps_sd", "mvpa_mean", "mvpa_sd"],
            rows.iter()
                .map(|r| {
                    vec![
                        r.bucket.to_string(),
                        r.n.to_string(),
                        fixed(r.steps.mean, 2),
                        fixed(r.steps.sd, 2),
                        fixed(r.mvpa.mean, 2),
                        fixed(r.mvpa.sd, 2),
                    ]
                })
                .collect(),
        ),
        ReportTable::Engagement(t) => {
            let mut rows: Vec<Vec<String>> = t.rows.iter().map(|r| engagement_record(&r.label, &r.counts)).collect();
            rows.push(engagement_record("Total", &t.total));
            write_csv(
                path,
                &["group", "sent", "opened", "opened_per_sent", "useful", "useful_per_opened", "not_useful", "not_useful_per_opened"],
                rows,
            )
        }
    }
}

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 48.0;

fn svg_frame(title: &str, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{PAD}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{y0}\" stroke=\"black\"/>\n{body}</svg>\n",
        y0 = H - PAD,
        x1 = W - PAD / 2.0,
    )
}

/// Line chart of the weekly percent difference.
fn weekly_svg(title: &str, rows: &[WeekRow]) -> String {
    let mut body = String::new();
    if !rows.is_empty() {
        let ys: Vec<f64> = rows.iter().map(|r| r.pct_difference * 100.0).collect();
        let lo = ys.iter().cloned().fold(0.0, f64::min);
        let hi = ys.iter().cloned().fold(0.0, f64::max).max(lo + 1e-9);
        let max_w = rows.iter().map(|r| r.week).max().unwrap_or(0).max(1) as f64;
        let px = |w: u32| PAD + (W - 1.5 * PAD) * w as f64 / max_w;
        let py = |y: f64| H - PAD - (H - 2.0 * PAD) * (y - lo) / (hi - lo);
        let pts: Vec<String> = rows.iter().zip(&ys).map(|(r, y)| format!("{:.1},{:.1}", px(r.week), py(*y))).collect();
        let _ = writeln!(body, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>", pts.join(" "));
        for (r, y) in rows.iter().zip(&ys) {
            let fill = if r.test.significant { "steelblue" } else { "white" };
            let _ = writeln!(body, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{fill}\" stroke=\"steelblue\"/>", px(r.week), py(*y));
        }
        let _ = writeln!(body, "<text x=\"4\" y=\"{:.1}\" font-size=\"10\">{hi:.2}%</text>", py(hi));
        let _ = writeln!(body, "<text x=\"4\" y=\"{:.1}\" font-size=\"10\">{lo:.2}%</text>", py(lo));
    }
    svg_frame(title, &body)
}

fn bars_svg(title: &str, bars: &[(String, f64)], unit: &str) -> String {
    let mut body = String::new();
    let hi = bars.iter().map(|b| b.1).fold(0.0, f64::max).max(1e-9);
    let slot = (W - 1.5 * PAD) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = (H - 2.0 * PAD) * v.max(0.0) / hi;
        let x = PAD + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            body,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"steelblue\"/>",
            H - PAD - h,
            slot * 0.7
        );
        let _ = writeln!(body, "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"10\">{label}</text>", H - PAD + 14.0);
        let _ = writeln!(body, "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"10\">{v:.1}{unit}</text>", H - PAD - h - 4.0);
    }
    svg_frame(title, &body)
}

fn table_svg(name: &str, table: &ReportTable) -> String {
    match table {
        ReportTable::Weekly { rows, .. } => weekly_svg(&format!("{name}: % difference by week"), rows),
        ReportTable::Dose(rows) => bars_svg(
            &format!("{name}: mean daily steps by nudges opened"),
            &rows.iter().map(|r| (r.bucket.to_string(), r.steps.mean)).collect::<Vec<_>>(),
            "",
        ),
        ReportTable::Engagement(t) => bars_svg(
            &format!("{name}: open rate"),
            &t.rows.iter().map(|r| (r.label.clone(), r.counts.open_rate().unwrap_or(0.0) * 100.0)).collect::<Vec<_>>(),
            "%",
        ),
    }
}

/// Writes `<name>.csv` for every table, plus `<name>.svg` when `plots` is
/// set. Returns the written paths in table order.
pub fn emit_report(report: &Report, dir: &Path, plots: bool) -> Result<Vec<PathBuf>, StatsError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, table) in &report.tables {
        let path = dir.join(format!("{name}.csv"));
        write_table(&path, table)?;
        written.push(path);
        if plots {
            let path = dir.join(format!("{name}.svg"));
            fs::write(&path, table_svg(name, table))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Everything the appendix tables are computed from.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub control: &'a BTreeMap<String, Vec<WeeklyAggregate>>,
    pub treatment: &'a BTreeMap<String, Vec<WeeklyAggregate>>,
    /// Program group (1 or 2) per participant; others only count in `all`.
    pub groups: &'a BTreeMap<String, u8>,
    pub events: &'a [EngagementEvent],
    pub library: &'a NudgeLibrary,
    pub nudge_start: Day,
    pub weeks: u32,
    pub dose_window: DoseStepsWindow,
}

/// Fills the appendix layout. Dose response covers the treatment arm.
pub fn build_report(inputs: &ReportInputs<'_>) -> Result<Report, StatsError> {
    let mut report = Report::appendix_layout();
    for (scope, group) in [("all", None), ("group1", Some(1u8)), ("group2", Some(2))] {
        let keep = |m: &BTreeMap<String, Vec<WeeklyAggregate>>| -> BTreeMap<String, Vec<WeeklyAggregate>> {
            m.iter()
                .filter(|(k, _)| group.map_or(true, |g| inputs.groups.get(*k) == Some(&g)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        };
        let (c, t) = (keep(inputs.control), keep(inputs.treatment));
        let flat = |m: &BTreeMap<String, Vec<WeeklyAggregate>>| m.values().flatten().cloned().collect::<Vec<_>>();
        let (cf, tf) = (flat(&c), flat(&t));
        for metric in [Metric::Steps, Metric::Mvpa] {
            let rows = weekly_comparison(&cf, &tf, metric, inputs.weeks);
            report.set(&format!("weekly_{}_{scope}", metric.as_str()), ReportTable::Weekly { metric, rows });
        }
        let dose = dose_response(inputs.events, &t, inputs.nudge_start, inputs.dose_window);
        report.set(&format!("dose_response_{scope}"), ReportTable::Dose(dose));
    }
    for (scope, goal) in [("all", None), ("steps", Some(Goal::Steps)), ("mvpa", Some(Goal::Mvpa))] {
        let table = engagement_table(inputs.events, inputs.library, goal, GroupBy::Technique)?;
        report.set(&format!("engagement_{scope}"), ReportTable::Engagement(table));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::SampleSummary;

    fn sample_report() -> Report {
        let mut r = Report::appendix_layout();
        let row = WeekRow::from_summaries(8, SampleSummary::new(3678.2, 4265.6, 84903), SampleSummary::new(3783.2, 5328.4, 84764)).unwrap();
        r.set("weekly_steps_all", ReportTable::Weekly { metric: Metric::Steps, rows: vec![row] });
        r
    }

    #[test]
    fn empty_layout_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_report(&Report::appendix_layout(), dir.path(), false).unwrap();
        assert_eq!(paths.len(), 12);
        for p in &paths {
            let text = fs::read_to_string(p).unwrap();
            assert_eq!(text.lines().count(), if p.to_string_lossy().contains("engagement") { 2 } else { 1 });
        }
    }

    #[test]
    fn weekly_row_formatting_and_rerun_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&sample_report(), dir.path(), true).unwrap();
        let first = fs::read(dir.path().join("weekly_steps_all.csv")).unwrap();
        let svg = fs::read(dir.path().join("weekly_steps_all.svg")).unwrap();
        let text = String::from_utf8(first.clone()).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with("8,3678.2,4265.6,3783.2,5328.4,105.0,2.85,4.480,3.7"), "{line}");
        assert!(line.ends_with("e-6"));
        emit_report(&sample_report(), dir.path(), true).unwrap();
        assert_eq!(fs::read(dir.path().join("weekly_steps_all.csv")).unwrap(), first);
        assert_eq!(fs::read(dir.path().join("weekly_steps_all.svg")).unwrap(), svg);
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, "x").unwrap();
        assert!(emit_report(&Report::appendix_layout(), &file.join("sub"), false).is_err());
    }
}
