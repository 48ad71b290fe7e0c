use chrono::Duration;

use crate::graph::Day;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::records::{tsv_reader, BehaviorHistory};
use super::IngestError;

/// Weekly behavior for one participant. Week `w` covers the seven days
/// `[start + 7(w - 1), start + 7w)`, so week 0 is the week just before the
/// first nudge.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyAggregate {
    pub participant: String,
    pub week: u32,
    pub mean_daily_steps: f64,
    pub total_mvpa_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeeklyAggregates {
    pub rows: Vec<WeeklyAggregate>,
    /// Set when the history ends before the last requested week.
    pub truncated: bool,
}

pub const STUDY_WEEKS: u32 = 12;

/// First day of week `week` relative to `nudge_start`.
pub fn week_start(nudge_start: Day, week: u32) -> Day {
    nudge_start + Duration::days(7 * (week as i64 - 1))
}

/// Week index of `day`, or `None` outside weeks 0..=`weeks`.
pub fn week_of(nudge_start: Day, day: Day, weeks: u32) -> Option<u32> {
    let offset = (day - nudge_start).num_days() + 7;
    if offset < 0 {
        return None;
    }
    let w = (offset / 7) as u32;
    (w <= weeks).then_some(w)
}

/// Aggregates weeks `0..=weeks`. Unsynced or missing days contribute zero.
/// Weeks that end after the last recorded day are left out and flagged.
pub fn weekly_aggregate(
    history: &BehaviorHistory,
    nudge_start: Day,
    participant: &str,
    weeks: u32,
) -> WeeklyAggregates {
    let mut out = WeeklyAggregates::default();
    let Some(last) = history.last_day() else {
        out.truncated = true;
        return out;
    };
    let days = history.participant(participant);
    for week in 0..=weeks {
        let start = week_start(nudge_start, week);
        let end = start + Duration::days(7);
        if end - Duration::days(1) > last {
            out.truncated = true;
            break;
        }
        let (mut steps, mut mvpa) = (0.0, 0.0);
        if let Some(days) = days {
            for (_, a) in days.range(start..end).filter(|(_, a)| a.synced) {
                steps += a.steps as f64;
                mvpa += a.mvpa_minutes;
            }
        }
        out.rows.push(WeeklyAggregate {
            participant: participant.to_string(),
            week,
            mean_daily_steps: steps / 7.0,
            total_mvpa_minutes: mvpa,
        });
    }
    out
}

/// Reads `participant, week, mean_daily_steps, total_mvpa_minutes` rows,
/// grouped by participant.
pub fn read_aggregates<R: Read>(r: R) -> Result<BTreeMap<String, Vec<WeeklyAggregate>>, IngestError> {
    let mut out: BTreeMap<String, Vec<WeeklyAggregate>> = BTreeMap::new();
    for rec in tsv_reader(r).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| IngestError::Parse { line, message };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", rec.len())));
        }
        let week = rec[1].parse().map_err(|_| bad(format!("bad week `{}`", &rec[1])))?;
        let num = |i: usize| -> Result<f64, IngestError> {
            rec[i].parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).ok_or_else(|| bad(format!("bad value `{}`", &rec[i])))
        };
        let row = WeeklyAggregate { participant: rec[0].to_string(), week, mean_daily_steps: num(2)?, total_mvpa_minutes: num(3)? };
        let rows = out.entry(row.participant.clone()).or_default();
        if rows.iter().any(|r| r.week == week) {
            return Err(bad(format!("duplicate week {week} for `{}`", row.participant)));
        }
        rows.push(row);
    }
    for rows in out.values_mut() {
        rows.sort_by_key(|r| r.week);
    }
    Ok(out)
}

pub fn write_aggregates<'a, W: Write>(mut w: W, rows: impl IntoIterator<Item = &'a WeeklyAggregate>) -> std::io::Result<()> {
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{}", r.participant, r.week, r.mean_daily_steps, r.total_mvpa_minutes)?;
    }
    Ok(())
}
