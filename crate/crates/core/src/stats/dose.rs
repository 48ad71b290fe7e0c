use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;

use chrono::Duration;

use crate::graph::Day;
use crate::ingest::{WeeklyAggregate, STUDY_WEEKS};
use crate::personalize::{EngagementEvent, EventKind};

use super::SampleSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DoseBucket {
    Zero,
    One,
    Two,
    ThreeOrMore,
}

impl DoseBucket {
    pub const ALL: [DoseBucket; 4] = [DoseBucket::Zero, DoseBucket::One, DoseBucket::Two, DoseBucket::ThreeOrMore];

    pub fn of(opens: u32) -> Self {
        match opens {
            0 => DoseBucket::Zero,
            1 => DoseBucket::One,
            2 => DoseBucket::Two,
            _ => DoseBucket::ThreeOrMore,
        }
    }
}

impl fmt::Display for DoseBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DoseBucket::Zero => "0",
            DoseBucket::One => "1",
            DoseBucket::Two => "2",
            DoseBucket::ThreeOrMore => ">=3",
        })
    }
}

/// Which steps value a participant contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DoseStepsWindow {
    /// Mean of the weekly mean daily steps over weeks 1 to 12.
    #[default]
    Weeks1To12,
    /// Week 12 alone.
    Week12Only,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoseInput {
    pub participant: String,
    pub opens: u32,
    pub steps: f64,
    pub week12_mvpa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseResponseRow {
    pub bucket: DoseBucket,
    pub n: u64,
    pub steps: SampleSummary,
    pub mvpa: SampleSummary,
}

/// Buckets participants by opens; empty buckets are left out.
pub fn dose_response_from_inputs(inputs: &[DoseInput]) -> Vec<DoseResponseRow> {
    let mut groups: BTreeMap<DoseBucket, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in inputs {
        let g = groups.entry(DoseBucket::of(i.opens)).or_default();
        g.0.push(i.steps);
        g.1.push(i.week12_mvpa);
    }
    groups
        .into_iter()
        .map(|(bucket, (s, m))| DoseResponseRow {
            bucket,
            n: s.len() as u64,
            steps: SampleSummary::from_values(&s),
            mvpa: SampleSummary::from_values(&m),
        })
        .collect()
}

/// Per-participant inputs for the nudged cohort, which is exactly the set
/// of participants in `aggregates`. Opens count accepted `Opened` events
/// on days of weeks 1 to 12.
pub fn dose_inputs<I>(
    events: I,
    aggregates: &BTreeMap<String, Vec<WeeklyAggregate>>,
    nudge_start: Day,
    window: DoseStepsWindow,
) -> Vec<DoseInput>
where
    I: IntoIterator,
    I::Item: Borrow<EngagementEvent>,
{
    let end = nudge_start + Duration::days(7 * STUDY_WEEKS as i64);
    let mut opens: BTreeMap<&str, u32> = aggregates.keys().map(|k| (k.as_str(), 0)).collect();
    for e in events {
        let e = e.borrow();
        if e.kind == EventKind::Opened && e.is_ok() && e.day() >= nudge_start && e.day() < end {
            if let Some(c) = opens.get_mut(e.participant.as_str()) {
                *c += 1;
            }
        }
    }
    aggregates
        .iter()
        .map(|(p, rows)| {
            let in_study: Vec<&WeeklyAggregate> = rows.iter().filter(|r| (1..=STUDY_WEEKS).contains(&r.week)).collect();
            let week12 = rows.iter().find(|r| r.week == STUDY_WEEKS);
            let steps = match window {
                DoseStepsWindow::Weeks1To12 if !in_study.is_empty() => {
                    in_study.iter().map(|r| r.mean_daily_steps).sum::<f64>() / in_study.len() as f64
                }
                DoseStepsWindow::Weeks1To12 => 0.0,
                DoseStepsWindow::Week12Only => week12.map_or(0.0, |r| r.mean_daily_steps),
            };
            DoseInput {
                participant: p.clone(),
                opens: opens[p.as_str()],
                steps,
                week12_mvpa: week12.map_or(0.0, |r| r.total_mvpa_minutes),
            }
        })
        .collect()
}

/// Dose-response table straight from the event log and weekly aggregates.
pub fn dose_response<I>(
    events: I,
    aggregates: &BTreeMap<String, Vec<WeeklyAggregate>>,
    nudge_start: Day,
    window: DoseStepsWindow,
) -> Vec<DoseResponseRow>
where
    I: IntoIterator,
    I::Item: Borrow<EngagementEvent>,
{
    dose_response_from_inputs(&dose_inputs(events, aggregates, nudge_start, window))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn start() -> Day {
        Day::from_ymd_opt(2023, 4, 3).unwrap()
    }

    fn aggs(n: usize) -> BTreeMap<String, Vec<WeeklyAggregate>> {
        (0..n)
            .map(|p| {
                let key = format!("p{p}");
                let rows = (0..=12)
                    .map(|w| WeeklyAggregate {
                        participant: key.clone(),
                        week: w,
                        mean_daily_steps: 1000.0 * p as f64 + w as f64,
                        total_mvpa_minutes: 10.0 * w as f64,
                    })
                    .collect();
                (key, rows)
            })
            .collect()
    }

    fn open(p: &str, day_offset: i64) -> EngagementEvent {
        let ts = (start() + Duration::days(day_offset)).and_hms_opt(12, 0, 0).unwrap();
        EngagementEvent::new(ts, p, "n1", EventKind::Opened)
    }

    #[test]
    fn nobody_opened() {
        let rows = dose_response(Vec::<EngagementEvent>::new(), &aggs(5), start(), DoseStepsWindow::Weeks1To12);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].bucket, DoseBucket::Zero);
        assert_eq!(rows[0].n, 5);
    }

    #[test]
    fn buckets_partition_and_use_study_weeks() {
        let events = vec![
            open("p1", 0),
            open("p2", 3),
            open("p2", 10),
            open("p3", 1),
            open("p3", 2),
            open("p3", 83),
            open("p3", 84), // after week 12
            open("p0", -1), // week 0
        ];
        let rows = dose_response(&events, &aggs(4), start(), DoseStepsWindow::Weeks1To12);
        let ns: Vec<_> = rows.iter().map(|r| (r.bucket, r.n)).collect();
        assert_eq!(
            ns,
            vec![(DoseBucket::Zero, 1), (DoseBucket::One, 1), (DoseBucket::Two, 1), (DoseBucket::ThreeOrMore, 1)]
        );
        assert_eq!(rows.iter().map(|r| r.n).sum::<u64>(), 4);
        // mean of weeks 1..=12 of (1000 p + w) is 1000 p + 6.5
        assert_eq!(rows[1].steps.mean, 1006.5);
        assert_eq!(rows[3].mvpa.mean, 120.0);
        let rows = dose_response(&events, &aggs(4), start(), DoseStepsWindow::Week12Only);
        assert_eq!(rows[1].steps.mean, 1012.0);
    }
}
