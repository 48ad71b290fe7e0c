use std::borrow::Borrow;
use std::collections::BTreeMap;

use crate::candidates::{Goal, NudgeLibrary, Technique};
use crate::personalize::{EngagementEvent, EventKind};

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EngagementCounts {
    pub sent: u64,
    pub opened: u64,
    pub useful: u64,
    pub not_useful: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EngagementCounts {
    pub fn open_rate(&self) -> Option<f64> {
        ratio(self.opened, self.sent)
    }

    pub fn useful_rate(&self) -> Option<f64> {
        ratio(self.useful, self.opened)
    }

    pub fn not_useful_rate(&self) -> Option<f64> {
        ratio(self.not_useful, self.opened)
    }

    fn add(&mut self, kind: EventKind) {
        match kind {
            EventKind::Sent => self.sent += 1,
            EventKind::Opened => self.opened += 1,
            EventKind::RatedUseful => self.useful += 1,
            EventKind::RatedNotUseful => self.not_useful += 1,
        }
    }

    fn merge(&mut self, o: &EngagementCounts) {
        self.sent += o.sent;
        self.opened += o.opened;
        self.useful += o.useful;
        self.not_useful += o.not_useful;
    }

    pub fn is_funnel_consistent(&self) -> bool {
        self.opened <= self.sent && self.useful + self.not_useful <= self.opened
    }
}

/// Percentage at 0.1% resolution, or `n/a` when undefined.
pub fn format_rate(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{:.1}%", r * 100.0),
        None => "n/a".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Technique,
    Goal,
    GoalAndTechnique,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngagementRow {
    pub label: String,
    pub counts: EngagementCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EngagementTable {
    pub rows: Vec<EngagementRow>,
    pub total: EngagementCounts,
}

/// Funnel counts per group. Only delivered sends and accepted engagement
/// (status `ok`) count. `goal` restricts the table to one behavior goal.
/// Every group appears, with zero counts if it saw no events.
pub fn engagement_table<I>(
    events: I,
    library: &NudgeLibrary,
    goal: Option<Goal>,
    by: GroupBy,
) -> Result<EngagementTable, StatsError>
where
    I: IntoIterator,
    I::Item: Borrow<EngagementEvent>,
{
    let label = |g: Goal, t: Technique| match by {
        GroupBy::Technique => t.as_str().to_string(),
        GroupBy::Goal => g.as_str().to_string(),
        GroupBy::GoalAndTechnique => format!("{} / {}", g.as_str(), t.as_str()),
    };
    let goals: Vec<Goal> = Goal::ALL.into_iter().filter(|g| goal.map_or(true, |x| x == *g)).collect();
    let mut order: Vec<String> = Vec::new();
    for g in &goals {
        for t in Technique::ALL {
            let l = label(*g, t);
            if !order.contains(&l) {
                order.push(l);
            }
        }
    }
    // nudge key -> group index, resolved once
    let mut group_of: BTreeMap<&str, Option<usize>> = BTreeMap::new();
    for n in library.iter() {
        let idx = goals
            .contains(&n.goal)
            .then(|| order.iter().position(|l| *l == label(n.goal, n.technique)))
            .flatten();
        group_of.insert(n.key.as_str(), idx);
    }
    let mut counts = vec![EngagementCounts::default(); order.len()];
    for e in events {
        let e = e.borrow();
        if !e.is_ok() {
            continue;
        }
        match group_of.get(e.nudge.as_str()) {
            Some(Some(i)) => counts[*i].add(e.kind),
            Some(None) => {}
            None => return Err(StatsError::UnknownNudge(e.nudge.clone())),
        }
    }
    let mut total = EngagementCounts::default();
    for c in &counts {
        total.merge(c);
    }
    Ok(EngagementTable {
        rows: order
            .into_iter()
            .zip(counts)
            .map(|(label, counts)| EngagementRow { label, counts })
            .collect(),
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Day;

    fn ev(n: &str, kind: EventKind) -> EngagementEvent {
        let ts = Day::from_ymd_opt(2023, 4, 3).unwrap().and_hms_opt(9, 0, 0).unwrap();
        EngagementEvent::new(ts, "p1", n, kind)
    }

    fn lib() -> NudgeLibrary {
        NudgeLibrary::parse(
            "a\tSteps\tFraming\t-\t-\tx\nb\tMVPA\tReminder\t-\t-\ty\nc\tMVPA\tFraming\t-\t-\tz\n",
        )
        .unwrap()
    }

    #[test]
    fn empty_log_has_undefined_rates() {
        let t = engagement_table(Vec::<EngagementEvent>::new(), &lib(), None, GroupBy::Technique).unwrap();
        assert_eq!(t.total, EngagementCounts::default());
        assert_eq!(t.total.open_rate(), None);
        assert_eq!(format_rate(t.total.useful_rate()), "n/a");
        assert_eq!(t.rows.len(), 4);
    }

    #[test]
    fn planted_counts_reproduce() {
        let mut events = Vec::new();
        for (n, sent, opened, useful, not_useful) in [("a", 20, 5, 2, 1), ("b", 10, 4, 1, 0), ("c", 8, 2, 0, 2)] {
            events.extend((0..sent).map(|_| ev(n, EventKind::Sent)));
            events.extend((0..opened).map(|_| ev(n, EventKind::Opened)));
            events.extend((0..useful).map(|_| ev(n, EventKind::RatedUseful)));
            events.extend((0..not_useful).map(|_| ev(n, EventKind::RatedNotUseful)));
        }
        let mut failed = ev("a", EventKind::Sent);
        failed.status = crate::personalize::EventStatus::Failed;
        events.push(failed);

        let t = engagement_table(&events, &lib(), None, GroupBy::Technique).unwrap();
        let framing = &t.rows[0];
        assert_eq!(framing.label, "Framing");
        assert_eq!(framing.counts, EngagementCounts { sent: 28, opened: 7, useful: 2, not_useful: 3 });
        assert_eq!(t.total.sent, 38);
        assert!(t.total.is_funnel_consistent());

        let t = engagement_table(&events, &lib(), Some(Goal::Mvpa), GroupBy::Technique).unwrap();
        assert_eq!(t.total, EngagementCounts { sent: 18, opened: 6, useful: 1, not_useful: 2 });
        assert_eq!(format_rate(t.total.open_rate()), "33.3%");

        let t = engagement_table(&events, &lib(), None, GroupBy::Goal).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), vec!["Steps", "MVPA"]);
        assert_eq!(t.rows[1].counts.sent, 18);

        assert!(matches!(
            engagement_table([ev("zz", EventKind::Sent)], &lib(), None, GroupBy::Goal),
            Err(StatsError::UnknownNudge(_))
        ));
    }
}
