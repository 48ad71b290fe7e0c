use std::fmt;

use chrono::Duration;

use crate::graph::Day;

use super::records::{window_stats, ParticipantHistory, ParticipantProfile};

pub const MIN_AGE_YEARS: u32 = 18;
/// Days before nudging starts in which at least one sync is required.
pub const RECENT_SYNC_DAYS: u32 = 28;
/// Weekly MVPA guideline; eligible participants are below it in week 0.
pub const MVPA_GUIDELINE_MINUTES: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IneligibilityReason {
    Age,
    NoRecentSync,
    MvpaAtGuideline,
}

impl fmt::Display for IneligibilityReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IneligibilityReason::Age => "age",
            IneligibilityReason::NoRecentSync => "sync",
            IneligibilityReason::MvpaAtGuideline => "mvpa",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Eligibility {
    pub eligible: bool,
    pub reasons: Vec<IneligibilityReason>,
}

/// Study eligibility on the day nudging starts: adult, at least one sync in
/// the 28 days before `nudge_start`, and under 150 MVPA minutes in week 0.
pub fn check_eligibility(
    profile: &ParticipantProfile,
    history: Option<&ParticipantHistory>,
    nudge_start: Day,
) -> Eligibility {
    let mut reasons = Vec::new();
    if profile.age_years < MIN_AGE_YEARS {
        reasons.push(IneligibilityReason::Age);
    }
    let synced_recently = history.is_some_and(|h| {
        h.range(nudge_start - Duration::days(RECENT_SYNC_DAYS as i64)..nudge_start)
            .any(|(_, a)| a.synced)
    });
    if !synced_recently {
        reasons.push(IneligibilityReason::NoRecentSync);
    }
    if window_stats(history, nudge_start, 7).mvpa_sum >= MVPA_GUIDELINE_MINUTES {
        reasons.push(IneligibilityReason::MvpaAtGuideline);
    }
    Eligibility {
        eligible: reasons.is_empty(),
        reasons,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BehaviorHistory, BehaviorRecord, Os, Program, Sex, Tracker};

    fn start() -> Day {
        Day::from_ymd_opt(2023, 4, 3).unwrap()
    }

    fn profile(age: u32) -> ParticipantProfile {
        ParticipantProfile {
            participant: "p".into(),
            age_years: age,
            sex: Sex::M,
            os: Os::Android,
            tracker: Tracker::HpbTracker,
            enrolled_programs: [Program::Nsc].into(),
            bmi: None,
        }
    }

    fn one_sync(days_before: i64, mvpa: f64) -> BehaviorHistory {
        BehaviorHistory::from_records([BehaviorRecord {
            participant: "p".into(),
            day: start() - Duration::days(days_before),
            steps: 3000,
            mvpa_minutes: mvpa,
            synced: true,
        }])
        .unwrap()
    }

    #[test]
    fn typical_participant_is_eligible() {
        let h = one_sync(5, 40.0);
        let e = check_eligibility(&profile(47), h.participant("p"), start());
        assert!(e.eligible, "{:?}", e.reasons);
    }

    #[test]
    fn minor_is_ineligible() {
        let h = one_sync(5, 40.0);
        let e = check_eligibility(&profile(17), h.participant("p"), start());
        assert_eq!(e.reasons, vec![IneligibilityReason::Age]);
        assert_eq!(e.reasons[0].to_string(), "age");
    }

    #[test]
    fn sync_window_boundary() {
        let h = one_sync(28, 0.0);
        assert!(check_eligibility(&profile(30), h.participant("p"), start()).eligible);
        let h = one_sync(29, 0.0);
        let e = check_eligibility(&profile(30), h.participant("p"), start());
        assert_eq!(e.reasons, vec![IneligibilityReason::NoRecentSync]);
    }

    #[test]
    fn every_failure_is_listed() {
        let h = one_sync(3, 150.0);
        let e = check_eligibility(&profile(16), h.participant("p"), start());
        assert_eq!(e.reasons, vec![IneligibilityReason::Age, IneligibilityReason::MvpaAtGuideline]);
        let e = check_eligibility(&profile(16), None, start());
        assert_eq!(e.reasons, vec![IneligibilityReason::Age, IneligibilityReason::NoRecentSync]);
    }
}
