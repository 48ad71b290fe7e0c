//! Daily activity and profile ingestion, marker and segment derivation,
//! weekly aggregation and study eligibility.

mod eligibility;
mod markers;
mod records;
mod rules;
mod weekly;

pub use eligibility::{check_eligibility, Eligibility, IneligibilityReason, MVPA_GUIDELINE_MINUTES};
pub use markers::{derive_markers, evaluate_segments, marker_mutations, segment_mutations};
pub use records::{
    read_behavior, read_profiles, window_stats, write_behavior, write_profiles, BehaviorHistory,
    BehaviorRecord, DailyActivity, Os, ParticipantHistory, ParticipantProfile, Program, Sex,
    Tracker, WindowStats,
};
pub use rules::{
    Aggregation, Comparator, Condition, EvalContext, Field, MarkerRule, Rule, RuleSet,
    SegmentRule, Threshold, WindowCache,
};
pub use weekly::{read_aggregates, week_of, week_start, weekly_aggregate, write_aggregates, WeeklyAggregate, WeeklyAggregates, STUDY_WEEKS};

pub(crate) use records::tsv_reader;
pub(crate) use rules::parse_condition;

use thiserror::Error;

use crate::graph::Day;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("conflicting records for {participant} on {day}")]
    DuplicateRecord { participant: String, day: Day },
    #[error("invalid record for {participant} on {day}: {reason}")]
    InvalidRecord {
        participant: String,
        day: Day,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule line {line}: {reason}")]
pub struct RuleError {
    pub line: usize,
    pub reason: String,
}

const DEFAULT_MARKERS: &str = include_str!("../../data/default_markers.rules");
const DEFAULT_SEGMENTS: &str = include_str!("../../data/default_segments.rules");

/// Marker rules shipped with the crate: age decades, 500-step buckets,
/// BMI classes, weekly MVPA bands, sync regularity and profile attributes.
pub fn default_marker_rules() -> RuleSet {
    RuleSet::parse(DEFAULT_MARKERS).expect("bundled marker rules parse")
}

pub fn default_segment_rules() -> RuleSet {
    RuleSet::parse(DEFAULT_SEGMENTS).expect("bundled segment rules parse")
}

pub fn default_marker_rules_text() -> &'static str {
    DEFAULT_MARKERS
}

pub fn default_segment_rules_text() -> &'static str {
    DEFAULT_SEGMENTS
}
