//! Synthetic two-arm population: matched cohorts, daily behavior, and
//! responses to delivered nudges.

mod cohort;
mod fast;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Day;
use crate::stats::StatsError;

pub use cohort::{generate_cohorts, Arm, CohortAssignment, Cohorts, SimParticipant};
pub use fast::{random_policy, run_fast, FastRun};
pub use world::{DayOutput, Delivery, World};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("cohorts still unmatched on `{attribute}` (p = {p:.4}) after {attempts} attempts")]
    Unmatched { attribute: String, p: f64, attempts: u32 },
    #[error("cohort matching test failed: {0}")]
    Matching(#[from] StatsError),
    #[error("no eligible participant after {0} draws")]
    Ineligible(u32),
    #[error("delivery to control participant `{0}` refused")]
    ControlDelivery(String),
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
    #[error("day {day} is out of order; expected {expected}")]
    DayOrder { day: Day, expected: Day },
}

/// Baseline attributes of one program group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupParams {
    /// Target mean daily steps at the start, counting unsynced days as zero.
    pub steps_mean: f64,
    /// Target mean weekly MVPA minutes at the start.
    pub mvpa_weekly_mean: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub female_fraction: f64,
    pub ios_fraction: f64,
    /// AppleWatch, Fitbit, Garmin, SamsungWatch, HPBTracker, Other.
    pub tracker_mix: [f64; 6],
}

impl GroupParams {
    pub fn group1() -> Self {
        Self {
            steps_mean: 3146.0,
            mvpa_weekly_mean: 39.7,
            age_mean: 47.4,
            age_sd: 12.0,
            female_fraction: 0.479,
            ios_fraction: 0.445,
            tracker_mix: [0.166, 0.062, 0.076, 0.070, 0.622, 0.004],
        }
    }

    pub fn group2() -> Self {
        Self {
            steps_mean: 4157.0,
            mvpa_weekly_mean: 86.3,
            age_mean: 46.0,
            age_sd: 12.0,
            female_fraction: 0.63,
            ios_fraction: 0.432,
            tracker_mix: [0.164, 0.098, 0.062, 0.094, 0.568, 0.014],
        }
    }
}

/// How strongly and how often participants respond to nudges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectConfig {
    /// Multiplicative lift on steps and MVPA contributed by one open.
    pub lift_per_open: f64,
    /// e-folding time of an open's lift, in days.
    pub decay_days: f64,
    pub open_prob_steps: f64,
    pub open_prob_mvpa: f64,
    /// Log-scale spread of the per-participant open propensity.
    pub propensity_sigma: f64,
    /// Propensity grows with baseline activity to this power.
    pub propensity_activity_power: f64,
    /// Open-probability multiplier for the participant's preferred technique.
    pub preferred_technique_boost: f64,
    pub useful_given_open: f64,
    pub not_useful_given_open: f64,
}

impl Default for EffectConfig {
    fn default() -> Self {
        Self {
            lift_per_open: 0.05,
            decay_days: 7.0,
            open_prob_steps: 0.087,
            open_prob_mvpa: 0.193,
            propensity_sigma: 0.6,
            propensity_activity_power: 1.0,
            preferred_technique_boost: 1.8,
            useful_given_open: 0.117,
            not_useful_given_open: 0.019,
        }
    }
}

impl EffectConfig {
    /// Same engagement, no behavioral response.
    pub fn null() -> Self {
        Self { lift_per_open: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_per_arm: usize,
    /// Share of each arm drawn from group 2.
    pub group2_fraction: f64,
    pub group1: GroupParams,
    pub group2: GroupParams,
    /// First day of nudging; the pre-study period ends the day before.
    pub nudge_start: Day,
    pub pre_study_days: u32,
    pub study_weeks: u32,
    /// Between-participant log-scale spread of mean daily steps.
    pub steps_sigma: f64,
    /// Day-to-day log-scale noise.
    pub daily_sigma: f64,
    /// Stationary spread and weekly autocorrelation of individual drift.
    pub drift_sigma: f64,
    pub drift_weekly_corr: f64,
    /// Between-participant spread of MVPA minutes per step.
    pub mvpa_ratio_sigma: f64,
    pub mvpa_daily_sigma: f64,
    /// Mean and concentration of the per-participant sync probability.
    pub sync_mean: f64,
    pub sync_concentration: f64,
    pub effect: EffectConfig,
    pub max_match_attempts: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_per_arm: 2000,
            group2_fraction: 0.5,
            group1: GroupParams::group1(),
            group2: GroupParams::group2(),
            nudge_start: Day::from_ymd_opt(2023, 4, 3).expect("valid date"),
            pre_study_days: 28,
            study_weeks: 12,
            steps_sigma: 0.35,
            daily_sigma: 0.45,
            drift_sigma: 0.3,
            drift_weekly_corr: 0.7,
            mvpa_ratio_sigma: 0.25,
            mvpa_daily_sigma: 0.5,
            sync_mean: 0.92,
            sync_concentration: 20.0,
            effect: EffectConfig::default(),
            max_match_attempts: 50,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let e = &self.effect;
        for (name, p) in [
            ("group2_fraction", self.group2_fraction),
            ("sync_mean", self.sync_mean),
            ("open_prob_steps", e.open_prob_steps),
            ("open_prob_mvpa", e.open_prob_mvpa),
            ("useful_given_open", e.useful_given_open),
            ("not_useful_given_open", e.not_useful_given_open),
            ("drift_weekly_corr", self.drift_weekly_corr),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if e.useful_given_open + e.not_useful_given_open > 1.0 {
            return bad("rating probabilities sum above 1".into());
        }
        for g in [&self.group1, &self.group2] {
            if g.steps_mean <= 0.0 || g.mvpa_weekly_mean <= 0.0 || g.age_sd < 0.0 {
                return bad("group means must be positive".into());
            }
            if !(0.0..=1.0).contains(&g.female_fraction) || !(0.0..=1.0).contains(&g.ios_fraction) {
                return bad("group fractions must be probabilities".into());
            }
            if g.tracker_mix.iter().any(|w| *w < 0.0) || g.tracker_mix.iter().sum::<f64>() <= 0.0 {
                return bad("tracker mix needs non-negative weights".into());
            }
        }
        for (name, s) in [
            ("steps_sigma", self.steps_sigma),
            ("daily_sigma", self.daily_sigma),
            ("drift_sigma", self.drift_sigma),
            ("mvpa_ratio_sigma", self.mvpa_ratio_sigma),
            ("mvpa_daily_sigma", self.mvpa_daily_sigma),
            ("propensity_sigma", e.propensity_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if e.lift_per_open < 0.0 || e.decay_days <= 0.0 || e.preferred_technique_boost <= 0.0 {
            return bad("lift must be non-negative and decay positive".into());
        }
        if self.sync_concentration <= 0.0 || self.sync_mean <= 0.0 || self.sync_mean >= 1.0 {
            return bad("sync_mean must lie strictly between 0 and 1".into());
        }
        if self.n_per_arm == 0 || self.study_weeks == 0 || self.pre_study_days < 7 {
            return bad("need participants, at least one study week and a full week 0".into());
        }
        Ok(())
    }

    pub fn first_day(&self) -> Day {
        self.nudge_start - chrono::Duration::days(self.pre_study_days as i64)
    }

    pub fn last_day(&self) -> Day {
        self.nudge_start + chrono::Duration::days(7 * self.study_weeks as i64 - 1)
    }

    pub fn group(&self, g: u8) -> &GroupParams {
        if g == 2 {
            &self.group2
        } else {
            &self.group1
        }
    }
}

/// Independent generator for a seed and a path of indices.
pub(crate) fn stream(seed: u64, path: &[u64]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    // splitmix64 finalizer over the path
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &x in path {
        h = h.wrapping_add(x).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    rand_chacha::ChaCha8Rng::seed_from_u64(h)
}
