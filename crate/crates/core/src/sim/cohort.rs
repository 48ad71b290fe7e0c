use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::Duration;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal, WeightedIndex};

use crate::candidates::Technique;
use crate::ingest::{
    check_eligibility, window_stats, BehaviorRecord, Os, ParticipantHistory, ParticipantProfile,
    Program, Sex, Tracker,
};
use crate::stats::{compare_cohorts, CohortSummary, SampleSummary, TestResult};

use super::world::{Latent, ParticipantState};
use super::{stream, SimConfig, SimError};

const TAG_DRAW: u64 = 1;
const TAG_BEHAVIOR: u64 = 2;
const TAG_ENGAGEMENT: u64 = 3;
const TAG_GROUP: u64 = 5;
/// Eligibility redraws allowed per slot before giving up.
const MAX_ELIGIBILITY_DRAWS: u32 = 1000;
pub const MATCH_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Control => "control",
            Arm::Treatment => "treatment",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "control" => Ok(Arm::Control),
            "treatment" => Ok(Arm::Treatment),
            _ => Err(format!("unknown arm `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParticipant {
    pub key: String,
    pub arm: Arm,
    /// Program group, 1 or 2.
    pub group: u8,
    pub profile: ParticipantProfile,
    pub latent: Latent,
    /// Week-0 mean daily steps and total MVPA minutes.
    pub baseline_steps: f64,
    pub baseline_mvpa: f64,
}

/// Matched arms with their simulated pre-study history.
#[derive(Debug, Clone)]
pub struct Cohorts {
    /// Treatment slots first, then control, each in key order.
    pub participants: Vec<SimParticipant>,
    pub pre_study: Vec<BehaviorRecord>,
    /// Control redraws used, counting the accepted one.
    pub attempts: u32,
    /// Matching tests of the accepted draw, keyed `group<g>.<attribute>`.
    pub matching: BTreeMap<String, TestResult>,
    pub(crate) states: Vec<ParticipantState>,
}

impl Cohorts {
    pub fn of_arm(&self, arm: Arm) -> impl Iterator<Item = &SimParticipant> {
        self.participants.iter().filter(move |p| p.arm == arm)
    }

    pub fn assignment(&self) -> CohortAssignment {
        CohortAssignment {
            rows: self.participants.iter().map(|p| (p.key.clone(), (p.arm, p.group))).collect(),
        }
    }

    pub fn profiles(&self) -> impl Iterator<Item = &ParticipantProfile> {
        self.participants.iter().map(|p| &p.profile)
    }
}

/// Participant key to arm and program group; the on-disk cohort file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortAssignment {
    pub rows: BTreeMap<String, (Arm, u8)>,
}

impl CohortAssignment {
    pub fn arm(&self, key: &str) -> Option<Arm> {
        self.rows.get(key).map(|r| r.0)
    }

    pub fn keys_of(&self, arm: Arm) -> impl Iterator<Item = &str> {
        self.rows.iter().filter(move |(_, r)| r.0 == arm).map(|(k, _)| k.as_str())
    }

    /// `participant<TAB>arm<TAB>group` lines.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, (arm, g)) in &self.rows {
            writeln!(w, "{k}\t{arm}\t{g}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, String> {
        let mut rows = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [k, arm, g] = f[..] else {
                return Err(format!("line {}: expected 3 fields", i + 1));
            };
            let arm = arm.parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            let g = match g {
                "1" => 1,
                "2" => 2,
                _ => return Err(format!("line {}: group must be 1 or 2", i + 1)),
            };
            if rows.insert(k.to_string(), (arm, g)).is_some() {
                return Err(format!("line {}: duplicate participant `{k}`", i + 1));
            }
        }
        Ok(Self { rows })
    }
}

struct Drawn {
    participant: SimParticipant,
    state: ParticipantState,
    records: Vec<BehaviorRecord>,
}

fn lognormal_unit(z: f64, sigma: f64) -> f64 {
    (sigma * z - sigma * sigma / 2.0).exp()
}

fn draw_one(cfg: &SimConfig, key: &str, arm: Arm, group: u8, path: [u64; 3]) -> Result<Drawn, SimError> {
    let g = cfg.group(group);
    for k in 0..MAX_ELIGIBILITY_DRAWS {
        let base = [path[0], path[1], path[2], k as u64];
        let mut rng = stream(cfg.seed, &[&[TAG_DRAW][..], &base[..]].concat());
        let age = Normal::new(g.age_mean, g.age_sd.max(1e-9))
            .map_err(|e| SimError::Config(e.to_string()))?
            .sample(&mut rng)
            .round()
            .clamp(18.0, 85.0) as u32;
        let sex = if rng.gen::<f64>() < g.female_fraction { Sex::F } else { Sex::M };
        let os = if rng.gen::<f64>() < g.ios_fraction { Os::Ios } else { Os::Android };
        let tracker_idx = WeightedIndex::new(g.tracker_mix).map_err(|e| SimError::Config(e.to_string()))?;
        let tracker = [
            Tracker::AppleWatch,
            Tracker::Fitbit,
            Tracker::Garmin,
            Tracker::SamsungWatch,
            Tracker::HpbTracker,
            Tracker::Other,
        ][tracker_idx.sample(&mut rng)];
        let mut programs = BTreeSet::from([Program::Nsc]);
        if group == 2 {
            programs.insert(Program::Edsh);
        }
        let bmi = Some((Normal::new(24.5, 4.0).expect("valid normal").sample(&mut rng) as f64).clamp(15.0, 45.0));

        let z_steps: f64 = StandardNormal.sample(&mut rng);
        let z_ratio: f64 = StandardNormal.sample(&mut rng);
        let z_prop: f64 = StandardNormal.sample(&mut rng);
        let (a, b) = (cfg.sync_mean * cfg.sync_concentration, (1.0 - cfg.sync_mean) * cfg.sync_concentration);
        let sync_prob = Beta::new(a, b).map_err(|e| SimError::Config(e.to_string()))?.sample(&mut rng);
        let relative = lognormal_unit(z_steps, cfg.steps_sigma);
        let e = &cfg.effect;
        // Age band leans toward one technique; the rest is uniform.
        let band = ((age.saturating_sub(18)) / 16).min(3) as usize;
        let preferred = if rng.gen::<f64>() < 0.5 {
            Technique::ALL[band]
        } else {
            Technique::ALL[rng.gen_range(0..4)]
        };
        let latent = Latent {
            steps_mean: g.steps_mean / cfg.sync_mean * relative,
            mvpa_per_step: g.mvpa_weekly_mean / 7.0 / g.steps_mean * lognormal_unit(z_ratio, cfg.mvpa_ratio_sigma),
            sync_prob,
            propensity: lognormal_unit(z_prop, e.propensity_sigma) * relative.powf(e.propensity_activity_power),
            preferred,
        };
        let participant = SimParticipant {
            key: key.to_string(),
            arm,
            group,
            profile: ParticipantProfile {
                participant: key.to_string(),
                age_years: age,
                sex,
                os,
                tracker,
                enrolled_programs: programs,
                bmi,
            },
            latent,
            baseline_steps: 0.0,
            baseline_mvpa: 0.0,
        };
        let mut state = ParticipantState::new(
            cfg,
            stream(cfg.seed, &[&[TAG_BEHAVIOR][..], &base[..]].concat()),
            stream(cfg.seed, &[&[TAG_ENGAGEMENT][..], &base[..]].concat()),
        );
        let mut records = Vec::with_capacity(cfg.pre_study_days as usize);
        let mut history = ParticipantHistory::new();
        let mut no_events = Vec::new();
        let mut day = cfg.first_day();
        while day < cfg.nudge_start {
            let r = state.step(cfg, &participant, day, &[], &mut no_events);
            history.insert(day, r.activity());
            records.push(r);
            day += Duration::days(1);
        }
        if !check_eligibility(&participant.profile, Some(&history), cfg.nudge_start).eligible {
            continue;
        }
        let week0 = window_stats(Some(&history), cfg.nudge_start, 7);
        let participant = SimParticipant {
            baseline_steps: week0.steps_mean(),
            baseline_mvpa: week0.mvpa_sum,
            ..participant
        };
        return Ok(Drawn { participant, state, records });
    }
    Err(SimError::Ineligible(MAX_ELIGIBILITY_DRAWS))
}

fn draw_arm(cfg: &SimConfig, arm: Arm, attempt: u32) -> Result<Vec<Drawn>, SimError> {
    let offset = if arm == Arm::Treatment { 0 } else { cfg.n_per_arm };
    (0..cfg.n_per_arm)
        .map(|slot| {
            // Independent per slot; fixed per-arm counts would make the
            // pooled outcome tests conservative.
            let mut rng = stream(cfg.seed, &[TAG_GROUP, arm as u64, slot as u64, attempt as u64]);
            let group = if rng.gen::<f64>() < cfg.group2_fraction { 2 } else { 1 };
            let key = format!("p{:05}", offset + slot + 1);
            draw_one(cfg, &key, arm, group, [arm as u64, slot as u64, attempt as u64])
        })
        .collect()
}

fn summary(label: &str, members: &[&SimParticipant]) -> CohortSummary {
    let values = |f: &dyn Fn(&SimParticipant) -> f64| SampleSummary::from_values(&members.iter().map(|p| f(p)).collect::<Vec<_>>());
    let mut continuous = BTreeMap::new();
    continuous.insert("age".to_string(), values(&|p| p.profile.age_years as f64));
    continuous.insert("baseline_steps".to_string(), values(&|p| p.baseline_steps));
    continuous.insert("baseline_mvpa".to_string(), values(&|p| p.baseline_mvpa));
    let mut categorical = BTreeMap::new();
    let mut sex = BTreeMap::from([("F".to_string(), 0), ("M".to_string(), 0)]);
    let mut os = BTreeMap::from([("iOS".to_string(), 0), ("Android".to_string(), 0)]);
    for p in members {
        *sex.get_mut(if p.profile.sex == Sex::F { "F" } else { "M" }).expect("seeded") += 1;
        *os.get_mut(if p.profile.os == Os::Ios { "iOS" } else { "Android" }).expect("seeded") += 1;
    }
    categorical.insert("sex".to_string(), sex);
    categorical.insert("os".to_string(), os);
    CohortSummary { label: label.to_string(), n: members.len() as u64, continuous, categorical }
}

/// Matching tests per program group present in both arms.
pub fn matching_tests(participants: &[SimParticipant]) -> Result<BTreeMap<String, TestResult>, SimError> {
    let mut out = BTreeMap::new();
    for g in [1u8, 2] {
        let pick = |arm| participants.iter().filter(|p| p.group == g && p.arm == arm).collect::<Vec<_>>();
        let (t, c) = (pick(Arm::Treatment), pick(Arm::Control));
        if t.is_empty() && c.is_empty() {
            continue;
        }
        for (attr, r) in compare_cohorts(&summary("treatment", &t), &summary("control", &c))? {
            out.insert(format!("group{g}.{attr}"), r);
        }
    }
    Ok(out)
}

/// Draws the treatment arm once, then redraws the control arm until every
/// matching test has p above 0.05.
pub fn generate_cohorts(cfg: &SimConfig) -> Result<Cohorts, SimError> {
    cfg.validate()?;
    let treatment = draw_arm(cfg, Arm::Treatment, 0)?;
    let mut worst = (String::new(), 1.0);
    for attempt in 1..=cfg.max_match_attempts {
        let control = draw_arm(cfg, Arm::Control, attempt)?;
        let participants: Vec<SimParticipant> =
            treatment.iter().chain(&control).map(|d| d.participant.clone()).collect();
        let matching = matching_tests(&participants)?;
        let (attr, p) = matching
            .iter()
            .map(|(k, r)| (k.clone(), r.p_value))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or_default();
        if p > MATCH_ALPHA || matching.is_empty() {
            let (states, pre_study) = treatment
                .iter()
                .chain(&control)
                .map(|d| (d.state.clone(), d.records.clone()))
                .unzip::<_, _, Vec<_>, Vec<_>>();
            let mut pre_study: Vec<BehaviorRecord> = pre_study.into_iter().flatten().collect();
            pre_study.sort_by(|a, b| (a.day, &a.participant).cmp(&(b.day, &b.participant)));
            return Ok(Cohorts { participants, pre_study, attempts: attempt, matching, states });
        }
        if attempt == 1 || p < worst.1 {
            worst = (attr, p);
        }
    }
    Err(SimError::Unmatched { attribute: worst.0, p: worst.1, attempts: cfg.max_match_attempts })
}
