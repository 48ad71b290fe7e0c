//! Marker and segment rules.
//!
//! A rule file holds one condition per line:
//!
//! ```text
//! # key          field   window  agg    cmp  value
//! age: 30s       age     -       -      >=   30
//! age: 30s       age     -       -      <    40
//! steps: 2.5k    steps   7       mean   >=   2500
//! ```
//!
//! Lines sharing a key are conjoined into one rule. Profile fields take `-`
//! for window and aggregation; behavior fields (`steps`, `mvpa`) require both.
//! Categorical fields (`sex`, `os`, `tracker`, `program`, `marker`) compare
//! with `in` / `notin` against a comma-joined value list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::graph::Day;

use super::records::{window_stats, ParticipantHistory, ParticipantProfile, WindowStats};
use super::RuleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Field {
    Age,
    Sex,
    Os,
    Tracker,
    Program,
    Bmi,
    Steps,
    Mvpa,
    Marker,
}

impl Field {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "age" => Field::Age,
            "sex" => Field::Sex,
            "os" => Field::Os,
            "tracker" => Field::Tracker,
            "program" => Field::Program,
            "bmi" => Field::Bmi,
            "steps" => Field::Steps,
            "mvpa" => Field::Mvpa,
            "marker" => Field::Marker,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            Field::Age => "age",
            Field::Sex => "sex",
            Field::Os => "os",
            Field::Tracker => "tracker",
            Field::Program => "program",
            Field::Bmi => "bmi",
            Field::Steps => "steps",
            Field::Mvpa => "mvpa",
            Field::Marker => "marker",
        }
    }

    fn is_behavior(self) -> bool {
        matches!(self, Field::Steps | Field::Mvpa)
    }

    fn is_numeric(self) -> bool {
        matches!(self, Field::Age | Field::Bmi | Field::Steps | Field::Mvpa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Mean,
    Sum,
    Max,
    /// Number of synced days in the window.
    Count,
}

impl Aggregation {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mean" => Aggregation::Mean,
            "sum" => Aggregation::Sum,
            "max" => Aggregation::Max,
            "count" => Aggregation::Count,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
            Aggregation::Count => "count",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    In,
    NotIn,
}

impl Comparator {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => Comparator::Lt,
            "<=" => Comparator::Le,
            ">" => Comparator::Gt,
            ">=" => Comparator::Ge,
            "==" => Comparator::Eq,
            "!=" => Comparator::Ne,
            "in" => Comparator::In,
            "notin" => Comparator::NotIn,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "==",
            Comparator::Ne => "!=",
            Comparator::In => "in",
            Comparator::NotIn => "notin",
        }
    }

    fn is_set(self) -> bool {
        matches!(self, Comparator::In | Comparator::NotIn)
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
            Comparator::In | Comparator::NotIn => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Threshold {
    Number(f64),
    Set(BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub field: Field,
    pub window: Option<(u32, Aggregation)>,
    pub comparator: Comparator,
    pub threshold: Threshold,
}

/// Inputs a predicate may look at. Missing inputs make the conditions that
/// need them false.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub profile: Option<&'a ParticipantProfile>,
    pub history: Option<&'a ParticipantHistory>,
    pub markers: Option<&'a BTreeSet<String>>,
    /// Windows end the day before `day`.
    pub day: Day,
}

impl<'a> EvalContext<'a> {
    pub fn new(day: Day) -> Self {
        Self {
            profile: None,
            history: None,
            markers: None,
            day,
        }
    }
}

/// Per-participant cache of window statistics keyed by window length.
#[derive(Debug, Default)]
pub struct WindowCache {
    stats: BTreeMap<u32, WindowStats>,
}

impl WindowCache {
    fn get(&mut self, ctx: &EvalContext<'_>, len: u32) -> WindowStats {
        *self
            .stats
            .entry(len)
            .or_insert_with(|| window_stats(ctx.history, ctx.day, len))
    }
}

impl Condition {
    pub fn eval(&self, ctx: &EvalContext<'_>, cache: &mut WindowCache) -> bool {
        match (&self.threshold, self.field) {
            (Threshold::Number(t), field) => {
                let value = match field {
                    Field::Age => ctx.profile.map(|p| p.age_years as f64),
                    Field::Bmi => ctx.profile.and_then(|p| p.bmi),
                    Field::Steps | Field::Mvpa => {
                        let (len, agg) = self.window.expect("validated at load");
                        let w = cache.get(ctx, len);
                        let steps = field == Field::Steps;
                        Some(match agg {
                            Aggregation::Mean if steps => w.steps_mean(),
                            Aggregation::Mean => w.mvpa_mean(),
                            Aggregation::Sum if steps => w.steps_sum,
                            Aggregation::Sum => w.mvpa_sum,
                            Aggregation::Max if steps => w.steps_max,
                            Aggregation::Max => w.mvpa_max,
                            Aggregation::Count => w.synced_days as f64,
                        })
                    }
                    _ => None,
                };
                value.is_some_and(|v| self.comparator.holds(v, *t))
            }
            (Threshold::Set(values), field) => {
                let hit = match field {
                    Field::Sex => ctx.profile.map(|p| values.contains(p.sex.as_str())),
                    Field::Os => ctx.profile.map(|p| values.contains(p.os.as_str())),
                    Field::Tracker => ctx.profile.map(|p| values.contains(p.tracker.as_str())),
                    Field::Program => ctx
                        .profile
                        .map(|p| p.enrolled_programs.iter().any(|x| values.contains(x.as_str()))),
                    Field::Marker => ctx.markers.map(|m| m.iter().any(|x| values.contains(x))),
                    _ => None,
                };
                match (hit, self.comparator) {
                    (Some(h), Comparator::In) => h,
                    (Some(h), Comparator::NotIn) => !h,
                    _ => false,
                }
            }
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (window, agg) = match self.window {
            Some((len, agg)) => (len.to_string(), agg.as_str()),
            None => ("-".to_string(), "-"),
        };
        let value = match &self.threshold {
            Threshold::Number(x) => x.to_string(),
            Threshold::Set(s) => s.iter().cloned().collect::<Vec<_>>().join(","),
        };
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.field.as_str(),
            window,
            agg,
            self.comparator.as_str(),
            value
        )
    }
}

/// A named conjunction of conditions. Used for both markers and segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub key: String,
    pub conditions: Vec<Condition>,
}

impl Rule {
    pub fn holds(&self, ctx: &EvalContext<'_>, cache: &mut WindowCache) -> bool {
        self.conditions.iter().all(|c| c.eval(ctx, cache))
    }

    pub fn uses_markers(&self) -> bool {
        self.conditions.iter().any(|c| c.field == Field::Marker)
    }
}

pub type MarkerRule = Rule;
pub type SegmentRule = Rule;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut rules: Vec<Rule> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (key, cond) = parse_line(line).map_err(|reason| RuleError { line: line_no, reason })?;
            match index.get(&key) {
                Some(&at) => rules[at].conditions.push(cond),
                None => {
                    index.insert(key.clone(), rules.len());
                    rules.push(Rule {
                        key,
                        conditions: vec![cond],
                    });
                }
            }
        }
        Ok(Self { rules })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            for c in &r.conditions {
                out.push_str(&format!("{}\t{}\n", r.key, c));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Keys of the rules that hold for `ctx`.
    pub fn matching(&self, ctx: &EvalContext<'_>) -> BTreeSet<String> {
        let mut cache = WindowCache::default();
        self.rules
            .iter()
            .filter(|r| r.holds(ctx, &mut cache))
            .map(|r| r.key.clone())
            .collect()
    }
}

pub(crate) fn parse_line(line: &str) -> Result<(String, Condition), String> {
    let f: Vec<&str> = line.split('\t').map(str::trim).collect();
    if f.len() != 6 {
        return Err(format!("expected 6 tab-separated fields, found {}", f.len()));
    }
    if f[0].is_empty() {
        return Err("empty rule key".into());
    }
    let cond = parse_condition(&f[1..])?;
    Ok((f[0].to_string(), cond))
}

/// Parses `field, window, aggregation, comparator, value`.
pub(crate) fn parse_condition(f: &[&str]) -> Result<Condition, String> {
    let field = Field::parse(f[0]).ok_or_else(|| format!("unknown field `{}`", f[0]))?;
    let window = match (f[1], f[2]) {
        ("-", "-") => None,
        (w, a) => {
            let len: u32 = w.parse().map_err(|_| format!("bad window `{w}`"))?;
            if len == 0 {
                return Err("window must be at least one day".into());
            }
            let agg = Aggregation::parse(a).ok_or_else(|| format!("unknown aggregation `{a}`"))?;
            Some((len, agg))
        }
    };
    match (field.is_behavior(), window.is_some()) {
        (true, false) => return Err(format!("field `{}` needs a window and aggregation", f[0])),
        (false, true) => return Err(format!("field `{}` takes no window", f[0])),
        _ => {}
    }
    let comparator = Comparator::parse(f[3]).ok_or_else(|| format!("unknown comparator `{}`", f[3]))?;
    if comparator.is_set() == field.is_numeric() {
        return Err(format!(
            "comparator `{}` does not apply to field `{}`",
            f[3], f[0]
        ));
    }
    let threshold = if comparator.is_set() {
        let set: BTreeSet<String> = f[4]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if set.is_empty() {
            return Err("empty value list".into());
        }
        Threshold::Set(set)
    } else {
        let x: f64 = f[4].parse().map_err(|_| format!("bad threshold `{}`", f[4]))?;
        if !x.is_finite() {
            return Err(format!("bad threshold `{}`", f[4]));
        }
        Threshold::Number(x)
    };
    Ok(Condition {
        field,
        window,
        comparator,
        threshold,
    })
}
