use std::collections::BTreeMap;

use thiserror::Error;

use crate::candidates::NudgeLibrary;
use crate::graph::Day;
use crate::ingest::{window_stats, ParticipantHistory, ParticipantProfile, MVPA_GUIDELINE_MINUTES};

/// What a placeholder derivation may look at.
#[derive(Debug, Clone, Copy)]
pub struct RenderContext<'a> {
    pub profile: Option<&'a ParticipantProfile>,
    pub history: Option<&'a ParticipantHistory>,
    /// Rendering day; trailing windows end the day before.
    pub day: Day,
}

/// Returns `None` when the participant lacks the data the value needs.
pub type Derivation = fn(&RenderContext<'_>) -> Option<f64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("unregistered placeholder `{0}`")]
    Unregistered(String),
    #[error("no data for placeholder `{0}`")]
    MissingData(String),
    #[error("unterminated placeholder at byte {0}")]
    Unterminated(usize),
    #[error("nudge {nudge}: {source}")]
    InNudge {
        nudge: String,
        #[source]
        source: Box<RenderError>,
    },
}

#[derive(Debug, Clone)]
pub struct PlaceholderCatalogue {
    entries: BTreeMap<String, Derivation>,
}

fn trailing_week(ctx: &RenderContext<'_>) -> Option<crate::ingest::WindowStats> {
    let w = window_stats(ctx.history, ctx.day, 7);
    (w.synced_days > 0).then_some(w)
}

fn avg_daily_steps(ctx: &RenderContext<'_>) -> Option<f64> {
    trailing_week(ctx).map(|w| w.steps_mean().round())
}

fn weekly_mvpa_minutes(ctx: &RenderContext<'_>) -> Option<f64> {
    trailing_week(ctx).map(|w| w.mvpa_sum.round())
}

fn mvpa_minutes_to_goal(ctx: &RenderContext<'_>) -> Option<f64> {
    trailing_week(ctx).map(|w| (MVPA_GUIDELINE_MINUTES - w.mvpa_sum).max(0.0).round())
}

fn days_synced_last_week(ctx: &RenderContext<'_>) -> Option<f64> {
    ctx.history.map(|_| window_stats(ctx.history, ctx.day, 7).synced_days as f64)
}

impl Default for PlaceholderCatalogue {
    /// `avg_daily_steps`, `weekly_mvpa_minutes`, `mvpa_minutes_to_goal` and
    /// `days_synced_last_week`, all over the seven days before the render day.
    fn default() -> Self {
        let mut c = Self::empty();
        c.register("avg_daily_steps", avg_daily_steps);
        c.register("weekly_mvpa_minutes", weekly_mvpa_minutes);
        c.register("mvpa_minutes_to_goal", mvpa_minutes_to_goal);
        c.register("days_synced_last_week", days_synced_last_week);
        c
    }
}

impl PlaceholderCatalogue {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, derivation: Derivation) {
        self.entries.insert(name.to_string(), derivation);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn derive(&self, name: &str, ctx: &RenderContext<'_>) -> Result<f64, RenderError> {
        let f = self
            .entries
            .get(name)
            .ok_or_else(|| RenderError::Unregistered(name.to_string()))?;
        f(ctx).ok_or_else(|| RenderError::MissingData(name.to_string()))
    }

    /// Load-time check that every library body only uses registered names.
    pub fn validate_library(&self, library: &NudgeLibrary) -> Result<(), RenderError> {
        for n in library.iter() {
            for name in placeholders(&n.body).map_err(|e| in_nudge(&n.key, e))? {
                if !self.contains(name) {
                    return Err(in_nudge(&n.key, RenderError::Unregistered(name.to_string())));
                }
            }
        }
        Ok(())
    }
}

fn in_nudge(key: &str, e: RenderError) -> RenderError {
    RenderError::InNudge {
        nudge: key.to_string(),
        source: Box::new(e),
    }
}

/// Placeholder names in order of appearance.
pub fn placeholders(body: &str) -> Result<Vec<&str>, RenderError> {
    let mut out = Vec::new();
    let mut rest = body;
    let mut offset = 0;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or(RenderError::Unterminated(offset + open))?;
        out.push(after[..close].trim());
        let consumed = open + 2 + close + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    Ok(out)
}

/// Integer with comma thousands separators.
pub fn format_thousands(value: f64) -> String {
    let n = value.round() as i64;
    let digits = n.unsigned_abs().to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3 + 1);
    if n < 0 {
        out.push('-');
    }
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Replaces every `{{name}}` with its derived, formatted value.
pub fn render(body: &str, ctx: &RenderContext<'_>, catalogue: &PlaceholderCatalogue) -> Result<String, RenderError> {
    let mut out = String::with_capacity(body.len() + 16);
    let mut rest = body;
    let mut offset = 0;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or(RenderError::Unterminated(offset + open))?;
        let value = catalogue.derive(after[..close].trim(), ctx)?;
        out.push_str(&format_thousands(value));
        let consumed = open + 2 + close + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}
