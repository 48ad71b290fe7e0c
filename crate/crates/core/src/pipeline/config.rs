use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};

use crate::candidates::{default_library, NudgeLibrary};
use crate::constraints::ConstraintConfig;
use crate::ingest::{default_marker_rules, default_segment_rules, RuleSet};
use crate::personalize::PlaceholderCatalogue;
use crate::ranker::Hyperparams;
use crate::sim::SimConfig;
use crate::stats::DoseStepsWindow;

use super::PipelineError;

/// The documented default configuration file.
pub const DEFAULT_CONFIG: &str = include_str!("../../config/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseWindow {
    #[default]
    Weeks1To12,
    Week12Only,
}

impl From<DoseWindow> for DoseStepsWindow {
    fn from(w: DoseWindow) -> Self {
        match w {
            DoseWindow::Weeks1To12 => DoseStepsWindow::Weeks1To12,
            DoseWindow::Week12Only => DoseStepsWindow::Week12Only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Local time at which the day's nudges are sent.
    pub send_time: NaiveTime,
    pub retrain_every_days: u32,
    /// Epochs of a warm-start retrain; the first training uses `ranker.epochs`.
    pub retrain_epochs: usize,
    /// Skip the ranker and order candidates by a seeded hash.
    pub random_rank: bool,
    /// Days after the latest send within which an open is attributed; 0 means no limit.
    pub attribution_horizon_days: u32,
    pub dose_window: DoseWindow,
    /// Write a graph snapshot every this-many days of an experiment; 0 writes only the final one.
    pub snapshot_every_days: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            send_time: NaiveTime::from_hms_opt(8, 0, 0).expect("valid time"),
            retrain_every_days: 7,
            retrain_epochs: 4,
            random_rank: false,
            attribution_horizon_days: 0,
            dose_window: DoseWindow::default(),
            snapshot_every_days: 7,
        }
    }
}

/// Optional replacements for the built-in library and rule files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub library: Option<PathBuf>,
    pub marker_rules: Option<PathBuf>,
    pub segment_rules: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pipeline: RunConfig,
    pub constraints: ConstraintConfig,
    pub ranker: Hyperparams,
    pub sim: SimConfig,
    pub paths: Paths,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            pipeline: RunConfig::default(),
            constraints: ConstraintConfig::default(),
            ranker: Hyperparams {
                epochs: 20,
                cf_batch_size: 1024,
                kg_batch_size: 2048,
                learning_rate: 0.05,
                ..Hyperparams::default()
            },
            sim: SimConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let cfg: Config = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: String| PipelineError::Config(e);
        self.constraints.validate().map_err(|e| cfg(e.to_string()))?;
        self.ranker.validate().map_err(|e| cfg(e.to_string()))?;
        self.sim.validate().map_err(|e| cfg(e.to_string()))?;
        if self.pipeline.retrain_every_days == 0 {
            return Err(cfg("pipeline.retrain_every_days must be at least 1".into()));
        }
        Ok(())
    }

    pub fn attribution_horizon(&self) -> Option<u32> {
        (self.pipeline.attribution_horizon_days > 0).then_some(self.pipeline.attribution_horizon_days)
    }

    /// Library, rules and placeholder catalogue, from `paths` or built in.
    pub fn resources(&self) -> Result<Resources, PipelineError> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())));
        let library = match &self.paths.library {
            Some(p) => NudgeLibrary::parse(&read(p)?).map_err(|e| PipelineError::Config(e.to_string()))?,
            None => default_library(),
        };
        let rules = |p: &Option<PathBuf>, default: fn() -> RuleSet| match p {
            Some(p) => RuleSet::parse(&read(p)?).map_err(|e| PipelineError::Config(e.to_string())),
            None => Ok(default()),
        };
        let catalogue = PlaceholderCatalogue::default();
        catalogue.validate_library(&library).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Resources {
            marker_rules: rules(&self.paths.marker_rules, default_marker_rules)?,
            segment_rules: rules(&self.paths.segment_rules, default_segment_rules)?,
            library,
            catalogue,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Resources {
    pub library: NudgeLibrary,
    pub marker_rules: RuleSet,
    pub segment_rules: RuleSet,
    pub catalogue: PlaceholderCatalogue,
}
