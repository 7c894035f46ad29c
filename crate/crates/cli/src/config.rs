//! Scenario config: TOML file first, then flags on top.

use std::path::{Path, PathBuf};

use agentcare::scenario::ScenarioConfig;

use crate::{CliError, RunArgs, OUT_DIR_ENV};

pub fn load(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    let Some(path) = path else {
        return Ok(ScenarioConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Applies flag overrides. Baseline switches only turn components on.
pub fn apply(mut c: ScenarioConfig, a: &RunArgs) -> ScenarioConfig {
    if let Some(n) = a.users {
        c.cohort.n_users = n;
    }
    if let Some(d) = a.days {
        c.cohort.days = d;
    }
    if let Some(s) = a.seed {
        c.cohort.seed = s;
    }
    if let Some(p) = a.preset {
        c.preset = p.into();
    }
    c.baselines.static_reminders |= a.static_reminders;
    c.baselines.random_planner |= a.random_planner;
    c.baselines.naive_monitor |= a.naive_monitor;
    if let Some(o) = &a.out {
        c.output_dir = Some(o.clone());
    }
    c
}

pub fn resolve(a: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let c = apply(load(a.config.as_deref())?, a);
    c.validate()?;
    Ok(c)
}

pub fn out_dir(c: &ScenarioConfig) -> PathBuf {
    c.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("agentcare-out"))
}
