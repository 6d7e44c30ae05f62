//! Scenario files.
//!
//! A scenario is a TOML document whose keys are exactly the fields of
//! [`ScenarioConfig`]; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{ConfigError, ScenarioConfig};

const SCENARIO1: &str = include_str!("../scenarios/scenario1.toml");
const SCENARIO2: &str = include_str!("../scenarios/scenario2.toml");

/// Names of the scenarios shipped with the crate.
pub const BUILTIN_SCENARIOS: [&str; 2] = ["scenario1", "scenario2"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: {source}")]
    Invalid {
        origin: String,
        #[source]
        source: ConfigError,
    },
    #[error("unknown built-in scenario `{0}` (expected one of: scenario1, scenario2)")]
    UnknownBuiltin(String),
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parses and validates scenario text; `origin` names the source in errors.
pub fn parse_scenario_str(text: &str, origin: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ScenarioError::Parse {
            origin: origin.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate().map_err(|source| ScenarioError::Invalid {
        origin: origin.to_string(),
        source,
    })
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_str(&text, &path.display().to_string())
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let text = match name {
        "scenario1" => SCENARIO1,
        "scenario2" => SCENARIO2,
        other => return Err(ScenarioError::UnknownBuiltin(other.to_string())),
    };
    parse_scenario_str(text, name)
}

/// Source text of a built-in scenario, for users who want a starting point.
pub fn builtin_scenario_text(name: &str) -> Option<&'static str> {
    match name {
        "scenario1" => Some(SCENARIO1),
        "scenario2" => Some(SCENARIO2),
        _ => None,
    }
}
