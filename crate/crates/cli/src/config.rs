//! Batch job schema. A config names one scenario, its parameter block, the
//! RNG seed, and the output destination; unknown keys anywhere are errors.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Measure,
    Protocol,
    Photodetect,
    Homodyne,
    Fluorescence,
    Dispersive,
    Sterngerlach,
    Decohere,
    Bell,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Measure => "measure",
            Scenario::Protocol => "protocol",
            Scenario::Photodetect => "photodetect",
            Scenario::Homodyne => "homodyne",
            Scenario::Fluorescence => "fluorescence",
            Scenario::Dispersive => "dispersive",
            Scenario::Sterngerlach => "sterngerlach",
            Scenario::Decohere => "decohere",
            Scenario::Bell => "bell",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    pub format: OutputFormat,
}

/// The `params` block stays an untyped value here; each scenario parses it
/// against its own schema when the job is prepared.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub params: serde_json::Value,
    pub seed: u64,
    pub output: OutputSpec,
}

pub fn load(path: &Path) -> anyhow::Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
