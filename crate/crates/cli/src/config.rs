//! Run configuration: one TOML document, validated before anything runs.

use std::fmt;
use std::path::Path;

use levylab_core::experiments::{
    ChainSetup, DensityConfig, FlowDiagnosticsConfig, KrylovConfig, ModelConfig, NoiseConfig, PeanoConfig,
    SampleConfig, ScalingConfig, SimulationConfig, ThresholdSweepConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Experiments reachable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    Sample,
    Simulate,
    Density,
    Peano,
    ThresholdSweep,
    Krylov,
    Scaling,
    FlowDiagnostics,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::Simulate => "simulate",
            Experiment::Density => "density",
            Experiment::Peano => "peano",
            Experiment::ThresholdSweep => "threshold-sweep",
            Experiment::Krylov => "krylov",
            Experiment::Scaling => "scaling",
            Experiment::FlowDiagnostics => "flow-diagnostics",
        }
    }

    /// Sections this experiment reads; any other section is rejected.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Experiment::Sample => &["sample"],
            Experiment::Simulate => &["noise", "model", "simulation"],
            Experiment::Density => &["density"],
            Experiment::Peano => &["peano"],
            Experiment::ThresholdSweep => &["threshold", "wellposedness"],
            Experiment::Krylov => &["krylov"],
            Experiment::Scaling => &["scaling"],
            Experiment::FlowDiagnostics => &["flow"],
        }
    }

    /// Section that must be present because it holds required keys.
    fn required_section(self) -> Option<&'static str> {
        match self {
            Experiment::Simulate => Some("noise"),
            Experiment::Density => Some("density"),
            Experiment::Peano => Some("peano"),
            Experiment::Krylov => Some("krylov"),
            Experiment::Scaling => Some("scaling"),
            Experiment::FlowDiagnostics => Some("flow"),
            Experiment::Sample | Experiment::ThresholdSweep => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-level Hölder exponents checked against the well-posedness thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellposednessConfig {
    pub alpha: f64,
    pub holder: Vec<f64>,
}

/// The whole configuration document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When present it must name the experiment being run.
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub noise: Option<NoiseConfig>,
    pub model: Option<ModelConfig>,
    pub simulation: Option<SimulationConfig>,
    pub sample: Option<SampleConfig>,
    pub density: Option<DensityConfig>,
    pub scaling: Option<ScalingConfig>,
    pub flow: Option<FlowDiagnosticsConfig>,
    pub threshold: Option<ThresholdSweepConfig>,
    pub wellposedness: Option<WellposednessConfig>,
    pub peano: Option<PeanoConfig>,
    pub krylov: Option<KrylovConfig>,
}

const TOP_LEVEL_KEYS: [&str; 3] = ["experiment", "seed", "workers"];

/// Reads the document at `path` (or an empty one) and applies `key=value` overrides.
pub fn load_document(path: Option<&Path>, overrides: &[String]) -> Result<toml::Table, CliError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    Ok(doc)
}

/// `a.b.c=value`; the value is read as TOML and falls back to a plain string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut cur = doc;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// Schema validation for one experiment.
pub fn validate(doc: toml::Table, experiment: Experiment) -> Result<RunConfig, CliError> {
    let allowed = experiment.sections();
    for key in doc.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
            return Err(CliError::Config(format!(
                "section `{key}` is not used by experiment `{experiment}` (allowed: {})",
                allowed.join(", ")
            )));
        }
    }
    if let Some(section) = experiment.required_section() {
        if !doc.contains_key(section) {
            return Err(CliError::Config(format!(
                "missing section `[{section}]`: required field `{section}.alpha` is absent"
            )));
        }
    }
    let cfg: RunConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string().trim_end().to_string()))?;
    if let Some(name) = &cfg.experiment {
        if name != experiment.name() {
            return Err(CliError::Config(format!(
                "`experiment = \"{name}\"` does not match the subcommand `{experiment}`"
            )));
        }
    }
    if cfg.workers == Some(0) {
        return Err(CliError::Config("`workers` must be at least 1".into()));
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn chain_setup(&self) -> Result<ChainSetup, CliError> {
        Ok(ChainSetup {
            noise: self
                .noise
                .clone()
                .ok_or_else(|| CliError::Config("missing field `noise.alpha`".into()))?,
            model: self.model.clone().unwrap_or_default(),
            simulation: self.simulation.clone().unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_create_sections_and_parse_values() {
        let mut doc = toml::Table::new();
        apply_override(&mut doc, "peano.alpha=1.5").unwrap();
        apply_override(&mut doc, "peano.starts=[10.0, 100.0]").unwrap();
        apply_override(&mut doc, "experiment=peano").unwrap();
        let cfg = validate(doc, Experiment::Peano).unwrap();
        let p = cfg.peano.unwrap();
        assert_eq!(p.alpha, 1.5);
        assert_eq!(p.starts, vec![10.0, 100.0]);
    }

    #[test]
    fn foreign_sections_and_missing_alpha_are_rejected() {
        let doc: toml::Table = "[krylov]\nalpha = 1.5\n".parse().unwrap();
        assert!(validate(doc, Experiment::Peano).is_err());
        let doc: toml::Table = "[peano]\nbeta = 0.3\n".parse().unwrap();
        let err = validate(doc, Experiment::Peano).unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");
        let doc: toml::Table = "[peano]\nalpha = 1.5\nbogus = 1\n".parse().unwrap();
        let err = validate(doc, Experiment::Peano).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }
}
