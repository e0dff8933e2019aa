//! Experiment dispatch and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use levylab_core::experiments::{
    density_experiment, flow_diagnostics, krylov_diagnostic, peano_experiment, sample_experiment, scaling_experiment,
    simulate_experiment, threshold_sweep, wellposedness_validator,
};
use levylab_core::report::{ExperimentReport, Status};
use levylab_core::sde_engine::PathEnsemble;

use crate::config::{Experiment, RunConfig};
use crate::error::CliError;

/// Reports of one run, plus the path ensemble of `simulate`.
pub struct RunOutput {
    pub reports: Vec<ExperimentReport>,
    pub ensemble: Option<PathEnsemble>,
}

impl RunOutput {
    /// Fail beats inconclusive beats pass.
    pub fn status(&self) -> Status {
        self.reports.iter().map(|r| r.status()).max().unwrap_or(Status::Pass)
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing section `[{section}]`: required field `{section}.alpha` is absent"))
}

pub fn execute(experiment: Experiment, cfg: &RunConfig, seed: u64) -> Result<RunOutput, CliError> {
    let single = |r: ExperimentReport| RunOutput {
        reports: vec![r],
        ensemble: None,
    };
    Ok(match experiment {
        Experiment::Sample => single(sample_experiment(&cfg.sample.clone().unwrap_or_default(), seed)?),
        Experiment::Simulate => {
            let (report, ensemble) = simulate_experiment(&cfg.chain_setup()?, seed)?;
            RunOutput {
                reports: vec![report],
                ensemble: Some(ensemble),
            }
        }
        Experiment::Density => single(density_experiment(cfg.density.as_ref().ok_or_else(|| missing("density"))?, seed)?),
        Experiment::Peano => single(peano_experiment(cfg.peano.as_ref().ok_or_else(|| missing("peano"))?, seed)?),
        Experiment::ThresholdSweep => {
            let mut reports = vec![threshold_sweep(&cfg.threshold.clone().unwrap_or_default(), seed)?];
            if let Some(w) = &cfg.wellposedness {
                reports.push(wellposedness_validator(w.alpha, &w.holder, seed)?);
            }
            RunOutput {
                reports,
                ensemble: None,
            }
        }
        Experiment::Krylov => single(krylov_diagnostic(cfg.krylov.as_ref().ok_or_else(|| missing("krylov"))?, seed)?),
        Experiment::Scaling => single(scaling_experiment(cfg.scaling.as_ref().ok_or_else(|| missing("scaling"))?, seed)?),
        Experiment::FlowDiagnostics => single(flow_diagnostics(cfg.flow.as_ref().ok_or_else(|| missing("flow"))?, seed)?),
    })
}

/// Writes `<experiment>-<table>.csv`, `<experiment>-claims.csv`, `summary.txt` and,
/// for `simulate`, `ensemble.csv`. Returns the written paths in order.
pub fn write_artifacts(out: &Path, output: &RunOutput) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut written = vec![];
    let mut put = |name: String, body: &str| -> Result<(), CliError> {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };
    let mut summary = String::new();
    for r in &output.reports {
        for t in &r.tables {
            put(format!("{}-{}.csv", r.experiment, t.name), &r.table_csv(t))?;
        }
        put(format!("{}-claims.csv", r.experiment), &r.claims_csv())?;
        summary.push_str(&r.summary());
        summary.push('\n');
    }
    put("summary.txt".into(), &summary)?;
    if let Some(ens) = &output.ensemble {
        let path = out.join("ensemble.csv");
        let file = fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        ens.write_csv(std::io::BufWriter::new(file))?;
        written.push(path);
    }
    Ok(written)
}

/// 0 pass, 2 fail, 3 inconclusive; errors map to 1 in `main`.
pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::Pass | Status::ReportOnly => 0,
        Status::Fail => 2,
        Status::Inconclusive => 3,
    }
}
