//! Plain path simulation with a terminal summary.

use crate::error::Result;
use crate::report::{ExperimentReport, Table};
use crate::sde_engine::{simulate_chain, PathEnsemble};

use super::ChainSetup;

/// Simulates the configured chain; the ensemble is returned for artifact writing.
pub fn simulate_experiment(setup: &ChainSetup, seed: u64) -> Result<(ExperimentReport, PathEnsemble)> {
    let plan = setup.plan(seed)?;
    let ensemble = simulate_chain(&plan)?;
    let mut report = ExperimentReport::new("simulate", seed);
    report.param("alpha", setup.noise.alpha);
    report.param("levels", setup.model.levels);
    report.param("drift", plan.model.drift.label());
    report.param("paths", plan.paths);
    report.param("horizon", plan.horizon);
    report.param("base_step", plan.step.base_step());
    report.param("recorded_times", ensemble.times.len());
    let mut summary = Table::new(
        "terminal_summary",
        &["coordinate", "median", "q05", "q25", "q75", "q95", "mean_abs"],
    );
    for c in 0..ensemble.dim {
        let mut v = ensemble.terminal(c);
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        let mean_abs = v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
        summary.push(vec![
            (c + 1).into(),
            q(0.5).into(),
            q(0.05).into(),
            q(0.25).into(),
            q(0.75).into(),
            q(0.95).into(),
            mean_abs.into(),
        ]);
    }
    report.tables.push(summary);
    Ok((report, ensemble))
}
