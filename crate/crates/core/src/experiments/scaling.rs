//! Anisotropic time scaling of the noise-only chain.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::ChainModel;
use crate::report::{fmt_f64, ExperimentReport, Status, Table};
use crate::rng::SeedTree;
use crate::scale_geometry::ChainShape;
use crate::sde_engine::{run_paths, Dynamics, PathObserver, RecordGrid, SimulationPlan};
use crate::stats::log_log_slope;

use super::NoiseConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub alpha: f64,
    #[serde(default = "defaults::levels")]
    pub levels: usize,
    #[serde(default = "defaults::paths")]
    pub paths: usize,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::horizon")]
    pub horizon: f64,
    /// First fitting time.
    #[serde(default = "defaults::t_min")]
    pub t_min: f64,
    #[serde(default = "defaults::points")]
    pub points: usize,
    #[serde(default = "defaults::moment")]
    pub moment: f64,
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
}

mod defaults {
    pub fn levels() -> usize {
        3
    }
    pub fn paths() -> usize {
        100_000
    }
    pub fn dt() -> f64 {
        1e-3
    }
    pub fn horizon() -> f64 {
        1.0
    }
    pub fn t_min() -> f64 {
        0.05
    }
    pub fn points() -> usize {
        10
    }
    pub fn moment() -> f64 {
        0.5
    }
    pub fn tolerance() -> f64 {
        0.05
    }
}

impl ScalingConfig {
    pub fn new(alpha: f64) -> Self {
        ScalingConfig {
            alpha,
            levels: defaults::levels(),
            paths: defaults::paths(),
            dt: defaults::dt(),
            horizon: defaults::horizon(),
            t_min: defaults::t_min(),
            points: defaults::points(),
            moment: defaults::moment(),
            tolerance: defaults::tolerance(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.paths == 0 || self.points < 2 {
            return Err(LabError::config("scaling.levels, paths and points must be positive (points >= 2)"));
        }
        if !(self.dt > 0.0 && self.t_min > self.dt && self.horizon > self.t_min) {
            return Err(LabError::config("scaling needs 0 < dt < t_min < horizon"));
        }
        if !(self.moment > 0.0 && self.moment < self.alpha) {
            return Err(LabError::config("scaling.moment must lie in (0, alpha)"));
        }
        Ok(())
    }
}

/// Scaling exponent `(i - 1) + 1/α` of level `i` (1-based).
pub fn level_exponent(alpha: f64, level: usize) -> f64 {
    level as f64 - 1.0 + 1.0 / alpha
}

struct MomentObserver<'a> {
    times: &'a [f64],
    next: usize,
    moment: f64,
    values: Vec<f64>,
}

impl PathObserver for MomentObserver<'_> {
    type Output = Vec<f64>;

    fn observe(&mut self, t: f64, x: &[f64]) -> bool {
        if self.next < self.times.len() && (t - self.times[self.next]).abs() <= 1e-9 * t.max(1.0) {
            self.values.extend(x.iter().map(|v| v.abs().powf(self.moment)));
            self.next += 1;
        }
        self.next < self.times.len()
    }

    fn finish(self) -> Vec<f64> {
        self.values
    }
}

pub fn scaling_experiment(cfg: &ScalingConfig, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let shape = ChainShape::scalar(cfg.levels)?;
    let model = ChainModel::noise_only(shape, NoiseConfig::stable(cfg.alpha).build()?)?;
    let times: Vec<f64> = (0..cfg.points)
        .map(|k| {
            let u = k as f64 / (cfg.points - 1) as f64;
            (cfg.t_min.ln() + u * (cfg.horizon.ln() - cfg.t_min.ln())).exp()
        })
        .collect();
    let plan = SimulationPlan {
        record: RecordGrid::Times { times: times.clone() },
        ..SimulationPlan::new(
            model,
            vec![0.0; cfg.levels],
            cfg.horizon,
            cfg.dt,
            cfg.paths,
            SeedTree::new(seed).named("scaling").fingerprint(),
        )
    };
    let out = run_paths(&plan, &Dynamics::Chain, |_| MomentObserver {
        times: &times,
        next: 0,
        moment: cfg.moment,
        values: Vec::with_capacity(times.len() * cfg.levels),
    })?;
    let n = cfg.levels;
    let mut sums = vec![0.0; times.len() * n];
    for v in &out {
        for (s, x) in sums.iter_mut().zip(v) {
            *s += x;
        }
    }
    let paths = out.len() as f64;
    let mut report = ExperimentReport::new("scaling", seed);
    report.param("alpha", cfg.alpha);
    report.param("levels", n);
    report.param("paths", cfg.paths);
    report.param("dt", cfg.dt);
    report.param("moment", cfg.moment);
    let mut moments = Table::new("moments", &["t", "level", "moment"]);
    let mut fits = Table::new("exponents", &["level", "slope", "fitted_exponent", "expected", "rel_error"]);
    for level in 1..=n {
        let series: Vec<f64> = (0..times.len()).map(|k| sums[k * n + level - 1] / paths).collect();
        for (t, m) in times.iter().zip(&series) {
            moments.push(vec![(*t).into(), level.into(), (*m).into()]);
        }
        let slope = log_log_slope(&times, &series);
        let fitted = slope / cfg.moment;
        let expected = level_exponent(cfg.alpha, level);
        let rel = (fitted / expected - 1.0).abs();
        fits.push(vec![level.into(), slope.into(), fitted.into(), expected.into(), rel.into()]);
        report.claim(
            &format!("exponent-level-{level}"),
            format!(
                "log-log slope of E|X^{level}_t|^p divided by p equals {}",
                fmt_f64(expected)
            ),
            fitted,
            format!("relative tolerance {}", cfg.tolerance),
            Status::from_bool(rel <= cfg.tolerance),
        );
    }
    report.tables.push(moments);
    report.tables.push(fits);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponents_of_a_three_level_chain() {
        assert!((level_exponent(1.5, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((level_exponent(1.5, 3) - 8.0 / 3.0).abs() < 1e-15);
    }
}
