//! Krylov-type estimate: `E ∫ f(X_s) ds` against the `L^p_t L^q_x` norm of Gaussian bumps.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::report::{fmt_f64, ExperimentReport, Status, Table};
use crate::rng::SeedTree;
use crate::sde_engine::{run_paths, Dynamics, PathObserver, SimulationPlan};

use super::{DriftConfig, ModelConfig, NoiseConfig};

/// Integrability pair `(p, q)` for time and space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integrability {
    pub p: f64,
    pub q: f64,
}

impl Integrability {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p > 1.0 && q > 1.0) {
            return Err(LabError::config(format!("krylov needs p, q > 1, got p={p}, q={q}")));
        }
        Ok(Integrability { p, q })
    }

    /// Left side of the condition for block sizes `dims`; the condition is `< 1`.
    pub fn condition_lhs(&self, alpha: f64, dims: &[usize]) -> f64 {
        let total: usize = dims.iter().sum();
        let weighted: usize = dims.iter().enumerate().map(|(k, d)| (k + 1) * d).sum();
        ((1.0 - alpha) / alpha * total as f64 + weighted as f64) / self.q + 1.0 / self.p
    }

    /// Left side of the homogeneous form with `n` levels of size `d`; the condition is `< 2`.
    pub fn homogeneous_lhs(&self, alpha: f64, n: usize, d: usize) -> f64 {
        (2.0 + alpha * (n as f64 - 1.0)) / alpha * (n * d) as f64 / self.q + 2.0 / self.p
    }

    pub fn holds(&self, alpha: f64, dims: &[usize]) -> bool {
        self.condition_lhs(alpha, dims) < 1.0
    }
}

/// `‖f_ε‖_{L^p(0,T; L^q(R^N))}` of `f_ε(x) = exp(-|x - c|²/(2ε²))`.
pub fn bump_norm(width: f64, horizon: f64, dim: usize, pair: Integrability) -> f64 {
    horizon.powf(1.0 / pair.p) * (2.0 * PI * width * width / pair.q).powf(dim as f64 / (2.0 * pair.q))
}

mod defaults {
    use super::*;

    pub fn model() -> ModelConfig {
        ModelConfig::with_drift(2, DriftConfig::Peano { i: 2, j: 2, beta: 0.7 })
    }
    pub fn pair() -> Integrability {
        Integrability { p: 10.0, q: 14.0 }
    }
    pub fn contrast() -> Option<Integrability> {
        Some(Integrability { p: 10.0, q: 1.2 })
    }
    pub fn widths() -> Vec<f64> {
        vec![1.0, 0.3, 0.1]
    }
    pub fn horizon() -> f64 {
        1.0
    }
    pub fn dt() -> f64 {
        1e-3
    }
    pub fn paths() -> usize {
        100_000
    }
    pub fn ratio_bound() -> f64 {
        2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KrylovConfig {
    pub alpha: f64,
    #[serde(default = "defaults::model")]
    pub model: ModelConfig,
    #[serde(default = "defaults::pair")]
    pub pair: Integrability,
    /// Second pair reported for comparison only.
    #[serde(default = "defaults::contrast")]
    pub contrast: Option<Integrability>,
    #[serde(default = "defaults::widths")]
    pub widths: Vec<f64>,
    /// Starting point; the origin when absent.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    /// Bump centre; the start when absent.
    #[serde(default)]
    pub centre: Option<Vec<f64>>,
    #[serde(default = "defaults::horizon")]
    pub horizon: f64,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::paths")]
    pub paths: usize,
    #[serde(default = "defaults::ratio_bound")]
    pub ratio_bound: f64,
}

impl KrylovConfig {
    pub fn new(alpha: f64) -> Self {
        KrylovConfig {
            alpha,
            model: defaults::model(),
            pair: defaults::pair(),
            contrast: defaults::contrast(),
            widths: defaults::widths(),
            start: None,
            centre: None,
            horizon: defaults::horizon(),
            dt: defaults::dt(),
            paths: defaults::paths(),
            ratio_bound: defaults::ratio_bound(),
        }
    }
}

struct BumpIntegrals<'a> {
    centre: &'a [f64],
    inv_two_var: Vec<f64>,
    prev_t: f64,
    prev_values: Vec<f64>,
    sums: Vec<f64>,
}

impl BumpIntegrals<'_> {
    fn evaluate(&mut self, x: &[f64]) {
        let r2: f64 = x.iter().zip(self.centre).map(|(a, c)| (a - c) * (a - c)).sum();
        for (v, k) in self.prev_values.iter_mut().zip(&self.inv_two_var) {
            *v = (-r2 * k).exp();
        }
    }
}

impl PathObserver for BumpIntegrals<'_> {
    type Output = Vec<f64>;

    fn observe(&mut self, t: f64, x: &[f64]) -> bool {
        if t > self.prev_t {
            let dt = t - self.prev_t;
            for (s, v) in self.sums.iter_mut().zip(&self.prev_values) {
                *s += v * dt;
            }
        }
        self.prev_t = t;
        self.evaluate(x);
        true
    }

    fn finish(self) -> Vec<f64> {
        self.sums
    }
}

pub fn krylov_diagnostic(cfg: &KrylovConfig, seed: u64) -> Result<ExperimentReport> {
    let pair = Integrability::new(cfg.pair.p, cfg.pair.q)?;
    if cfg.widths.len() < 2 || cfg.widths.iter().any(|w| !(*w > 0.0)) {
        return Err(LabError::config("krylov.widths needs at least two positive widths"));
    }
    if cfg.paths == 0 || !(cfg.dt > 0.0 && cfg.dt < cfg.horizon) {
        return Err(LabError::config("krylov needs paths > 0 and 0 < dt < horizon"));
    }
    let noise = NoiseConfig::stable(cfg.alpha);
    let model = cfg.model.build(&noise)?;
    let shape = model.shape().clone();
    let n = shape.total();
    let dims = shape.dims().to_vec();
    let start = cfg.start.clone().unwrap_or_else(|| vec![0.0; n]);
    let centre = cfg.centre.clone().unwrap_or_else(|| start.clone());
    if start.len() != n || centre.len() != n {
        return Err(LabError::config(format!("krylov.start and krylov.centre need {n} entries")));
    }
    let holds = pair.holds(cfg.alpha, &dims);

    let mut report = ExperimentReport::new("krylov", seed);
    report.param("alpha", cfg.alpha);
    report.param("levels", shape.levels());
    report.param("drift", model.drift.label());
    report.param("p", pair.p);
    report.param("q", pair.q);
    report.param("condition_lhs", fmt_f64(pair.condition_lhs(cfg.alpha, &dims)));
    report.param("horizon", cfg.horizon);
    report.param("dt", cfg.dt);
    report.param("paths", cfg.paths);

    let mut widths = cfg.widths.clone();
    widths.sort_by(|a, b| b.total_cmp(a));
    let plan = SimulationPlan::new(
        model,
        start,
        cfg.horizon,
        cfg.dt,
        cfg.paths,
        SeedTree::new(seed).named("krylov").fingerprint(),
    );
    let inv_two_var: Vec<f64> = widths.iter().map(|w| 1.0 / (2.0 * w * w)).collect();
    let per_path = run_paths(&plan, &Dynamics::Chain, |_| BumpIntegrals {
        centre: &centre,
        inv_two_var: inv_two_var.clone(),
        prev_t: 0.0,
        prev_values: vec![0.0; widths.len()],
        sums: vec![0.0; widths.len()],
    })?;
    let mut means = vec![0.0; widths.len()];
    let mut squares = vec![0.0; widths.len()];
    for v in &per_path {
        for k in 0..widths.len() {
            means[k] += v[k];
            squares[k] += v[k] * v[k];
        }
    }
    let m = per_path.len() as f64;
    let stderr: Vec<f64> = (0..widths.len())
        .map(|k| {
            let mean = means[k] / m;
            ((squares[k] / m - mean * mean).max(0.0) / m).sqrt()
        })
        .collect();
    means.iter_mut().for_each(|v| *v /= m);

    let mut pairs = vec![(pair, "main")];
    if let Some(c) = cfg.contrast {
        pairs.push((Integrability::new(c.p, c.q)?, "contrast"));
    }
    let mut table = Table::new(
        "constants",
        &["role", "p", "q", "condition_holds", "width", "expectation", "stderr", "norm", "constant"],
    );
    for (pq, role) in pairs {
        let ok = pq.holds(cfg.alpha, &dims);
        let constants: Vec<f64> = widths
            .iter()
            .zip(&means)
            .map(|(w, e)| e / bump_norm(*w, cfg.horizon, n, pq))
            .collect();
        for k in 0..widths.len() {
            table.push(vec![
                role.into(),
                pq.p.into(),
                pq.q.into(),
                ok.into(),
                widths[k].into(),
                means[k].into(),
                stderr[k].into(),
                bump_norm(widths[k], cfg.horizon, n, pq).into(),
                constants[k].into(),
            ]);
        }
        let (a, b) = (constants[constants.len() - 2], constants[constants.len() - 1]);
        let growth = b / a;
        let finest = format!(
            "widths {} to {}",
            fmt_f64(widths[widths.len() - 2]),
            fmt_f64(widths[widths.len() - 1])
        );
        let status = if role == "main" && holds {
            Status::from_bool(growth.is_finite() && growth < cfg.ratio_bound)
        } else {
            Status::ReportOnly
        };
        report.claim(
            &format!("constant-growth-{role}"),
            format!(
                "E int f / norm grows by less than {}x from the second finest to the finest width (p={}, q={}, condition {})",
                cfg.ratio_bound,
                fmt_f64(pq.p),
                fmt_f64(pq.q),
                if ok { "holds" } else { "fails" }
            ),
            growth,
            finest.clone(),
            status,
        );
        report.claim(
            &format!("constant-spread-{role}"),
            "largest over smallest constant at the two finest widths",
            a.max(b) / a.min(b),
            finest,
            Status::ReportOnly,
        );
    }
    report.tables.push(table);
    if !holds {
        report
            .notes
            .push("the main pair violates the integrability condition; its ratio is report-only".into());
    }
    Ok(report)
}
