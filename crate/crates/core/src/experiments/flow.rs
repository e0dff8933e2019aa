//! Flow diagnostics: identities of the frozen shift and the mollified-flow controls.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flows::{
    flow_jacobian_det, frozen_shift, mollified_flow_gap, mollify_drift, solve_flow, wellposedness_threshold,
    DriftSpec, FlowConfig, MollifierConstants, MollifierSchedule,
};
use crate::report::{fmt_f64, ExperimentReport, Status, Table};
use crate::rng::SeedTree;
use crate::scale_geometry::{scale_matrix, ChainMatrix, ChainShape, Resolvent};

use super::{DriftConfig, MatrixConfig, ModelConfig, NoiseConfig};

mod defaults {
    use super::*;

    pub fn identity_model() -> ModelConfig {
        ModelConfig {
            matrix: MatrixConfig::Constant {
                rows: vec![vec![0.1, 0.0], vec![1.0, -0.3]],
            },
            ..ModelConfig::with_drift(2, DriftConfig::Sine { amplitude: 0.5 })
        }
    }
    pub fn draws() -> usize {
        100
    }
    pub fn tol() -> f64 {
        1e-8
    }
    pub fn tolerance_factor() -> f64 {
        10.0
    }
    pub fn betas() -> Vec<f64> {
        vec![0.5]
    }
    pub fn gaps() -> Vec<f64> {
        vec![1.0, 0.1, 0.01, 0.001]
    }
    pub fn points_per_axis() -> usize {
        5
    }
    pub fn scaled_radius() -> f64 {
        2.0
    }
    pub fn gap_growth() -> f64 {
        2.0
    }
    pub fn det_floor_ratio() -> f64 {
        0.5
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDiagnosticsConfig {
    pub alpha: f64,
    /// Chain on which the identities are checked.
    #[serde(default = "defaults::identity_model")]
    pub identity_model: ModelConfig,
    #[serde(default = "defaults::draws")]
    pub draws: usize,
    /// Integration tolerance of every flow solve.
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    /// Identities must hold to this multiple of `tol`.
    #[serde(default = "defaults::tolerance_factor")]
    pub tolerance_factor: f64,
    /// Exponents of the two-level drift `sgn(x_2)|x_2|^β` in the mollification sweep.
    #[serde(default = "defaults::betas")]
    pub betas: Vec<f64>,
    #[serde(default = "defaults::gaps")]
    pub gaps: Vec<f64>,
    #[serde(default = "defaults::points_per_axis")]
    pub points_per_axis: usize,
    /// Half-width of the evaluation grid in scaled units.
    #[serde(default = "defaults::scaled_radius")]
    pub scaled_radius: f64,
    /// Accepted growth of the largest gap from the coarsest to the finest time gap.
    #[serde(default = "defaults::gap_growth")]
    pub gap_growth: f64,
    /// Accepted fraction of the coarsest determinant floor at the finest time gap.
    #[serde(default = "defaults::det_floor_ratio")]
    pub det_floor_ratio: f64,
}

impl FlowDiagnosticsConfig {
    pub fn new(alpha: f64) -> Self {
        FlowDiagnosticsConfig {
            alpha,
            identity_model: defaults::identity_model(),
            draws: defaults::draws(),
            tol: defaults::tol(),
            tolerance_factor: defaults::tolerance_factor(),
            betas: defaults::betas(),
            gaps: defaults::gaps(),
            points_per_axis: defaults::points_per_axis(),
            scaled_radius: defaults::scaled_radius(),
            gap_growth: defaults::gap_growth(),
            det_floor_ratio: defaults::det_floor_ratio(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.draws == 0 {
            return Err(LabError::config("flow-diagnostics needs tol > 0 and draws > 0"));
        }
        if self.gaps.len() < 2 || self.gaps.iter().any(|g| !(*g > 0.0)) || self.points_per_axis == 0 {
            return Err(LabError::config("flow-diagnostics needs two positive gaps and a non-empty grid"));
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Largest violations of the three identities over random draws.
fn identity_errors(drift: &DriftSpec, matrix: &ChainMatrix, cfg: &FlowDiagnosticsConfig, seed: u64) -> Result<[f64; 3]> {
    let n = drift.shape().total();
    let flow = FlowConfig {
        tol: cfg.tol,
        ..FlowConfig::default()
    };
    let resolvent = Resolvent::new(matrix, cfg.tol * 1e-2);
    let mut rng = SeedTree::new(seed).named("flow/identities").stream(0);
    let mut worst = [0.0f64; 3];
    for _ in 0..cfg.draws {
        let t: f64 = rng.random();
        let s = t + 0.01 + rng.random::<f64>();
        let tau = 2.0 * rng.random::<f64>();
        let mut point = || -> Vec<f64> { (0..n).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect() };
        let (x, y, xi) = (point(), point(), point());

        // Freezing at (t, x) reproduces the flow itself.
        let forward = solve_flow(drift, matrix, t, &x, s, &flow)?;
        let m = frozen_shift(drift, matrix, t, &x, t, s, &x, &flow)?;
        worst[0] = worst[0].max(dist(&m, forward.end_value()));

        // y - m̃^{s,y}_{s,t}(x) = R_{s,t}(θ_{t,s}(y) - x).
        let back = solve_flow(drift, matrix, s, &y, t, &flow)?;
        let m = frozen_shift(drift, matrix, s, &y, t, s, &x, &flow)?;
        let lhs: Vec<f64> = y.iter().zip(&m).map(|(a, b)| a - b).collect();
        let diff = DVector::from_iterator(n, back.end_value().iter().zip(&x).map(|(a, b)| a - b));
        let rhs = resolvent.between(s, t)? * diff;
        worst[1] = worst[1].max(dist(&lhs, rhs.as_slice()));

        // Along the frozen flow the shift transports θ_{t,τ}(ξ) to θ_{s,τ}(ξ).
        let at_t = solve_flow(drift, matrix, tau, &xi, t, &flow)?;
        let at_s = solve_flow(drift, matrix, tau, &xi, s, &flow)?;
        let m = frozen_shift(drift, matrix, tau, &xi, t, s, at_t.end_value(), &flow)?;
        worst[2] = worst[2].max(dist(&m, at_s.end_value()));
    }
    Ok(worst)
}

pub fn flow_diagnostics(cfg: &FlowDiagnosticsConfig, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new("flow-diagnostics", seed);
    report.param("alpha", cfg.alpha);
    report.param("tol", fmt_f64(cfg.tol));
    report.param("draws", cfg.draws);

    let noise = NoiseConfig::stable(cfg.alpha);
    let model = cfg.identity_model.build(&noise)?;
    report.param("identity_drift", model.drift.label());
    let lipschitz = model.drift.holder().iter().all(|h| *h >= 1.0);
    let errors = identity_errors(&model.drift, &model.matrix, cfg, seed)?;
    let bound = cfg.tolerance_factor * cfg.tol;
    let mut ids = Table::new("identities", &["identity", "max_error", "bound"]);
    let statements = [
        "freezing at the start point reproduces the flow",
        "y - m(x) equals the resolvent applied to the backward flow minus x",
        "the frozen shift transports the frozen flow",
    ];
    for (k, (err, text)) in errors.iter().zip(statements).enumerate() {
        ids.push(vec![(k + 1).into(), (*err).into(), bound.into()]);
        report.claim(
            &format!("identity-{}", k + 1),
            text,
            *err,
            format!("max error over {} draws, bound {}", cfg.draws, fmt_f64(bound)),
            if lipschitz {
                Status::from_bool(*err <= bound)
            } else {
                Status::ReportOnly
            },
        );
    }
    report.tables.push(ids);
    if !lipschitz {
        report
            .notes
            .push("identity drift is not Lipschitz: flows may branch, identities are report-only".into());
    }

    // Mollification sweep on the two-level chain with drift sgn(x_2)|x_2|^β in level 2.
    let shape = ChainShape::scalar(2)?;
    let nil = ChainMatrix::nilpotent(shape.clone());
    let flow = FlowConfig {
        tol: cfg.tol,
        ..FlowConfig::default()
    };
    let threshold = wellposedness_threshold(cfg.alpha, 2);
    let mut sweep = Table::new("mollification", &["beta", "gap", "max_scaled_gap", "min_det"]);
    let k = cfg.points_per_axis;
    let offsets: Vec<f64> = (0..k)
        .map(|l| if k == 1 { 0.0 } else { -cfg.scaled_radius + 2.0 * cfg.scaled_radius * l as f64 / (k - 1) as f64 })
        .collect();
    for &beta in &cfg.betas {
        let drift = DriftSpec::peano(shape.clone(), 2, 2, beta)?;
        let mut gaps_max = vec![];
        let mut det_min = vec![];
        for &h in &cfg.gaps {
            let mf = mollify_drift(&drift, cfg.alpha, h, MollifierSchedule::FlowControl, &MollifierConstants::default())?;
            let md =
                mollify_drift(&drift, cfg.alpha, h, MollifierSchedule::JacobianControl, &MollifierConstants::default())?;
            let sc = scale_matrix(&shape, cfg.alpha, h);
            let (mut g, mut d) = (0.0f64, f64::INFINITY);
            for &a in &offsets {
                for &b in &offsets {
                    let y = [a / sc.t_inv[0], b / sc.t_inv[1]];
                    g = g.max(mollified_flow_gap(&drift, &mf, &nil, cfg.alpha, 0.0, h, &y, &flow)?);
                    d = d.min(flow_jacobian_det(&md, &nil, 0.0, h, &y, cfg.tol)?);
                }
            }
            sweep.push(vec![beta.into(), h.into(), g.into(), d.into()]);
            gaps_max.push(g);
            det_min.push(d);
        }
        let above = beta > threshold;
        let gate = |ok: bool| if above { Status::from_bool(ok) } else { Status::ReportOnly };
        let (first, last) = (gaps_max[0], gaps_max[gaps_max.len() - 1]);
        let worst_gap = gaps_max.iter().cloned().fold(0.0, f64::max);
        report.claim(
            &format!("gap-bounded-beta-{}", fmt_f64(beta)),
            format!(
                "scaled gap between exact and mollified flows stays bounded as s - t shrinks (finest <= {} x coarsest)",
                cfg.gap_growth
            ),
            worst_gap,
            format!("coarsest {}, finest {}", fmt_f64(first), fmt_f64(last)),
            gate(worst_gap.is_finite() && last <= cfg.gap_growth * first),
        );
        let (d_first, d_last) = (det_min[0], det_min[det_min.len() - 1]);
        let floor = det_min.iter().cloned().fold(f64::INFINITY, f64::min);
        report.claim(
            &format!("det-floor-beta-{}", fmt_f64(beta)),
            format!(
                "Jacobian determinant of the mollified flow stays positive (finest floor >= {} x coarsest)",
                cfg.det_floor_ratio
            ),
            floor,
            format!("coarsest {}, finest {}", fmt_f64(d_first), fmt_f64(d_last)),
            gate(floor > 0.0 && d_last >= cfg.det_floor_ratio * d_first),
        );
        if !above {
            report.notes.push(format!(
                "beta = {} is not above the well-posedness threshold {}: sweep is report-only",
                fmt_f64(beta),
                fmt_f64(threshold)
            ));
        }
    }
    report.tables.push(sweep);
    Ok(report)
}
