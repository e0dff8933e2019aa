//! Proxy density by Fourier inversion: closed forms, normalisation, histograms, smoothing rates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::levy_noise::{inversion_stable, SpectralAtom, SpectralMeasure};
use crate::model::ChainModel;
use crate::proxy_density::{
    derivative_bound_check, invert_density, invert_on_grid, marginal_chi_square, FrozenSymbolContext, InversionGrid,
    MarginalLaw, Multiplier, ProxyConfig,
};
use crate::report::{fmt_f64, ExperimentReport, Status, Table};
use crate::rng::SeedTree;
use crate::scale_geometry::ChainShape;
use crate::sde_engine::{run_paths, Dynamics, PathObserver, SimulationPlan};

use super::{ModelConfig, NoiseConfig};

mod defaults {
    pub fn gap() -> f64 {
        1.0
    }
    pub fn paths() -> usize {
        100_000
    }
    pub fn dt() -> f64 {
        1e-3
    }
    pub fn bins() -> usize {
        20
    }
    pub fn level() -> f64 {
        0.01
    }
    pub fn tolerance() -> f64 {
        1e-4
    }
    pub fn orders() -> Vec<u32> {
        vec![1, 2]
    }
    pub fn levels() -> Vec<usize> {
        vec![1, 2]
    }
    pub fn gaps() -> Vec<f64> {
        vec![0.1, 0.01, 0.001]
    }
    pub fn slope_tolerance() -> f64 {
        0.05
    }
    pub fn yes() -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub alpha: f64,
    #[serde(default)]
    pub model: ModelConfig,
    /// Time gap `s - t` of the histogram comparison.
    #[serde(default = "defaults::gap")]
    pub gap: f64,
    #[serde(default = "defaults::paths")]
    pub paths: usize,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::bins")]
    pub bins: usize,
    #[serde(default = "defaults::level")]
    pub chi_square_level: f64,
    #[serde(default = "defaults::tolerance")]
    pub mass_tolerance: f64,
    #[serde(default = "defaults::tolerance")]
    pub peak_tolerance: f64,
    #[serde(default = "defaults::yes")]
    pub cauchy_check: bool,
    #[serde(default = "defaults::orders")]
    pub derivative_orders: Vec<u32>,
    /// 1-based levels differentiated in the smoothing check.
    #[serde(default = "defaults::levels")]
    pub derivative_levels: Vec<usize>,
    #[serde(default = "defaults::gaps")]
    pub derivative_gaps: Vec<f64>,
    #[serde(default = "defaults::slope_tolerance")]
    pub slope_tolerance: f64,
    #[serde(default)]
    pub grid: InversionGrid,
}

impl DensityConfig {
    pub fn new(alpha: f64) -> Self {
        DensityConfig {
            alpha,
            model: ModelConfig::default(),
            gap: defaults::gap(),
            paths: defaults::paths(),
            dt: defaults::dt(),
            bins: defaults::bins(),
            chi_square_level: defaults::level(),
            mass_tolerance: defaults::tolerance(),
            peak_tolerance: defaults::tolerance(),
            cauchy_check: true,
            derivative_orders: defaults::orders(),
            derivative_levels: defaults::levels(),
            derivative_gaps: defaults::gaps(),
            slope_tolerance: defaults::slope_tolerance(),
            grid: InversionGrid::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gap > 0.0 && self.dt > 0.0 && self.dt < self.gap) || self.bins < 2 {
            return Err(LabError::config("density needs 0 < dt < gap and at least 2 bins"));
        }
        if self.derivative_gaps.len() < 2 || self.derivative_gaps.iter().any(|g| !(*g > 0.0)) {
            return Err(LabError::config("density.derivative_gaps needs at least two positive gaps"));
        }
        if self.derivative_levels.iter().any(|l| *l == 0 || *l > self.model.levels) {
            return Err(LabError::config("density.derivative_levels must be 1-based levels of the chain"));
        }
        Ok(())
    }
}

struct TerminalState(Vec<f64>);

impl PathObserver for TerminalState {
    type Output = Vec<f64>;

    fn observe(&mut self, _t: f64, x: &[f64]) -> bool {
        self.0.clear();
        self.0.extend_from_slice(x);
        true
    }

    fn finish(self) -> Vec<f64> {
        self.0
    }
}

fn unchecked(grid: &InversionGrid) -> InversionGrid {
    InversionGrid {
        mass_tolerance: f64::INFINITY,
        ..grid.clone()
    }
}

fn context(model: &ChainModel, gap: f64) -> Result<FrozenSymbolContext> {
    let n = model.shape().total();
    FrozenSymbolContext::new(model, 0.0, &vec![0.0; n], 0.0, gap, &ProxyConfig::default())
}

pub fn density_experiment(cfg: &DensityConfig, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new("density", seed);
    report.param("alpha", cfg.alpha);
    report.param("levels", cfg.model.levels);
    report.param("gap", cfg.gap);
    report.param("paths", cfg.paths);
    report.param("dt", cfg.dt);
    let grid = unchecked(&cfg.grid);
    let mut masses = Table::new("normalisation", &["case", "gap", "mass_defect", "negative_mass"]);
    let mut worst_mass = 0.0f64;
    let mut record_mass = |case: &str, gap: f64, g: &crate::proxy_density::DensityGrid| {
        worst_mass = worst_mass.max(g.mass_defect);
        masses.push(vec![case.into(), gap.into(), g.mass_defect.into(), g.negative_mass.into()]);
    };

    if cfg.cauchy_check {
        // One atom of weight 2/π gives the symbol -|ξ|.
        let atoms = SpectralMeasure::DiscreteAtoms {
            atoms: vec![SpectralAtom {
                direction: vec![1.0],
                weight: 2.0 / PI,
            }],
        };
        let model = ChainModel::noise_only(ChainShape::scalar(1)?, inversion_stable(1.0, 1, atoms)?)?;
        let ctx = context(&model, 1.0)?;
        let direct = invert_density(&ctx, &[0.0], &[0.0], &cfg.grid)?;
        let fft = invert_on_grid(&ctx, &grid, &Multiplier::None)?;
        record_mass("cauchy", 1.0, &fft);
        let peak = fft.at(&[fft.points / 2]) / ctx.scale().det_t;
        let err = (direct - 1.0 / PI).abs().max((peak - 1.0 / PI).abs());
        let mut t = Table::new("cauchy", &["route", "peak", "closed_form", "abs_error"]);
        t.push(vec!["direct".into(), direct.into(), (1.0 / PI).into(), (direct - 1.0 / PI).abs().into()]);
        t.push(vec!["fft".into(), peak.into(), (1.0 / PI).into(), (peak - 1.0 / PI).abs().into()]);
        report.tables.push(t);
        report.claim(
            "cauchy-peak",
            "alpha = 1 inversion at the peak equals 1/pi",
            err,
            format!("largest abs error over both routes, tolerance {:e}", cfg.peak_tolerance),
            Status::from_bool(err <= cfg.peak_tolerance),
        );
    }

    let noise = NoiseConfig::stable(cfg.alpha);
    let model = cfg.model.build(&noise)?;
    let n = model.shape().total();

    // Terminal histograms against the inverted marginals.
    let ctx = context(&model, cfg.gap)?;
    record_mass("chain", cfg.gap, &invert_on_grid(&ctx, &grid, &Multiplier::None)?);
    let plan = SimulationPlan::new(
        model.clone(),
        vec![0.0; n],
        cfg.gap,
        cfg.dt,
        cfg.paths,
        SeedTree::new(seed).named("density/histogram").fingerprint(),
    );
    let terminal = run_paths(&plan, &Dynamics::Chain, |_| TerminalState(Vec::with_capacity(n)))?;
    let scaled: Vec<Vec<f64>> = terminal.iter().map(|y| ctx.to_scaled(&vec![0.0; n], y)).collect();
    let mut chi = Table::new("chi_square", &["axis", "statistic", "dof", "p_value"]);
    let linear = cfg.model.is_linear();
    for axis in 0..n {
        let law = MarginalLaw::axis(&ctx, axis)?;
        let sample: Vec<f64> = scaled.iter().map(|u| u[axis]).collect();
        let r = marginal_chi_square(&law, &sample, cfg.bins);
        chi.push(vec![axis.into(), r.statistic.into(), r.dof.into(), r.p_value.into()]);
        report.claim(
            &format!("histogram-axis-{}", axis + 1),
            format!(
                "terminal marginal of coordinate {} passes a {}-bin chi-square test at {}",
                axis + 1,
                cfg.bins,
                cfg.chi_square_level
            ),
            r.p_value,
            format!("statistic {} on {} dof", fmt_f64(r.statistic), r.dof),
            if linear {
                Status::from_bool(r.p_value > cfg.chi_square_level)
            } else {
                Status::ReportOnly
            },
        );
    }
    report.tables.push(chi);
    if !linear {
        report
            .notes
            .push("nonlinear drift: the proxy is not the exact law, histogram tests are report-only".into());
    }

    // Smoothing rates of the derivatives in the starting point.
    let ctxs: Vec<FrozenSymbolContext> = cfg
        .derivative_gaps
        .iter()
        .map(|&h| context(&model, h))
        .collect::<Result<_>>()?;
    for c in &ctxs {
        record_mass("sweep", c.gap(), &invert_on_grid(c, &grid, &Multiplier::None)?);
    }
    let mut slopes = Table::new("derivative_slopes", &["order", "level", "fitted", "predicted", "abs_error"]);
    let mut maxima = Table::new("derivative_maxima", &["order", "level", "gap", "normalized_max"]);
    for &order in &cfg.derivative_orders {
        for &level in &cfg.derivative_levels {
            let coord = model.shape().offset(level - 1);
            let r = derivative_bound_check(&ctxs, order, coord, level, &grid)?;
            for (g, m) in r.gaps.iter().zip(&r.normalized_max) {
                maxima.push(vec![order.into(), level.into(), (*g).into(), (*m).into()]);
            }
            let err = (r.fitted_slope - r.predicted_slope).abs();
            slopes.push(vec![
                order.into(),
                level.into(),
                r.fitted_slope.into(),
                r.predicted_slope.into(),
                err.into(),
            ]);
            report.claim(
                &format!("derivative-slope-k{order}-level{level}"),
                format!(
                    "log-log slope of the order-{order} derivative bound in level {level} equals {}",
                    fmt_f64(r.predicted_slope)
                ),
                r.fitted_slope,
                format!("abs tolerance {}", cfg.slope_tolerance),
                Status::from_bool(err <= cfg.slope_tolerance),
            );
        }
    }
    report.tables.push(slopes);
    report.tables.push(maxima);
    report.tables.push(masses);
    report.claim(
        "normalisation",
        "every inverted density integrates to 1",
        worst_mass,
        format!("largest mass defect, tolerance {:e}", cfg.mass_tolerance),
        Status::from_bool(worst_mass <= cfg.mass_tolerance),
    );
    Ok(report)
}
