//! Peano-type non-uniqueness experiment on a degenerate chain.
//!
//! The drift `e_i sgn(x_j)|x_j|^β` acts on level `i` only. Starting from `x e_i`
//! with `x = 1/m`, the experiment estimates `P(τ ≥ ρ)` for the first time `τ`
//! at which level `i` falls below `c_0 t^e`, certifies the largest `ρ` on a grid
//! with a Wilson bound, and compares certified values across starts. All starts
//! share random numbers, so the estimates are paired.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flows::sgn;
use crate::model::{ChainModel, Diffusion};
use crate::report::{fmt_f64, ExperimentReport, Status, Table};
use crate::rng::SeedTree;
use crate::scale_geometry::{ChainMatrix, ChainShape};
use crate::sde_engine::{run_paths, Dynamics, InitialCondition, PathObserver, RecordGrid, SimulationPlan};
use crate::stats::{binomial_acceptance, log_log_slope, wilson_interval};

use super::threshold::threshold;
use super::NoiseConfig;

mod defaults {
    pub fn level() -> usize {
        2
    }
    pub fn beta() -> f64 {
        0.3
    }
    pub fn sigma() -> f64 {
        0.05
    }
    pub fn paths() -> usize {
        10_000
    }
    pub fn starts() -> Vec<f64> {
        vec![10.0, 100.0, 1000.0, 10000.0]
    }
    pub fn rho_grid() -> Vec<f64> {
        vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 5.0]
    }
    pub fn dt() -> f64 {
        5e-4
    }
    pub fn confidence() -> f64 {
        0.99
    }
    pub fn target() -> f64 {
        0.75
    }
    pub fn slack() -> f64 {
        0.02
    }
    pub fn margin() -> f64 {
        0.05
    }
    pub fn moment() -> f64 {
        0.5
    }
    pub fn moment_points() -> usize {
        12
    }
    pub fn moment_tolerance() -> f64 {
        0.05
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeanoConfig {
    pub alpha: f64,
    /// Level receiving the drift (1-based).
    #[serde(default = "defaults::level")]
    pub i: usize,
    /// Level the drift reads (1-based).
    #[serde(default = "defaults::level")]
    pub j: usize,
    /// Chain length; `j` when absent.
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    /// Amplitude of the scalar noise.
    #[serde(default = "defaults::sigma")]
    pub sigma: f64,
    #[serde(default = "defaults::paths")]
    pub paths: usize,
    /// Values of `m`; the start is `e_i / m`.
    #[serde(default = "defaults::starts")]
    pub starts: Vec<f64>,
    #[serde(default = "defaults::rho_grid")]
    pub rho_grid: Vec<f64>,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    /// Terminal time of the sign-split run; the largest `ρ` when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "defaults::confidence")]
    pub confidence: f64,
    #[serde(default = "defaults::target")]
    pub target: f64,
    /// Finite-sample slack below `target` accepted for the Wilson lower bound.
    #[serde(default = "defaults::slack")]
    pub slack: f64,
    /// Minimal distance of `beta` from the threshold.
    #[serde(default = "defaults::margin")]
    pub margin: f64,
    /// Paths of the run started at the origin; `paths` when absent.
    #[serde(default)]
    pub sign_paths: Option<usize>,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "defaults::moment")]
    pub moment: f64,
    #[serde(default = "defaults::moment_points")]
    pub moment_points: usize,
    #[serde(default = "defaults::moment_tolerance")]
    pub moment_tolerance: f64,
}

impl PeanoConfig {
    pub fn new(alpha: f64, beta: f64) -> Self {
        PeanoConfig {
            alpha,
            i: 2,
            j: 2,
            levels: None,
            beta,
            sigma: defaults::sigma(),
            paths: defaults::paths(),
            starts: defaults::starts(),
            rho_grid: defaults::rho_grid(),
            dt: defaults::dt(),
            horizon: None,
            confidence: defaults::confidence(),
            target: defaults::target(),
            slack: defaults::slack(),
            margin: defaults::margin(),
            sign_paths: None,
            antithetic: false,
            moment: defaults::moment(),
            moment_points: defaults::moment_points(),
            moment_tolerance: defaults::moment_tolerance(),
        }
    }

    fn levels(&self) -> usize {
        self.levels.unwrap_or(self.j)
    }

    fn horizon(&self) -> f64 {
        self.horizon
            .unwrap_or_else(|| self.rho_grid.iter().cloned().fold(0.0, f64::max))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.levels();
        if !(2 <= self.i && self.i <= self.j && self.j <= n) {
            return Err(LabError::config(format!(
                "peano needs 2 <= i <= j <= levels, got i={}, j={}, levels={n}",
                self.i, self.j
            )));
        }
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(LabError::config(format!("peano.alpha must lie in (1, 2), got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(LabError::config(format!("peano.beta must lie in (0, 1], got {}", self.beta)));
        }
        let thr = threshold(self.alpha, self.i, self.j)?;
        if (self.beta - thr).abs() < self.margin {
            return Err(LabError::config(format!(
                "peano.beta = {} is within {} of the threshold {thr}",
                self.beta, self.margin
            )));
        }
        if self.starts.is_empty() || self.starts.iter().any(|m| !(*m > 0.0)) {
            return Err(LabError::config("peano.starts must be positive values of m"));
        }
        if self.rho_grid.is_empty() || self.rho_grid.iter().any(|r| !(*r > 0.0)) {
            return Err(LabError::config("peano.rho_grid must hold positive times"));
        }
        if self.horizon() < self.rho_grid.iter().cloned().fold(0.0, f64::max) {
            return Err(LabError::config("peano.horizon must cover the rho grid"));
        }
        if !(self.sigma > 0.0) || self.paths == 0 || !(self.dt > 0.0) {
            return Err(LabError::config("peano.sigma, peano.paths and peano.dt must be positive"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) || !(self.target > 0.0 && self.target < 1.0) {
            return Err(LabError::config("peano.confidence and peano.target must lie in (0, 1)"));
        }
        if !(self.moment > 0.0 && self.moment < self.alpha) || self.moment_points < 3 {
            return Err(LabError::config("peano.moment must lie in (0, alpha) with at least 3 moment_points"));
        }
        Ok(())
    }
}

/// Exponent `e = (kβ + 1)/(1 - β)` of the extremal solutions, `k = j - i`.
pub fn extremal_exponent(lag: usize, beta: f64) -> f64 {
    (lag as f64 * beta + 1.0) / (1.0 - beta)
}

/// Constants of the barrier `c_0 t^e`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeanoConstants {
    pub exponent: f64,
    /// `C̃ = (∏_{l=1}^{k} (e + l - 1))^{-β}`.
    pub c_tilde: f64,
    /// `c_0 = C̃^{1/(1-β)} / 2`.
    pub c0: f64,
    /// `c` with `±c t^e` solving the deterministic equation.
    pub extremal: f64,
}

pub fn peano_constants(lag: usize, beta: f64) -> Result<PeanoConstants> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(LabError::config(format!("barrier constants need beta in (0, 1), got {beta}")));
    }
    let e = extremal_exponent(lag, beta);
    let prod_shifted: f64 = (1..=lag).map(|l| e + l as f64 - 1.0).product();
    let c_tilde = prod_shifted.powf(-beta);
    let prod: f64 = (1..=lag).map(|l| e + l as f64).product();
    Ok(PeanoConstants {
        exponent: e,
        c_tilde,
        c0: c_tilde.powf(1.0 / (1.0 - beta)) / 2.0,
        extremal: (prod.powf(-beta) / e).powf(1.0 / (1.0 - beta)),
    })
}

/// Certified `ρ` for one start.
#[derive(Clone, Debug, PartialEq)]
pub struct StartCertificate {
    pub m: f64,
    /// Survivors `#{τ ≥ ρ}` per grid point.
    pub survivors: Vec<u64>,
    pub trials: u64,
    pub certified: Option<f64>,
    pub status: Status,
}

struct BarrierObserver<'a> {
    target: usize,
    source: usize,
    beta: f64,
    start: f64,
    c0: f64,
    exponent: f64,
    stop_after: f64,
    tau: f64,
    moments: Option<MomentTrack<'a>>,
}

struct MomentTrack<'a> {
    times: &'a [f64],
    next: usize,
    prev_t: f64,
    prev_drift: f64,
    drift_sum: f64,
    /// Driving process `X^i - x - ∫F` and displacement `X^i - x` at `times`.
    driving: Vec<f64>,
    displacement: Vec<f64>,
}

type BarrierOutput = (f64, Option<(Vec<f64>, Vec<f64>)>);

impl PathObserver for BarrierObserver<'_> {
    type Output = BarrierOutput;

    fn observe(&mut self, t: f64, x: &[f64]) -> bool {
        let level = x[self.target];
        if self.tau.is_infinite() && t > 0.0 && level <= self.c0 * t.powf(self.exponent) {
            self.tau = t;
        }
        let drift = sgn(x[self.source]) * x[self.source].abs().powf(self.beta);
        match &mut self.moments {
            Some(m) => {
                m.drift_sum += m.prev_drift * (t - m.prev_t);
                m.prev_t = t;
                m.prev_drift = drift;
                if m.next < m.times.len() && (t - m.times[m.next]).abs() <= 1e-9 * t.max(1.0) {
                    m.driving.push(level - self.start - m.drift_sum);
                    m.displacement.push(level - self.start);
                    m.next += 1;
                }
                true
            }
            None => self.tau.is_infinite() && t < self.stop_after,
        }
    }

    fn finish(self) -> BarrierOutput {
        (self.tau, self.moments.map(|m| (m.driving, m.displacement)))
    }
}

struct TerminalObserver {
    target: usize,
    last: f64,
}

impl PathObserver for TerminalObserver {
    type Output = f64;

    fn observe(&mut self, _t: f64, x: &[f64]) -> bool {
        self.last = x[self.target];
        true
    }

    fn finish(self) -> f64 {
        self.last
    }
}

fn log_spaced(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|l| (lo.ln() + (hi.ln() - lo.ln()) * l as f64 / (k - 1) as f64).exp())
        .collect()
}

fn chain_model(cfg: &PeanoConfig) -> Result<ChainModel> {
    let shape = ChainShape::scalar(cfg.levels())?;
    let noise = NoiseConfig::stable(cfg.alpha).build()?;
    ChainModel::new(
        ChainMatrix::nilpotent(shape.clone()),
        crate::flows::DriftSpec::peano(shape, cfg.i, cfg.j, cfg.beta)?,
        Diffusion::constant(nalgebra::DMatrix::from_element(1, 1, cfg.sigma))?,
        noise,
    )
}

/// Largest contiguous grid value whose Wilson lower bound reaches `target - slack`.
fn certify(cfg: &PeanoConfig, rhos: &[f64], survivors: &[u64], trials: u64) -> (Option<f64>, Status) {
    let floor = cfg.target - cfg.slack;
    let mut certified = None;
    for (r, s) in rhos.iter().zip(survivors) {
        let (lo, _) = wilson_interval(*s, trials, cfg.confidence);
        if lo >= floor {
            certified = Some(*r);
        } else {
            break;
        }
    }
    let status = if certified.is_some() {
        Status::Pass
    } else if survivors.iter().any(|s| *s as f64 / trials as f64 >= cfg.target) {
        Status::Inconclusive
    } else {
        Status::Fail
    };
    (certified, status)
}

pub fn peano_experiment(cfg: &PeanoConfig, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let thr = threshold(cfg.alpha, cfg.i, cfg.j)?;
    let below = cfg.beta < thr;
    let lag = cfg.j - cfg.i;
    let gamma = cfg.i as f64 - 1.0 + 1.0 / cfg.alpha;
    let model = chain_model(cfg)?;
    let n = cfg.levels();
    let target = cfg.i - 1;
    let source = cfg.j - 1;
    let horizon = cfg.horizon();
    let mut rhos = cfg.rho_grid.clone();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    let mut starts = cfg.starts.clone();
    starts.sort_by(f64::total_cmp);

    let mut report = ExperimentReport::new("peano", seed);
    report.param("alpha", cfg.alpha);
    report.param("i", cfg.i);
    report.param("j", cfg.j);
    report.param("levels", n);
    report.param("beta", cfg.beta);
    report.param("threshold", fmt_f64(thr));
    report.param("regime", if below { "below-threshold" } else { "above-threshold" });
    report.param("sigma", cfg.sigma);
    report.param("paths", cfg.paths);
    report.param("dt", cfg.dt);
    report.param("horizon", fmt_f64(horizon));
    if !below {
        report
            .notes
            .push("above threshold: barrier and sign statistics are contrast evidence, not a uniqueness proof".into());
    }

    let constants = if cfg.beta < 1.0 {
        Some(peano_constants(lag, cfg.beta)?)
    } else {
        report.notes.push("beta = 1: no power-law barrier, only the sign split is reported".into());
        None
    };

    let moment_times = log_spaced((20.0 * cfg.dt).max(horizon * 1e-2), horizon, cfg.moment_points);
    let base_plan = |x0: Vec<f64>, paths: usize, plan_seed: u64| SimulationPlan {
        record: RecordGrid::Times {
            times: moment_times.clone(),
        },
        ..SimulationPlan::new(model.clone(), x0, horizon, cfg.dt, paths, plan_seed)
    };

    if let Some(k) = constants {
        report.param("exponent", fmt_f64(k.exponent));
        report.param("c0", fmt_f64(k.c0));
        report.param("extremal_constant", fmt_f64(k.extremal));
        let start_seed = SeedTree::new(seed).named("peano/starts").fingerprint();
        let stop_after = rhos[rhos.len() - 1];
        let mut survival = Table::new(
            "survival",
            &["m", "start", "rho", "survivors", "trials", "estimate", "wilson_low", "wilson_high"],
        );
        let mut certificates: Vec<StartCertificate> = vec![];
        let mut moment_rows: Option<(Vec<f64>, Vec<f64>)> = None;
        for (si, &m) in starts.iter().enumerate() {
            let x = 1.0 / m;
            let mut x0 = vec![0.0; n];
            x0[target] = x;
            let plan = base_plan(x0, cfg.paths, start_seed);
            let track = si == starts.len() - 1;
            let out = run_paths(&plan, &Dynamics::Chain, |_| BarrierObserver {
                target,
                source,
                beta: cfg.beta,
                start: x,
                c0: k.c0,
                exponent: k.exponent,
                stop_after,
                tau: f64::INFINITY,
                moments: track.then(|| MomentTrack {
                    times: &moment_times,
                    next: 0,
                    prev_t: 0.0,
                    prev_drift: 0.0,
                    drift_sum: 0.0,
                    driving: vec![],
                    displacement: vec![],
                }),
            })?;
            let trials = out.len() as u64;
            let survivors: Vec<u64> = rhos
                .iter()
                .map(|r| out.iter().filter(|(tau, _)| *tau >= *r).count() as u64)
                .collect();
            for (r, s) in rhos.iter().zip(&survivors) {
                let (lo, hi) = wilson_interval(*s, trials, cfg.confidence);
                survival.push(vec![
                    m.into(),
                    x.into(),
                    (*r).into(),
                    (*s).into(),
                    trials.into(),
                    (*s as f64 / trials as f64).into(),
                    lo.into(),
                    hi.into(),
                ]);
            }
            let (certified, status) = certify(cfg, &rhos, &survivors, trials);
            if track {
                let k_times = moment_times.len();
                let mut drv = vec![0.0; k_times];
                let mut disp = vec![0.0; k_times];
                for (_, mom) in &out {
                    let (d, p) = mom.as_ref().expect("tracked path");
                    for l in 0..k_times {
                        drv[l] += d[l].abs().powf(cfg.moment);
                        disp[l] += p[l].abs().powf(cfg.moment);
                    }
                }
                drv.iter_mut().chain(disp.iter_mut()).for_each(|v| *v /= trials as f64);
                moment_rows = Some((drv, disp));
            }
            certificates.push(StartCertificate {
                m,
                survivors,
                trials,
                certified,
                status,
            });
        }
        report.tables.push(survival);

        let gate = |s: Status| if below { s } else { Status::ReportOnly };
        let mut cert_table = Table::new("certified", &["m", "certified_rho", "status"]);
        for c in &certificates {
            cert_table.push(vec![c.m.into(), c.certified.into(), c.status.as_str().into()]);
            report.claim(
                &format!("rho-certified-m{}", fmt_f64(c.m)),
                format!(
                    "some rho on the grid has Wilson {} lower bound of P(tau >= rho) at least {}",
                    cfg.confidence,
                    cfg.target - cfg.slack
                ),
                c.certified.unwrap_or(f64::NAN),
                "largest certified rho",
                gate(c.status),
            );
        }
        report.tables.push(cert_table);

        // A common rho: certified for every start.
        let common = certificates
            .iter()
            .map(|c| c.certified)
            .try_fold(f64::INFINITY, |acc, r| r.map(|v| acc.min(v)));
        report.claim(
            "start-uniform-rho",
            "one rho is certified for every start",
            common.unwrap_or(f64::NAN),
            "minimum of the per-start certified values",
            gate(Status::from_bool(common.is_some())),
        );

        let monotone = certificates
            .windows(2)
            .all(|p| matches!((p[0].certified, p[1].certified), (Some(a), Some(b)) if b >= a));
        report.claim(
            "rho-non-decreasing",
            "the certified rho is non-decreasing as the start approaches 0",
            common.unwrap_or(f64::NAN),
            "certified values in the certified table",
            gate(Status::from_bool(monotone && common.is_some())),
        );

        // Stability: a smaller start keeps the previous rho unless the data reject it.
        let mut stable = true;
        let mut worst_upper = 1.0f64;
        for pair in certificates.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let Some(r_prev) = prev.certified else { continue };
            if next.certified.is_some_and(|r| r >= r_prev) {
                continue;
            }
            let idx = rhos.iter().position(|r| *r == r_prev).expect("grid value");
            let (_, hi) = wilson_interval(next.survivors[idx], next.trials, cfg.confidence);
            worst_upper = worst_upper.min(hi);
            if hi < cfg.target - cfg.slack {
                stable = false;
            }
        }
        report.claim(
            "rho-stability",
            "the certified rho does not shrink as the start approaches 0 beyond Monte Carlo confidence",
            worst_upper,
            format!(
                "smallest Wilson {} upper bound at the previous start's rho (floor {})",
                cfg.confidence,
                cfg.target - cfg.slack
            ),
            gate(Status::from_bool(stable && certificates.iter().all(|c| c.certified.is_some()))),
        );

        if let Some((drv, disp)) = moment_rows {
            let mut t = Table::new("moments", &["t", "driving_moment", "displacement_moment"]);
            for l in 0..moment_times.len() {
                t.push(vec![moment_times[l].into(), drv[l].into(), disp[l].into()]);
            }
            report.tables.push(t);
            let expected = cfg.moment * gamma;
            let slope = log_log_slope(&moment_times, &drv);
            report.claim(
                "driving-moment-slope",
                format!("E|Z_t|^{} grows like t^(p*gamma) with p*gamma = {}", cfg.moment, fmt_f64(expected)),
                slope,
                format!("relative tolerance {}", cfg.moment_tolerance),
                Status::from_bool((slope / expected - 1.0).abs() <= cfg.moment_tolerance),
            );
            report.claim(
                "displacement-moment-slope",
                "log-log slope of E|X_t - x|^p, drift included",
                log_log_slope(&moment_times, &disp),
                "",
                Status::ReportOnly,
            );
        }
    }

    // Start at the origin: sign split and shape of the terminal law.
    let sign_paths = cfg.sign_paths.unwrap_or(cfg.paths);
    let mut plan = base_plan(vec![0.0; n], sign_paths, SeedTree::new(seed).named("peano/origin").fingerprint());
    plan.antithetic = cfg.antithetic;
    plan.initial = InitialCondition::Point { x: vec![0.0; n] };
    let terminal = run_paths(&plan, &Dynamics::Chain, |_| TerminalObserver { target, last: 0.0 })?;
    let positive = terminal.iter().filter(|v| **v > 0.0).count() as u64;
    let negative = terminal.iter().filter(|v| **v < 0.0).count() as u64;
    let nonzero = positive + negative;
    let (lo, hi) = binomial_acceptance(nonzero, 0.5, cfg.confidence);
    let mut split = Table::new("sign_split", &["positive", "negative", "zero", "accept_low", "accept_high"]);
    split.push(vec![
        positive.into(),
        negative.into(),
        (terminal.len() as u64 - nonzero).into(),
        lo.into(),
        hi.into(),
    ]);
    report.tables.push(split);
    report.claim(
        "sign-split",
        format!("terminal sign from the origin is 50/50 within the binomial {} region", cfg.confidence),
        positive as f64 / nonzero.max(1) as f64,
        format!("accept {lo}..={hi} positives of {nonzero}"),
        Status::from_bool(nonzero > 0 && (lo..=hi).contains(&positive)),
    );
    if cfg.antithetic {
        report
            .notes
            .push("antithetic pairs make the sign split exact by construction".into());
    }

    if let Some(k) = constants {
        let scale = horizon.powf(k.exponent);
        let c = k.extremal;
        let normalized: Vec<f64> = terminal.iter().map(|v| v / scale).collect();
        let total = normalized.len() as f64;
        let near = |centre: f64, width: f64| {
            normalized.iter().filter(|v| (**v - centre).abs() <= width).count() as f64 / total
        };
        let (plus, minus, zero) = (near(c, 0.5 * c), near(-c, 0.5 * c), near(0.0, 0.25 * c));
        let bins = 40;
        let mut hist = Table::new("terminal_histogram", &["bin_low", "bin_high", "count"]);
        let (a, b) = (-2.0 * c, 2.0 * c);
        let width = (b - a) / bins as f64;
        let mut counts = vec![0u64; bins];
        for v in &normalized {
            if *v >= a && *v < b {
                counts[(((v - a) / width) as usize).min(bins - 1)] += 1;
            }
        }
        for (l, cnt) in counts.iter().enumerate() {
            hist.push(vec![(a + width * l as f64).into(), (a + width * (l + 1) as f64).into(), (*cnt).into()]);
        }
        report.tables.push(hist);
        report.claim(
            "extremal-concentration",
            "mass of X_T / T^e within c/2 of the extremal values +c and -c",
            plus + minus,
            format!("near +c {}, near -c {}, within c/4 of 0 {}", fmt_f64(plus), fmt_f64(minus), fmt_f64(zero)),
            Status::ReportOnly,
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_for_lag_zero() {
        let k = peano_constants(0, 0.3).unwrap();
        assert!((k.exponent - 1.0 / 0.7).abs() < 1e-15);
        assert_eq!(k.c_tilde, 1.0);
        assert_eq!(k.c0, 0.5);
        assert!((k.extremal - 0.7f64.powf(1.0 / 0.7)).abs() < 1e-15);
    }

    #[test]
    fn margin_is_enforced() {
        let mut cfg = PeanoConfig::new(1.5, 0.38);
        assert!(cfg.validate().is_err());
        cfg.beta = 0.3;
        assert!(cfg.validate().is_ok());
    }
}
