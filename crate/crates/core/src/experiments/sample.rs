//! Noise sampler checks: characteristic function, tail index, Q-family reduction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::levy_noise::{
    LevyNoiseSpec, QModulatedSampler, SmallJumpPolicy, SpectralMeasure, StabilityIndex, StableSampler,
};
use crate::report::{fmt_f64, ExperimentReport, Status, Table};
use crate::rng::SeedTree;
use crate::stats::{hill_estimator, ks_two_sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub alphas: Vec<f64>,
    pub draws: usize,
    pub dt: f64,
    pub xi_points: usize,
    /// Largest frequency; where `dt K_α ξ^α = 3` when absent.
    pub xi_max: Option<f64>,
    /// Accepted distance between the two characteristic functions, in standard errors.
    pub standard_errors: f64,
    /// Number of order statistics in the Hill estimator; `√draws` when absent.
    pub hill_k: Option<usize>,
    pub hill_tolerance: f64,
    /// Indices for the Q ≡ 1 reduction test.
    pub ks_alphas: Vec<f64>,
    pub ks_draws: usize,
    pub ks_cutoff: f64,
    pub ks_policy: SmallJumpPolicy,
    pub ks_level: f64,
    /// Draws per random stream.
    pub chunk: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            alphas: vec![1.2, 1.5, 1.8],
            draws: 1_000_000,
            dt: 1.0,
            xi_points: 20,
            xi_max: None,
            standard_errors: 3.0,
            hill_k: None,
            hill_tolerance: 0.1,
            ks_alphas: vec![1.5],
            ks_draws: 100_000,
            ks_cutoff: 0.1,
            ks_policy: SmallJumpPolicy::GaussianCorrection,
            ks_level: 0.01,
            chunk: 10_000,
        }
    }
}

impl SampleConfig {
    fn validate(&self) -> Result<()> {
        if self.alphas.iter().chain(&self.ks_alphas).any(|a| !(*a > 1.0 && *a < 2.0)) {
            return Err(LabError::config("sample alphas must lie in (1, 2)"));
        }
        if self.draws < 100 || self.ks_draws < 100 || self.chunk == 0 || self.xi_points == 0 {
            return Err(LabError::config("sample.draws, ks_draws, chunk and xi_points are too small"));
        }
        if !(self.dt > 0.0) || !(self.ks_cutoff > 0.0) || !(self.ks_level > 0.0 && self.ks_level < 1.0) {
            return Err(LabError::config("sample.dt, ks_cutoff and ks_level must be positive"));
        }
        Ok(())
    }
}

/// `count` draws, `chunk` per stream, concatenated in stream order.
fn chunked<F>(count: usize, chunk: usize, tree: &SeedTree, draw: F) -> Result<Vec<f64>>
where
    F: Fn(&mut crate::rng::Stream) -> Result<f64> + Sync,
{
    let chunks = count.div_ceil(chunk);
    let parts: Vec<Result<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = tree.stream(c as u64);
            let len = chunk.min(count - c * chunk);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Empirical mean of `cos(ξX)` and `sin(ξX)` with standard errors.
fn empirical_cf(sample: &[f64], xi: f64) -> (f64, f64, f64, f64) {
    let n = sample.len() as f64;
    let (mut c, mut c2, mut s, mut s2) = (0.0, 0.0, 0.0, 0.0);
    for x in sample {
        let (sv, cv) = (xi * x).sin_cos();
        c += cv;
        c2 += cv * cv;
        s += sv;
        s2 += sv * sv;
    }
    let (mc, ms) = (c / n, s / n);
    let se_c = ((c2 / n - mc * mc).max(0.0) / n).sqrt();
    let se_s = ((s2 / n - ms * ms).max(0.0) / n).sqrt();
    (mc, se_c, ms, se_s)
}

pub fn sample_experiment(cfg: &SampleConfig, seed: u64) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new("sample", seed);
    report.param("draws", cfg.draws);
    report.param("dt", cfg.dt);
    report.param("xi_points", cfg.xi_points);
    let tree = SeedTree::new(seed).named("sample");
    let mut cf_table = Table::new(
        "characteristic_function",
        &["alpha", "xi", "target", "ecf_real", "se_real", "z_real", "ecf_imag", "se_imag"],
    );
    let mut hill_table = Table::new("hill", &["alpha", "k", "estimate", "abs_error"]);

    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let spec = LevyNoiseSpec::stable(StabilityIndex::new(alpha)?, 1, SpectralMeasure::Isotropic)?;
        let sampler = StableSampler::from_spec(&spec)?;
        let sample = chunked(cfg.draws, cfg.chunk, &tree.named("stable").child(ai as u64), |rng| {
            let mut v = [0.0];
            sampler.increment_into(cfg.dt, rng, &mut v);
            Ok(v[0])
        })?;
        let unit = -spec.stable_symbol(&[1.0]);
        let xi_max = cfg.xi_max.unwrap_or_else(|| (3.0 / (unit * cfg.dt)).powf(1.0 / alpha));
        let mut worst = 0.0f64;
        for k in 1..=cfg.xi_points {
            let xi = xi_max * k as f64 / cfg.xi_points as f64;
            let target = (cfg.dt * spec.stable_symbol(&[xi])).exp();
            let (re, se_re, im, se_im) = empirical_cf(&sample, xi);
            let z = (re - target).abs() / se_re;
            worst = worst.max(z);
            cf_table.push(vec![
                alpha.into(),
                xi.into(),
                target.into(),
                re.into(),
                se_re.into(),
                z.into(),
                im.into(),
                se_im.into(),
            ]);
        }
        report.claim(
            &format!("cf-alpha-{}", fmt_f64(alpha)),
            format!(
                "Re E exp(i xi X) matches exp(-dt K |xi|^alpha) on {} frequencies within {} standard errors",
                cfg.xi_points, cfg.standard_errors
            ),
            worst,
            "largest distance in standard errors",
            Status::from_bool(worst <= cfg.standard_errors),
        );

        let k = cfg.hill_k.unwrap_or_else(|| (cfg.draws as f64).sqrt().round() as usize);
        let hill = hill_estimator(&sample, k);
        hill_table.push(vec![alpha.into(), k.into(), hill.into(), (hill - alpha).abs().into()]);
        report.claim(
            &format!("hill-alpha-{}", fmt_f64(alpha)),
            format!("Hill tail index within {} of alpha", cfg.hill_tolerance),
            hill,
            format!("k = {k} largest magnitudes"),
            Status::from_bool((hill - alpha).abs() <= cfg.hill_tolerance),
        );
    }
    report.tables.push(cf_table);
    report.tables.push(hill_table);

    let mut ks_table = Table::new("q_reduction", &["alpha", "cutoff", "statistic", "p_value"]);
    for (ai, &alpha) in cfg.ks_alphas.iter().enumerate() {
        let spec = LevyNoiseSpec::stable(StabilityIndex::new(alpha)?, 1, SpectralMeasure::Isotropic)?;
        let exact = StableSampler::from_spec(&spec)?;
        let thinned = QModulatedSampler::new(&spec, cfg.ks_cutoff, cfg.ks_policy)?;
        let ks_tree = tree.named("q-reduction").child(ai as u64);
        let a = chunked(cfg.ks_draws, cfg.chunk, &ks_tree.named("exact"), |rng| {
            let mut v = [0.0];
            exact.increment_into(cfg.dt, rng, &mut v);
            Ok(v[0])
        })?;
        let b = chunked(cfg.ks_draws, cfg.chunk, &ks_tree.named("thinned"), |rng| {
            let mut v = [0.0];
            thinned.increment_into(cfg.dt, rng, &mut v)?;
            Ok(v[0])
        })?;
        let ks = ks_two_sample(&a, &b);
        ks_table.push(vec![alpha.into(), cfg.ks_cutoff.into(), ks.statistic.into(), ks.p_value.into()]);
        report.claim(
            &format!("q-reduction-alpha-{}", fmt_f64(alpha)),
            format!("thinned sampler with Q = 1 matches the stable sampler in a two-sample KS test at {}", cfg.ks_level),
            ks.p_value,
            format!("KS statistic {}", fmt_f64(ks.statistic)),
            Status::from_bool(ks.p_value > cfg.ks_level),
        );
    }
    report.tables.push(ks_table);
    Ok(report)
}
