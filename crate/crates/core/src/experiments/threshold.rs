//! Threshold arithmetic and the well-posedness validator.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flows::wellposedness_threshold;
use crate::report::{ExperimentReport, Status, Table};

/// Largest accepted gap between the two forms of the non-uniqueness threshold.
pub const FORM_AGREEMENT: f64 = 1e-12;

/// Both forms of the non-uniqueness threshold for a drift in level `i` depending on level `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdForms {
    /// `(1 + α(i-2)) / (1 + α(j-1))`.
    pub direct: f64,
    /// `(γ - 1) / (γ + k)` with `γ = i - 1 + 1/α`, `k = j - i`.
    pub dual: f64,
    pub gamma: f64,
    pub lag: i64,
}

fn check_indexes(alpha: f64, i: usize, j: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(LabError::config(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    if i < 1 || j < 1 {
        return Err(LabError::config("chain levels are 1-based"));
    }
    Ok(())
}

/// Evaluates both forms; `i > j` is accepted for the pure arithmetic identity.
pub fn threshold_forms(alpha: f64, i: usize, j: usize) -> Result<ThresholdForms> {
    check_indexes(alpha, i, j)?;
    let (fi, fj) = (i as f64, j as f64);
    let gamma = fi - 1.0 + 1.0 / alpha;
    let lag = j as i64 - i as i64;
    Ok(ThresholdForms {
        direct: (1.0 + alpha * (fi - 2.0)) / (1.0 + alpha * (fj - 1.0)),
        dual: (gamma - 1.0) / (gamma + lag as f64),
        gamma,
        lag,
    })
}

/// Non-uniqueness threshold for `i ≤ j`, after checking that both forms agree.
pub fn threshold(alpha: f64, i: usize, j: usize) -> Result<f64> {
    if i > j {
        return Err(LabError::config(format!("threshold needs i <= j, got i={i}, j={j}")));
    }
    let f = threshold_forms(alpha, i, j)?;
    if (f.direct - f.dual).abs() > FORM_AGREEMENT {
        return Err(LabError::numerical(
            "experiments",
            format!("threshold forms disagree: {} vs {}", f.direct, f.dual),
        ));
    }
    Ok(f.direct)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSweepConfig {
    pub alphas: Vec<f64>,
    pub levels_i: Vec<usize>,
    pub levels_j: Vec<usize>,
}

impl Default for ThresholdSweepConfig {
    fn default() -> Self {
        ThresholdSweepConfig {
            alphas: (1..=10).map(|k| 1.0 + 0.1 * k as f64).collect(),
            levels_i: (1..=5).collect(),
            levels_j: (1..=5).collect(),
        }
    }
}

/// Both threshold forms over a grid, plus the diffusive limit.
pub fn threshold_sweep(cfg: &ThresholdSweepConfig, seed: u64) -> Result<ExperimentReport> {
    if cfg.alphas.is_empty() || cfg.levels_i.is_empty() || cfg.levels_j.is_empty() {
        return Err(LabError::config("threshold sweep needs non-empty alphas, levels_i and levels_j"));
    }
    let mut report = ExperimentReport::new("threshold-sweep", seed);
    report.param("grid", format!("{}x{}x{}", cfg.alphas.len(), cfg.levels_i.len(), cfg.levels_j.len()));
    let mut table = Table::new(
        "thresholds",
        &["alpha", "i", "j", "gamma", "k", "direct", "dual", "abs_diff", "counterexample_range"],
    );
    let mut worst = 0.0f64;
    for &alpha in &cfg.alphas {
        for &i in &cfg.levels_i {
            for &j in &cfg.levels_j {
                let f = threshold_forms(alpha, i, j)?;
                let diff = (f.direct - f.dual).abs();
                worst = worst.max(diff);
                table.push(vec![
                    alpha.into(),
                    i.into(),
                    j.into(),
                    f.gamma.into(),
                    f.lag.into(),
                    f.direct.into(),
                    f.dual.into(),
                    diff.into(),
                    (2 <= i && i <= j).into(),
                ]);
            }
        }
    }
    report.tables.push(table);
    report.claim(
        "forms-agree",
        "(1+a(i-2))/(1+a(j-1)) equals (g-1)/(g+k) on the whole grid",
        worst,
        format!("max abs difference, tolerance {FORM_AGREEMENT:e}"),
        Status::from_bool(worst <= FORM_AGREEMENT),
    );
    let limit = threshold(2.0, 2, 2)?;
    report.claim(
        "diffusive-limit",
        "alpha = 2, i = j = 2 gives 1/3",
        limit,
        format!("abs error {:e}", (limit - 1.0 / 3.0).abs()),
        Status::from_bool((limit - 1.0 / 3.0).abs() <= FORM_AGREEMENT),
    );
    Ok(report)
}

/// Per-level well-posedness verdict for declared Hölder exponents `holder[j-1]`.
pub fn wellposedness_validator(alpha: f64, holder: &[f64], seed: u64) -> Result<ExperimentReport> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(LabError::config(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    let mut report = ExperimentReport::new("wellposedness", seed);
    report.param("alpha", alpha);
    report.param("levels", holder.len());
    let mut table = Table::new(
        "levels",
        &["level", "beta", "threshold", "counterexample_threshold", "satisfied", "sharp"],
    );
    if holder.len() <= 1 {
        report
            .notes
            .push("single level: the noise acts on every coordinate and no threshold applies".into());
    }
    for (idx, &beta) in holder.iter().enumerate().skip(1) {
        let level = idx + 1;
        let wp = wellposedness_threshold(alpha, level);
        let counter = threshold(alpha, level, level)?;
        let ok = beta > wp;
        table.push(vec![
            level.into(),
            beta.into(),
            wp.into(),
            counter.into(),
            ok.into(),
            ((wp - counter).abs() <= FORM_AGREEMENT).into(),
        ]);
        report.claim(
            &format!("level-{level}"),
            format!("beta^{level} = {beta} exceeds the threshold {wp}"),
            beta - wp,
            "margin beta - threshold",
            Status::from_bool(ok),
        );
    }
    report.tables.push(table);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms_of_the_first_examples() {
        let f = threshold_forms(1.5, 2, 2).unwrap();
        assert!((f.direct - 0.4).abs() < 1e-15 && (f.dual - 0.4).abs() < 1e-15);
        assert!((threshold(1.5, 2, 3).unwrap() - 0.25).abs() < 1e-15);
        assert!(threshold(1.5, 3, 2).is_err());
    }
}
