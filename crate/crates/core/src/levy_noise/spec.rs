use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

use super::qfamily::QFamily;
use super::spectral::SpectralMeasure;
use crate::error::{LabError, Result};

/// Stability index of the driving noise.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct StabilityIndex(f64);

impl StabilityIndex {
    /// Index in the sub-critical simulation range (1, 2).
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 1.0 && alpha < 2.0 {
            Ok(StabilityIndex(alpha))
        } else {
            Err(LabError::config(format!("alpha must lie strictly in (1, 2), got {alpha}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for StabilityIndex {
    type Error = LabError;
    fn try_from(v: f64) -> Result<Self> {
        StabilityIndex::new(v)
    }
}

impl From<StabilityIndex> for f64 {
    fn from(a: StabilityIndex) -> f64 {
        a.0
    }
}

/// `∫_0^∞ (1 - cos r) r^{-1-α} dr`, so that a unit-mass symmetric measure on
/// the line has symbol `-stable_constant(α) |ξ|^α`.
pub fn stable_constant(alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 2.0, "alpha out of (0, 2)");
    if (alpha - 1.0).abs() < 1e-12 {
        return PI / 2.0;
    }
    -gamma(2.0 - alpha) * (PI * alpha / 2.0).cos() / (alpha * (alpha - 1.0))
}

/// Complete description of the driving Lévy noise.
#[derive(Clone, Debug, PartialEq)]
pub struct LevyNoiseSpec {
    alpha: f64,
    dimension: usize,
    spectral: SpectralMeasure,
    q_family: QFamily,
    q_sup: f64,
    simulable: bool,
}

/// Smallest admissible value of the non-degeneracy functional.
pub const NONDEGENERACY_FLOOR: f64 = 1e-6;

impl LevyNoiseSpec {
    pub fn new(
        alpha: StabilityIndex,
        dimension: usize,
        spectral: SpectralMeasure,
        q_family: QFamily,
        q_sup: f64,
    ) -> Result<Self> {
        Self::build(alpha.value(), dimension, spectral, q_family, q_sup, true)
    }

    /// Spec with `alpha` anywhere in (0, 2); usable for symbols and inversion only.
    pub fn for_inversion(
        alpha: f64,
        dimension: usize,
        spectral: SpectralMeasure,
        q_family: QFamily,
        q_sup: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(LabError::config(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        Self::build(alpha, dimension, spectral, q_family, q_sup, false)
    }

    /// Pure stable noise with the given spectral measure.
    pub fn stable(alpha: StabilityIndex, dimension: usize, spectral: SpectralMeasure) -> Result<Self> {
        Self::new(alpha, dimension, spectral, QFamily::Stable, 1.0)
    }

    fn build(
        alpha: f64,
        dimension: usize,
        spectral: SpectralMeasure,
        q_family: QFamily,
        q_sup: f64,
        simulable: bool,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(LabError::config("noise dimension must be positive"));
        }
        spectral.validate(dimension)?;
        let nd = spectral.nondegeneracy(dimension, alpha);
        if !(nd >= NONDEGENERACY_FLOOR) {
            return Err(LabError::config(format!(
                "spectral measure is degenerate: min over unit directions of ∫|ξ·s|^α μ(ds) is {nd:e}"
            )));
        }
        q_family.validate(alpha, dimension)?;
        if !(q_sup > 0.0) || !q_sup.is_finite() {
            return Err(LabError::config("q_sup must be positive and finite"));
        }
        let spec = LevyNoiseSpec {
            alpha,
            dimension,
            spectral,
            q_family,
            q_sup,
            simulable,
        };
        spec.check_q_bounds()?;
        Ok(spec)
    }

    /// Sample `Q` on a radial × angular grid: bounded by `q_sup` and positive near 0.
    fn check_q_bounds(&self) -> Result<()> {
        let dirs = super::spectral::probe_directions(self.dimension);
        let r_in = self.q_family.inner_radius();
        for dir in dirs.iter().step_by((dirs.len() / 64).max(1)) {
            let rq = self.q_family.along(self.alpha, self.dimension, dir);
            let mut r = 1e-6;
            while r < 1e3 {
                let q = rq.eval(r);
                if q > self.q_sup * (1.0 + 1e-12) {
                    return Err(LabError::config(format!(
                        "q_sup = {} is below Q = {q} at radius {r}",
                        self.q_sup
                    )));
                }
                if r <= 0.5 * r_in && !(q > 0.0) {
                    return Err(LabError::config(format!(
                        "Q must stay positive near the origin, got {q} at radius {r}"
                    )));
                }
                r *= 1.05;
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn spectral(&self) -> &SpectralMeasure {
        &self.spectral
    }

    pub fn q_family(&self) -> &QFamily {
        &self.q_family
    }

    pub fn q_sup(&self) -> f64 {
        self.q_sup
    }

    /// Whether the samplers accept this spec (alpha in (1, 2)).
    pub fn is_simulable(&self) -> bool {
        self.simulable
    }

    pub fn is_stable(&self) -> bool {
        matches!(self.q_family, QFamily::Stable)
    }

    /// Space-dependent diffusion coefficients require an isotropic measure.
    pub fn supports_state_dependent_diffusion(&self) -> bool {
        matches!(self.spectral, SpectralMeasure::Isotropic)
    }

    /// `Q(z)`; rejects the origin.
    pub fn q_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dimension {
            return Err(LabError::config(format!(
                "point has dimension {} but the noise has dimension {}",
                z.len(),
                self.dimension
            )));
        }
        if z.iter().all(|v| *v == 0.0) {
            return Err(LabError::config("Q is evaluated away from the origin only"));
        }
        Ok(self.q_family.eval(self.alpha, z))
    }

    /// Closed-form stable symbol `-K_α ∫|ξ·s|^α μ(ds)`.
    pub fn stable_symbol(&self, xi: &[f64]) -> f64 {
        -stable_constant(self.alpha) * self.spectral.projected_moment(self.alpha, xi)
    }

    #[cfg(test)]
    pub(crate) fn with_q_sup_unchecked(mut self, q_sup: f64) -> Self {
        self.q_sup = q_sup;
        self
    }

    pub(crate) fn require_simulable(&self) -> Result<()> {
        if self.simulable {
            Ok(())
        } else {
            Err(LabError::config(format!(
                "alpha = {} is accepted for inversion only; simulation needs alpha in (1, 2)",
                self.alpha
            )))
        }
    }
}

/// Non-simulation helper: stable noise for inversion experiments.
pub fn inversion_stable(alpha: f64, dimension: usize, spectral: SpectralMeasure) -> Result<LevyNoiseSpec> {
    LevyNoiseSpec::for_inversion(alpha, dimension, spectral, QFamily::Stable, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{log_edges, uniform_edges, GaussLegendre};

    // Independent evaluation of ∫ (1 - cos r) r^{-1-α} dr by panel quadrature.
    fn constant_by_quadrature(alpha: f64) -> f64 {
        let g = GaussLegendre::new(20);
        let f = |r: f64| 2.0 * (0.5 * r).sin().powi(2) * r.powf(-1.0 - alpha);
        let near = g.integrate_panels(&log_edges(1e-8, 1.0, 10), f);
        let far_edges = uniform_edges(1.0, 2000.0 * PI, PI / 2.0);
        let far = g.integrate_panels(&far_edges, f);
        let end = 2000.0 * PI;
        // Below 1e-8 the integrand is r^{1-α}/2; beyond the last panel 1 - cos averages to 1.
        let origin = 1e-8f64.powf(2.0 - alpha) / (2.0 * (2.0 - alpha));
        origin + near + far + end.powf(-alpha) / alpha
    }

    #[test]
    fn stable_constant_matches_quadrature() {
        for alpha in [1.2, 1.5, 1.8] {
            let k = stable_constant(alpha);
            let q = constant_by_quadrature(alpha);
            assert!((k - q).abs() < 1e-5, "alpha={alpha}: {k} vs {q}");
        }
    }

    #[test]
    fn stable_constant_cauchy_limit() {
        assert!((stable_constant(1.0) - PI / 2.0).abs() < 1e-15);
        assert!((stable_constant(1.0 + 1e-7) - PI / 2.0).abs() < 1e-5);
    }

    #[test]
    fn alpha_outside_range_rejected() {
        assert!(StabilityIndex::new(2.0).is_err());
        assert!(StabilityIndex::new(1.0).is_err());
        assert!(StabilityIndex::new(1.5).is_ok());
    }

    #[test]
    fn q_sup_violation_rejected() {
        let a = StabilityIndex::new(1.5).unwrap();
        let fam = QFamily::Layered { beta: 1.8, r0: 0.5 };
        // sup Q = 0.5^{-0.3} > 1
        assert!(LevyNoiseSpec::new(a, 1, SpectralMeasure::Isotropic, fam.clone(), 1.0).is_err());
        let s = fam.natural_sup(1.5, 1);
        assert!(LevyNoiseSpec::new(a, 1, SpectralMeasure::Isotropic, fam, s).is_ok());
    }

    #[test]
    fn origin_rejected_by_q_density() {
        let a = StabilityIndex::new(1.5).unwrap();
        let spec = LevyNoiseSpec::stable(a, 1, SpectralMeasure::Isotropic).unwrap();
        assert!(spec.q_density(&[0.0]).is_err());
        assert_eq!(spec.q_density(&[3.0]).unwrap(), 1.0);
    }
}
