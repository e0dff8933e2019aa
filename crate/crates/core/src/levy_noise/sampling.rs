//! Exact stable increments and thinning samplers for Q-modulated noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Open01, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::qfamily::RadialQ;
use super::spec::{stable_constant, LevyNoiseSpec};
use super::spectral::{isotropic_moment, SpectralMeasure};
use crate::error::{LabError, Result};
use crate::quadrature::GaussLegendre;

/// Standard symmetric stable variable with characteristic function `exp(-|u|^α)`.
#[inline]
pub fn standard_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let v = PI * (u - 0.5);
    let e: f64 = rng.sample(Open01);
    let w = -e.ln();
    let cos_v = v.cos();
    (alpha * v).sin() / cos_v.powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable variable with Laplace transform `exp(-λ^a)`, `0 < a < 1`.
#[inline]
pub fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let e: f64 = -rng.sample::<f64, _>(Open01).ln();
    let num = (a * PI * u).sin();
    let shape = (num / (PI * u).sin()).powf(1.0 / (1.0 - a)) * ((1.0 - a) * PI * u).sin() / num;
    (shape / e).powf((1.0 - a) / a)
}

#[derive(Clone, Debug)]
enum StableShape {
    /// Independent scaled scalars along unit directions.
    Directions { dirs: Vec<Vec<f64>>, scales: Vec<f64> },
    /// Sub-Gaussian isotropic law with Gaussian scale `c`.
    SubGaussian { gaussian_scale: f64 },
}

/// Sampler of symmetric α-stable increments for a fixed spectral measure.
#[derive(Clone, Debug)]
pub struct StableSampler {
    alpha: f64,
    dimension: usize,
    shape: StableShape,
}

impl StableSampler {
    pub fn new(alpha: f64, dimension: usize, spectral: &SpectralMeasure) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(LabError::config(format!(
                "stable sampling needs alpha in (1, 2), got {alpha}"
            )));
        }
        spectral.validate(dimension)?;
        let k = stable_constant(alpha);
        let shape = match spectral {
            SpectralMeasure::Isotropic if dimension >= 2 => {
                let target = k * isotropic_moment(dimension, alpha);
                StableShape::SubGaussian {
                    gaussian_scale: (2.0 * target.powf(2.0 / alpha)).sqrt(),
                }
            }
            other => {
                let rule = other.sphere_rule(dimension, 1)?;
                StableShape::Directions {
                    scales: rule.weights.iter().map(|w| (k * w).powf(1.0 / alpha)).collect(),
                    dirs: rule.directions,
                }
            }
        };
        Ok(StableSampler {
            alpha,
            dimension,
            shape,
        })
    }

    pub fn from_spec(spec: &LevyNoiseSpec) -> Result<Self> {
        spec.require_simulable()?;
        Self::new(spec.alpha(), spec.dimension(), spec.spectral())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Increment over a time step `dt` written into `out`.
    #[inline]
    pub fn increment_into<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        let time_scale = dt.powf(1.0 / self.alpha);
        match &self.shape {
            StableShape::Directions { dirs, scales } => {
                if self.dimension == 1 && dirs.len() == 1 {
                    out[0] = dirs[0][0] * scales[0] * time_scale * standard_stable(self.alpha, rng);
                    return;
                }
                out.iter_mut().for_each(|o| *o = 0.0);
                for (dir, sc) in dirs.iter().zip(scales) {
                    let x = sc * time_scale * standard_stable(self.alpha, rng);
                    for (o, s) in out.iter_mut().zip(dir) {
                        *o += x * s;
                    }
                }
            }
            StableShape::SubGaussian { gaussian_scale } => {
                let a = positive_stable(self.alpha / 2.0, rng).sqrt();
                for o in out.iter_mut() {
                    let g: f64 = StandardNormal.sample(rng);
                    *o = a * gaussian_scale * time_scale * g;
                }
            }
        }
    }

    pub fn increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        self.increment_into(dt, rng, &mut out);
        out
    }
}

/// One symmetric α-stable increment over `dt`.
pub fn sample_stable_increment<R: Rng + ?Sized>(
    alpha: f64,
    dt: f64,
    dimension: usize,
    spectral: &SpectralMeasure,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(LabError::config("dt must be positive"));
    }
    Ok(StableSampler::new(alpha, dimension, spectral)?.increment(dt, rng))
}

/// Treatment of jumps below the cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmallJumpPolicy {
    /// Discard small jumps (bias of order cutoff^{2-α}).
    #[default]
    Drop,
    /// Replace them by a Gaussian with the same covariance.
    GaussianCorrection,
}

/// A jump of the compound-Poisson part: time offset and size.
#[derive(Clone, Debug, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub size: Vec<f64>,
}

/// Thinning sampler for the Lévy measure `Q ν_α`.
#[derive(Clone, Debug)]
pub struct QModulatedSampler {
    spec: LevyNoiseSpec,
    cutoff: f64,
    policy: SmallJumpPolicy,
    /// Proposal rate per unit time.
    rate: f64,
    /// Cholesky factor of the small-jump covariance per unit time.
    small_chol: Option<DMatrix<f64>>,
}

impl QModulatedSampler {
    pub fn new(spec: &LevyNoiseSpec, cutoff: f64, policy: SmallJumpPolicy) -> Result<Self> {
        spec.require_simulable()?;
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(LabError::config("small_jump_cutoff must be positive"));
        }
        let alpha = spec.alpha();
        let d = spec.dimension();
        let rate = spec.q_sup() * spec.spectral().mass(d) * cutoff.powf(-alpha) / alpha;
        let small_chol = match policy {
            SmallJumpPolicy::Drop => None,
            SmallJumpPolicy::GaussianCorrection => {
                let cov = small_jump_covariance(spec, cutoff)?;
                let chol = cov.clone().cholesky().ok_or_else(|| {
                    LabError::numerical("levy_noise", "small-jump covariance is not positive definite")
                })?;
                Some(chol.l())
            }
        };
        Ok(QModulatedSampler {
            spec: spec.clone(),
            cutoff,
            policy,
            rate,
            small_chol,
        })
    }

    pub fn spec(&self) -> &LevyNoiseSpec {
        &self.spec
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn policy(&self) -> SmallJumpPolicy {
        self.policy
    }

    /// Expected number of proposals per unit time.
    pub fn proposal_rate(&self) -> f64 {
        self.rate
    }

    /// Propose one jump above the cutoff; `Some` when accepted.
    fn propose<R: Rng + ?Sized>(&self, rng: &mut R, dir: &mut [f64]) -> Result<Option<f64>> {
        let alpha = self.spec.alpha();
        let d = self.spec.dimension();
        let u: f64 = rng.sample(Open01);
        let r = self.cutoff * u.powf(-1.0 / alpha);
        self.spec.spectral().sample_direction(d, rng, dir);
        let q = self.spec.q_family().along(alpha, d, dir).eval(r);
        if q > self.spec.q_sup() * (1.0 + 1e-12) {
            return Err(LabError::QSupViolated {
                radius: r,
                value: q,
                bound: self.spec.q_sup(),
            });
        }
        let accept: f64 = rng.random();
        Ok(if accept * self.spec.q_sup() < q { Some(r) } else { None })
    }

    /// Accepted large jumps on `[0, horizon)`, sorted by time.
    pub fn large_jumps<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Result<Vec<Jump>> {
        let mean = self.rate * horizon;
        let count = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| LabError::numerical("levy_noise", e.to_string()))?
                .sample(rng) as usize
        } else {
            0
        };
        let d = self.spec.dimension();
        let mut jumps = Vec::new();
        let mut dir = vec![0.0; d];
        for _ in 0..count {
            let t = rng.random::<f64>() * horizon;
            if let Some(r) = self.propose(rng, &mut dir)? {
                jumps.push(Jump {
                    time: t,
                    size: dir.iter().map(|s| s * r).collect(),
                });
            }
        }
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(jumps)
    }

    /// Contribution of the small jumps over `dt`, added to `out`.
    pub fn add_small_jumps<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        if let Some(l) = &self.small_chol {
            let d = out.len();
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let sq = dt.sqrt();
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += l[(i, j)] * g[j];
                }
                out[i] += sq * acc;
            }
        }
    }

    /// Full increment over `dt`: large jumps plus the small-jump policy.
    pub fn increment_into<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mean = self.rate * dt;
        let count = Poisson::new(mean)
            .map_err(|e| LabError::numerical("levy_noise", e.to_string()))?
            .sample(rng) as usize;
        let mut dir = vec![0.0; out.len()];
        for _ in 0..count {
            if let Some(r) = self.propose(rng, &mut dir)? {
                for (o, s) in out.iter_mut().zip(&dir) {
                    *o += r * s;
                }
            }
        }
        self.add_small_jumps(dt, rng, out);
        Ok(())
    }
}

/// One increment of the Q-modulated process over `dt`.
pub fn sample_q_modulated_increment<R: Rng + ?Sized>(
    spec: &LevyNoiseSpec,
    dt: f64,
    small_jump_cutoff: f64,
    policy: SmallJumpPolicy,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(LabError::config("dt must be positive"));
    }
    let sampler = QModulatedSampler::new(spec, small_jump_cutoff, policy)?;
    let mut out = vec![0.0; spec.dimension()];
    sampler.increment_into(dt, rng, &mut out)?;
    Ok(out)
}

/// `∫_{|z| ≤ ε} z zᵀ Q(z) ν_α(dz)` per unit time.
pub fn small_jump_covariance(spec: &LevyNoiseSpec, cutoff: f64) -> Result<DMatrix<f64>> {
    let alpha = spec.alpha();
    let d = spec.dimension();
    let rule = spec.spectral().sphere_rule(d, 16)?;
    let g = GaussLegendre::new(32);
    let p = 2.0 - alpha;
    let mut cov = DMatrix::zeros(d, d);
    for (dir, w) in rule.directions.iter().zip(&rule.weights) {
        let rq = spec.q_family().along(alpha, d, dir);
        // r = ε u^{1/p} turns r^{1-α} dr into ε^p / p du.
        let radial = radial_small_moment(&rq, cutoff, p, &g);
        let s = DVector::from_column_slice(dir);
        cov += (&s * s.transpose()) * (w * radial);
    }
    Ok(cov)
}

fn radial_small_moment(rq: &RadialQ, cutoff: f64, p: f64, g: &GaussLegendre) -> f64 {
    let mut edges = vec![0.0, 1.0];
    for b in rq.breakpoints() {
        if b < cutoff {
            edges.push((b / cutoff).powf(p));
        }
    }
    edges.sort_by(|a, b| a.total_cmp(b));
    cutoff.powf(p) / p * g.integrate_panels(&edges, |u| rq.eval(cutoff * u.powf(1.0 / p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_noise::{QFamily, StabilityIndex};
    use crate::rng::SeedTree;

    #[test]
    fn positive_stable_laplace_transform() {
        let mut rng = SeedTree::new(11).stream(0);
        let a = 0.75;
        let n = 200_000;
        for lam in [0.5f64, 1.0, 2.0] {
            let m: f64 = (0..n).map(|_| (-lam * positive_stable(a, &mut rng)).exp()).sum::<f64>() / n as f64;
            let exact = (-lam.powf(a)).exp();
            assert!((m - exact).abs() < 4e-3, "lam={lam}: {m} vs {exact}");
        }
    }

    #[test]
    fn small_covariance_stable_closed_form() {
        let spec = LevyNoiseSpec::stable(StabilityIndex::new(1.5).unwrap(), 1, SpectralMeasure::Isotropic).unwrap();
        let c = small_jump_covariance(&spec, 0.1).unwrap();
        let exact = 0.1f64.powf(0.5) / 0.5;
        assert!((c[(0, 0)] - exact).abs() < 1e-12);
    }

    #[test]
    fn truncated_jumps_bounded() {
        let spec = LevyNoiseSpec::new(
            StabilityIndex::new(1.5).unwrap(),
            1,
            SpectralMeasure::Isotropic,
            QFamily::Truncated { r0: 1.0 },
            1.0,
        )
        .unwrap();
        let s = QModulatedSampler::new(&spec, 0.05, SmallJumpPolicy::Drop).unwrap();
        let mut rng = SeedTree::new(3).stream(0);
        let jumps = s.large_jumps(50.0, &mut rng).unwrap();
        assert!(!jumps.is_empty());
        assert!(jumps.iter().all(|j| j.size[0].abs() <= 1.0));
    }

    #[test]
    fn q_sup_violation_is_hard_error() {
        let good = LevyNoiseSpec::new(
            StabilityIndex::new(1.5).unwrap(),
            1,
            SpectralMeasure::Isotropic,
            QFamily::Lamperti {
                profile: crate::levy_noise::SphereProfile::Constant { value: 2.0 },
            },
            QFamily::Lamperti {
                profile: crate::levy_noise::SphereProfile::Constant { value: 2.0 },
            }
            .natural_sup(1.5, 1),
        )
        .unwrap();
        let mut bad = QModulatedSampler::new(&good, 0.5, SmallJumpPolicy::Drop).unwrap();
        bad.spec = good.clone().with_q_sup_unchecked(1.0);
        let mut rng = SeedTree::new(5).stream(0);
        let mut saw_error = false;
        for _ in 0..2000 {
            if let Err(LabError::QSupViolated { .. }) = bad.large_jumps(1.0, &mut rng) {
                saw_error = true;
                break;
            }
        }
        assert!(saw_error);
    }
}
