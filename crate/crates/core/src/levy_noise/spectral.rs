//! Spectral measures on the unit sphere.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::quadrature::GaussLegendre;

/// One symmetric atom: mass `weight / 2` at each of `±direction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralAtom {
    pub direction: Vec<f64>,
    pub weight: f64,
}

/// Angular part of the stable Lévy measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpectralMeasure {
    /// Uniform probability measure on the sphere.
    Isotropic,
    /// Unit mass on each coordinate axis, split over both signs.
    Cylindrical,
    /// Finite symmetric combination of atoms.
    DiscreteAtoms { atoms: Vec<SpectralAtom> },
}

/// Directions and weights integrating even functions against the measure.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub directions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// `E|U_1|^alpha` for `U` uniform on the unit sphere of R^d.
pub fn isotropic_moment(d: usize, alpha: f64) -> f64 {
    let df = d as f64;
    gamma(df / 2.0) * gamma((alpha + 1.0) / 2.0) / (PI.sqrt() * gamma((df + alpha) / 2.0))
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

impl SpectralMeasure {
    pub fn validate(&self, d: usize) -> Result<()> {
        if let SpectralMeasure::DiscreteAtoms { atoms } = self {
            if atoms.is_empty() {
                return Err(LabError::config("spectral.atoms must not be empty"));
            }
            for (k, a) in atoms.iter().enumerate() {
                if a.direction.len() != d {
                    return Err(LabError::config(format!(
                        "spectral.atoms[{k}].direction has length {} but dimension is {d}",
                        a.direction.len()
                    )));
                }
                let norm = a.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(LabError::config(format!("spectral.atoms[{k}].direction is zero")));
                }
                if !(a.weight > 0.0) || !a.weight.is_finite() {
                    return Err(LabError::config(format!("spectral.atoms[{k}].weight must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Total mass of the measure.
    pub fn mass(&self, d: usize) -> f64 {
        match self {
            SpectralMeasure::Isotropic => 1.0,
            SpectralMeasure::Cylindrical => d as f64,
            SpectralMeasure::DiscreteAtoms { atoms } => atoms.iter().map(|a| a.weight).sum(),
        }
    }

    /// `∫ |ξ·s|^α μ(ds)`.
    pub fn projected_moment(&self, alpha: f64, xi: &[f64]) -> f64 {
        let d = xi.len();
        match self {
            SpectralMeasure::Isotropic => {
                let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
                isotropic_moment(d, alpha) * r.powf(alpha)
            }
            SpectralMeasure::Cylindrical => xi.iter().map(|x| x.abs().powf(alpha)).sum(),
            SpectralMeasure::DiscreteAtoms { atoms } => atoms
                .iter()
                .map(|a| {
                    let s = normalize(&a.direction);
                    let p: f64 = s.iter().zip(xi).map(|(u, v)| u * v).sum();
                    a.weight * p.abs().powf(alpha)
                })
                .sum(),
        }
    }

    /// Smallest projected moment over a deterministic grid of unit directions.
    pub fn nondegeneracy(&self, d: usize, alpha: f64) -> f64 {
        probe_directions(d)
            .iter()
            .map(|u| self.projected_moment(alpha, u))
            .fold(f64::INFINITY, f64::min)
    }

    /// Random unit direction distributed as `μ / mass`, including the sign.
    pub fn sample_direction<R: Rng + ?Sized>(&self, d: usize, rng: &mut R, out: &mut [f64]) {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        match self {
            SpectralMeasure::Isotropic => {
                if d == 1 {
                    out[0] = sign;
                    return;
                }
                loop {
                    let mut n2 = 0.0;
                    for o in out.iter_mut() {
                        let g: f64 = StandardNormal.sample(rng);
                        *o = g;
                        n2 += g * g;
                    }
                    if n2 > 1e-300 {
                        let n = n2.sqrt();
                        out.iter_mut().for_each(|o| *o /= n);
                        return;
                    }
                }
            }
            SpectralMeasure::Cylindrical => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let k = rng.random_range(0..d);
                out[k] = sign;
            }
            SpectralMeasure::DiscreteAtoms { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.weight).sum();
                let mut u = rng.random::<f64>() * total;
                let mut chosen = atoms.len() - 1;
                for (k, a) in atoms.iter().enumerate() {
                    if u < a.weight {
                        chosen = k;
                        break;
                    }
                    u -= a.weight;
                }
                let s = normalize(&atoms[chosen].direction);
                for (o, v) in out.iter_mut().zip(s) {
                    *o = sign * v;
                }
            }
        }
    }

    /// Rule for `∫ g dμ` with `g` even; exact for atoms, Gauss–Legendre on angles otherwise.
    pub fn sphere_rule(&self, d: usize, angular_order: usize) -> Result<SphereRule> {
        match self {
            SpectralMeasure::Cylindrical => Ok(SphereRule {
                directions: (0..d)
                    .map(|k| {
                        let mut e = vec![0.0; d];
                        e[k] = 1.0;
                        e
                    })
                    .collect(),
                weights: vec![1.0; d],
            }),
            SpectralMeasure::DiscreteAtoms { atoms } => Ok(SphereRule {
                directions: atoms.iter().map(|a| normalize(&a.direction)).collect(),
                weights: atoms.iter().map(|a| a.weight).collect(),
            }),
            SpectralMeasure::Isotropic => match d {
                1 => Ok(SphereRule {
                    directions: vec![vec![1.0]],
                    weights: vec![1.0],
                }),
                2 => {
                    // Half circle suffices for even integrands.
                    let g = GaussLegendre::new(angular_order);
                    let panels = 8;
                    let mut directions = vec![];
                    let mut weights = vec![];
                    for p in 0..panels {
                        let a = PI * p as f64 / panels as f64;
                        let b = PI * (p + 1) as f64 / panels as f64;
                        for (th, w) in g.mapped(a, b) {
                            directions.push(vec![th.cos(), th.sin()]);
                            weights.push(w / PI);
                        }
                    }
                    Ok(SphereRule { directions, weights })
                }
                3 => {
                    let g = GaussLegendre::new(angular_order);
                    let panels = 4;
                    let mut directions = vec![];
                    let mut weights = vec![];
                    for pc in 0..panels {
                        let ca = pc as f64 / panels as f64;
                        let cb = (pc + 1) as f64 / panels as f64;
                        for (c, wc) in g.mapped(ca, cb) {
                            let s = (1.0 - c * c).max(0.0).sqrt();
                            for pp in 0..2 * panels {
                                let a = 2.0 * PI * pp as f64 / (2 * panels) as f64;
                                let b = 2.0 * PI * (pp + 1) as f64 / (2 * panels) as f64;
                                for (ph, wp) in g.mapped(a, b) {
                                    directions.push(vec![s * ph.cos(), s * ph.sin(), c]);
                                    // Upper hemisphere carries the full mass of an even integrand.
                                    weights.push(wc * wp / (2.0 * PI));
                                }
                            }
                        }
                    }
                    Ok(SphereRule { directions, weights })
                }
                _ => Err(LabError::config(format!(
                    "isotropic angular quadrature supports d <= 3, got d = {d}"
                ))),
            },
        }
    }
}

/// Deterministic set of unit probe directions.
pub fn probe_directions(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0]],
        2 => (0..360)
            .map(|k| {
                let th = PI * k as f64 / 360.0;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => {
            let n = 2000;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * k as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        _ => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED);
            let mut out: Vec<Vec<f64>> = (0..d)
                .map(|k| {
                    let mut e = vec![0.0; d];
                    e[k] = 1.0;
                    e
                })
                .collect();
            for _ in 0..4096 {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                out.push(normalize(&v));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_moment_d1_is_one() {
        assert!((isotropic_moment(1, 1.3) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn isotropic_moment_d2_alpha2_is_half() {
        // E[cos^2] on the circle.
        assert!((isotropic_moment(2, 2.0) - 0.5).abs() < 1e-14);
        assert!((isotropic_moment(3, 2.0) - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_rules_reproduce_moments() {
        for d in [2usize, 3] {
            let rule = SpectralMeasure::Isotropic.sphere_rule(d, 16).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let m: f64 = rule
                .directions
                .iter()
                .zip(&rule.weights)
                .map(|(s, w)| w * s[0].abs().powf(1.5))
                .sum();
            assert!((m - isotropic_moment(d, 1.5)).abs() < 1e-6, "d={d} m={m}");
        }
    }

    #[test]
    fn degenerate_atoms_detected() {
        let mu = SpectralMeasure::DiscreteAtoms {
            atoms: vec![SpectralAtom {
                direction: vec![1.0, 0.0],
                weight: 1.0,
            }],
        };
        assert!(mu.nondegeneracy(2, 1.5) < 1e-6);
        assert!(SpectralMeasure::Cylindrical.nondegeneracy(2, 1.5) > 0.1);
    }
}
