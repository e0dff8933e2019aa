//! Radial-angular densities `Q` modulating the stable Lévy measure.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{LabError, Result};

/// Even function on the unit sphere given by a table, linearly interpolated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SphereProfile {
    /// Same value in every direction.
    Constant { value: f64 },
    /// Values at angles `k π / M`, `k = 0..M`, on the half circle; period π.
    Circle { values: Vec<f64> },
    /// Values on a polar × azimuth grid: polar `a π / (P - 1)`, azimuth `2 π b / M`.
    Sphere {
        polar: usize,
        azimuth: usize,
        values: Vec<f64>,
    },
}

impl SphereProfile {
    pub fn validate(&self, d: usize) -> Result<()> {
        match (self, d) {
            (SphereProfile::Constant { value }, _) if value.is_finite() => Ok(()),
            (SphereProfile::Circle { values }, 2) if !values.is_empty() => Ok(()),
            (
                SphereProfile::Sphere {
                    polar,
                    azimuth,
                    values,
                },
                3,
            ) => {
                if *polar < 2 || *azimuth < 2 || azimuth % 2 != 0 || values.len() != polar * azimuth {
                    return Err(LabError::config(
                        "lamperti profile: sphere table needs polar >= 2, even azimuth >= 2, polar*azimuth values",
                    ));
                }
                // Evenness at grid nodes: f(θ, φ) = f(π − θ, φ + π).
                for a in 0..*polar {
                    for b in 0..*azimuth {
                        let v = values[a * azimuth + b];
                        let w = values[(polar - 1 - a) * azimuth + (b + azimuth / 2) % azimuth];
                        if (v - w).abs() > 1e-12 * (1.0 + v.abs()) {
                            return Err(LabError::config(
                                "lamperti profile must be even: f(-s) = f(s) fails on the table",
                            ));
                        }
                    }
                }
                Ok(())
            }
            _ => Err(LabError::config(format!(
                "lamperti profile does not match dimension {d} (use constant for d=1, circle for d=2, sphere for d=3)"
            ))),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            SphereProfile::Constant { value } => *value,
            SphereProfile::Circle { values } | SphereProfile::Sphere { values, .. } => {
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Value at a unit direction.
    pub fn eval(&self, dir: &[f64]) -> f64 {
        match self {
            SphereProfile::Constant { value } => *value,
            SphereProfile::Circle { values } => {
                let m = values.len();
                let mut th = dir[1].atan2(dir[0]);
                th = th.rem_euclid(PI);
                let x = th / PI * m as f64;
                let k = (x.floor() as usize).min(m - 1);
                let frac = x - k as f64;
                values[k] * (1.0 - frac) + values[(k + 1) % m] * frac
            }
            SphereProfile::Sphere {
                polar,
                azimuth,
                values,
            } => {
                let th = dir[2].clamp(-1.0, 1.0).acos();
                let ph = dir[1].atan2(dir[0]).rem_euclid(2.0 * PI);
                let x = th / PI * (*polar - 1) as f64;
                let a = (x.floor() as usize).min(polar - 2);
                let fa = x - a as f64;
                let y = ph / (2.0 * PI) * *azimuth as f64;
                let b = (y.floor() as usize).min(azimuth - 1);
                let fb = y - b as f64;
                let b1 = (b + 1) % azimuth;
                let v = |i: usize, j: usize| values[i * azimuth + j];
                (1.0 - fa) * ((1.0 - fb) * v(a, b) + fb * v(a, b1))
                    + fa * ((1.0 - fb) * v(a + 1, b) + fb * v(a + 1, b1))
            }
        }
    }
}

/// Family of the modulating density `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QFamily {
    Stable,
    Truncated { r0: f64 },
    Layered { beta: f64, r0: f64 },
    /// Exponential tempering `e^{-rate |z|}`.
    Tempered { rate: f64 },
    Relativistic,
    Lamperti { profile: SphereProfile },
}

/// `Q` restricted to a ray `r ↦ Q(r s)`.
#[derive(Clone, Copy, Debug)]
pub enum RadialQ {
    One,
    Truncated { r0: f64 },
    Layered { exponent: f64, r0: f64 },
    Tempered { rate: f64 },
    Relativistic { power: f64 },
    Lamperti { f: f64, power: f64 },
}

impl RadialQ {
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            RadialQ::One => 1.0,
            RadialQ::Truncated { r0 } => {
                if r <= r0 {
                    1.0
                } else {
                    0.0
                }
            }
            RadialQ::Layered { exponent, r0 } => {
                if r <= r0 {
                    1.0
                } else {
                    r.powf(exponent)
                }
            }
            RadialQ::Tempered { rate } => (-rate * r).exp(),
            RadialQ::Relativistic { power } => (1.0 + r).powf(power) * (-r).exp(),
            RadialQ::Lamperti { f, power } => {
                // r / (e^r - 1) written stably for small and large r.
                let ratio = if r < 1e-8 { 1.0 - 0.5 * r } else { r / r.exp_m1() };
                (r * f).exp() * ratio.powf(power)
            }
        }
    }

    /// Radii where `Q` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            RadialQ::Truncated { r0 } | RadialQ::Layered { r0, .. } => vec![r0],
            _ => vec![],
        }
    }

    /// Radius beyond which `Q` vanishes identically, if any.
    pub fn support_end(&self) -> Option<f64> {
        match *self {
            RadialQ::Truncated { r0 } => Some(r0),
            _ => None,
        }
    }
}

impl QFamily {
    pub fn validate(&self, alpha: f64, d: usize) -> Result<()> {
        match self {
            QFamily::Stable | QFamily::Relativistic => Ok(()),
            QFamily::Truncated { r0 } => {
                if *r0 > 0.0 && r0.is_finite() {
                    Ok(())
                } else {
                    Err(LabError::config("q_family truncated: r0 must be positive"))
                }
            }
            QFamily::Layered { beta, r0 } => {
                if !(*r0 > 0.0 && r0.is_finite()) {
                    Err(LabError::config("q_family layered: r0 must be positive"))
                } else if !(*beta > alpha) {
                    Err(LabError::config(format!(
                        "q_family layered: beta ({beta}) must exceed alpha ({alpha})"
                    )))
                } else {
                    Ok(())
                }
            }
            QFamily::Tempered { rate } => {
                if *rate > 0.0 && rate.is_finite() {
                    Ok(())
                } else {
                    Err(LabError::config("q_family tempered: rate must be positive"))
                }
            }
            QFamily::Lamperti { profile } => {
                profile.validate(d)?;
                let m = profile.max_value();
                if m < 1.0 + alpha {
                    Ok(())
                } else {
                    Err(LabError::config(format!(
                        "q_family lamperti: sup f = {m} must be below 1 + alpha = {}",
                        1.0 + alpha
                    )))
                }
            }
        }
    }

    /// Restriction of `Q` to the ray through the unit direction `dir`.
    pub fn along(&self, alpha: f64, d: usize, dir: &[f64]) -> RadialQ {
        match self {
            QFamily::Stable => RadialQ::One,
            QFamily::Truncated { r0 } => RadialQ::Truncated { r0: *r0 },
            QFamily::Layered { beta, r0 } => RadialQ::Layered {
                exponent: alpha - beta,
                r0: *r0,
            },
            QFamily::Tempered { rate } => RadialQ::Tempered { rate: *rate },
            QFamily::Relativistic => RadialQ::Relativistic {
                power: (d as f64 + alpha - 1.0) / 2.0,
            },
            QFamily::Lamperti { profile } => RadialQ::Lamperti {
                f: profile.eval(dir),
                power: 1.0 + alpha,
            },
        }
    }

    /// `Q(z)` for `z != 0`.
    pub fn eval(&self, alpha: f64, z: &[f64]) -> f64 {
        let r = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dir: Vec<f64> = z.iter().map(|x| x / r).collect();
        self.along(alpha, z.len(), &dir).eval(r)
    }

    /// Analytic (or numerically maximised) bound on `sup Q`.
    pub fn natural_sup(&self, alpha: f64, d: usize) -> f64 {
        match self {
            QFamily::Stable | QFamily::Truncated { .. } | QFamily::Tempered { .. } => 1.0,
            QFamily::Layered { beta, r0 } => 1f64.max(r0.powf(alpha - beta)),
            QFamily::Relativistic => {
                let power = (d as f64 + alpha - 1.0) / 2.0;
                if power <= 1.0 {
                    1.0
                } else {
                    let r = power - 1.0;
                    (1.0 + r).powf(power) * (-r).exp()
                }
            }
            QFamily::Lamperti { profile } => {
                let rq = RadialQ::Lamperti {
                    f: profile.max_value(),
                    power: 1.0 + alpha,
                };
                // Log-concave in r: grid search then golden refinement.
                let mut best_r = 0.0;
                let mut best = 1.0f64;
                let mut r = 1e-6;
                while r < 200.0 {
                    let v = rq.eval(r);
                    if v > best {
                        best = v;
                        best_r = r;
                    }
                    r *= 1.02;
                }
                if best_r > 0.0 {
                    let (mut a, mut b) = (best_r / 1.03, best_r * 1.03);
                    let g = 0.5 * (5f64.sqrt() - 1.0);
                    for _ in 0..100 {
                        let c = b - g * (b - a);
                        let e = a + g * (b - a);
                        if rq.eval(c) > rq.eval(e) {
                            b = e;
                        } else {
                            a = c;
                        }
                    }
                    best = best.max(rq.eval(0.5 * (a + b)));
                }
                best * (1.0 + 1e-9)
            }
        }
    }

    /// Radial scale below which `Q` is bounded away from zero.
    pub fn inner_radius(&self) -> f64 {
        match self {
            QFamily::Truncated { r0 } | QFamily::Layered { r0, .. } => *r0,
            _ => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relativistic_closed_form() {
        let q = QFamily::Relativistic.eval(1.5, &[1.0]);
        let expected = 2f64.powf(0.75) * (-1f64).exp();
        assert!((q - expected).abs() < 1e-15);
        assert!((q - 0.618697).abs() < 1e-6);
    }

    #[test]
    fn truncated_and_layered() {
        let t = QFamily::Truncated { r0: 1.0 };
        assert_eq!(t.eval(1.5, &[2.0]), 0.0);
        assert_eq!(t.eval(1.5, &[-0.5]), 1.0);
        let l = QFamily::Layered { beta: 1.8, r0: 1.0 };
        assert!((l.eval(1.5, &[2.0]) - 2f64.powf(-0.3)).abs() < 1e-15);
        assert!(l.validate(1.5, 1).is_ok());
        assert!(QFamily::Layered { beta: 1.2, r0: 1.0 }.validate(1.5, 1).is_err());
    }

    #[test]
    fn lamperti_sup_exceeds_one_for_large_f() {
        let fam = QFamily::Lamperti {
            profile: SphereProfile::Constant { value: 2.0 },
        };
        let s = fam.natural_sup(1.5, 1);
        // f > (1+alpha)/2 makes Q rise above its value at the origin.
        assert!(s > 1.0);
        let grid_max = (1..20000)
            .map(|k| fam.eval(1.5, &[k as f64 * 1e-3]))
            .fold(0.0, f64::max);
        assert!(s >= grid_max);
        assert!(QFamily::Lamperti {
            profile: SphereProfile::Constant { value: 2.6 }
        }
        .validate(1.5, 1)
        .is_err());
    }

    #[test]
    fn circle_profile_is_periodic_in_pi() {
        let p = SphereProfile::Circle {
            values: vec![0.0, 1.0, 0.5, 0.25],
        };
        let d = [0.3f64.cos(), 0.3f64.sin()];
        let md = [-d[0], -d[1]];
        assert!((p.eval(&d) - p.eval(&md)).abs() < 1e-12);
    }

    #[test]
    fn relativistic_sup_in_high_dimension() {
        let fam = QFamily::Relativistic;
        let s = fam.natural_sup(1.5, 3);
        let grid_max = (1..100000)
            .map(|k| fam.eval(1.5, &[k as f64 * 1e-4, 0.0, 0.0]))
            .fold(0.0, f64::max);
        assert!(s >= grid_max - 1e-12 && s - grid_max < 1e-6);
    }
}
