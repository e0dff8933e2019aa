//! Lévy symbol `Φ(ξ) = ∫ (cos(ξ·z) - 1) Q(z) ν_α(dz)` by radial × spherical quadrature.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::qfamily::{QFamily, RadialQ, SphereProfile};
use super::spec::LevyNoiseSpec;
use super::spectral::{SpectralMeasure, SphereRule};
use crate::error::{LabError, Result};
use crate::quadrature::{insert_breakpoints, log_edges, uniform_edges, GaussLegendre};

/// Radial and angular grid settings for [`levy_symbol`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymbolQuadrature {
    /// Gauss–Legendre order per panel; the check run uses twice this.
    pub order: usize,
    /// Log panels per decade below the first half period.
    pub per_decade: usize,
    /// Half-period panels before the asymptotic tail takes over.
    pub oscillatory_panels: usize,
    /// Gauss–Legendre order per angular panel (continuous μ only).
    pub angular_order: usize,
    /// Relative residual above which the evaluation fails.
    pub tolerance: f64,
}

impl Default for SymbolQuadrature {
    fn default() -> Self {
        SymbolQuadrature {
            order: 10,
            per_decade: 8,
            oscillatory_panels: 200,
            angular_order: 12,
            tolerance: 1e-8,
        }
    }
}

/// Radial integral `∫_0^∞ (cos(a r) - 1) Q(r) r^{-1-α} dr` and its refinement residual.
pub fn radial_symbol(rq: &RadialQ, alpha: f64, a: f64, cfg: &SymbolQuadrature) -> (f64, f64) {
    let a = a.abs();
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let g_lo = GaussLegendre::new(cfg.order);
    let g_hi = GaussLegendre::new(2 * cfg.order);
    let end = rq.support_end();
    let r_lo = 1e-6f64.min(1e-3 / a);
    let half = PI / a;
    let r_osc = half * (1 + cfg.oscillatory_panels) as f64;

    let mut edges = log_edges(r_lo, half, cfg.per_decade);
    edges.extend(uniform_edges(half, r_osc, half).into_iter().skip(1));
    insert_breakpoints(&mut edges, &rq.breakpoints());
    if let Some(e) = end {
        edges.retain(|&r| r < e);
        if edges.is_empty() {
            edges.push(e.min(r_lo));
        }
        edges.push(e);
    }

    // -2 sin²(ar/2) avoids cancellation in cos(ar) - 1 near the origin.
    let body = |r: f64| {
        let s = (0.5 * a * r).sin();
        -2.0 * s * s * rq.eval(r) * r.powf(-1.0 - alpha)
    };
    let coarse = g_lo.integrate_panels(&edges, body);
    let fine = g_hi.integrate_panels(&edges, body);

    let q0 = rq.eval(r_lo);
    let near = -a * a * q0 * r_lo.powf(2.0 - alpha) / (2.0 * (2.0 - alpha));

    let r_tail = *edges.last().unwrap();
    let (tail, tail_res) = match end {
        Some(e) if r_tail >= e => (0.0, 0.0),
        _ => oscillatory_tail(rq, alpha, a, r_tail, end, &g_lo, &g_hi),
    };
    (fine + near + tail, (fine - coarse).abs() + tail_res)
}

/// `∫_R^{end} (cos(ar) - 1) g(r) dr` with `g = Q r^{-1-α}`: boundary terms for the
/// oscillatory part, log-radius quadrature for the rest.
fn oscillatory_tail(
    rq: &RadialQ,
    alpha: f64,
    a: f64,
    start: f64,
    end: Option<f64>,
    g_lo: &GaussLegendre,
    g_hi: &GaussLegendre,
) -> (f64, f64) {
    let g = |r: f64| rq.eval(r) * r.powf(-1.0 - alpha);
    let mut cuts: Vec<f64> = vec![start];
    cuts.extend(rq.breakpoints().into_iter().filter(|&b| b > start));
    if let Some(e) = end {
        cuts.push(e);
    }
    // Each smooth segment [p, q] contributes [sin(ar) g / a + cos(ar) g' / a²]_p^q.
    let mut cos_part = 0.0;
    for (k, &p) in cuts.iter().enumerate() {
        let q = cuts.get(k + 1).copied();
        let pp = p * (1.0 + 1e-12);
        let h = 1e-4 * p;
        let dg_p = (-3.0 * g(pp) + 4.0 * g(pp + h) - g(pp + 2.0 * h)) / (2.0 * h);
        cos_part -= (a * p).sin() * g(pp) / a + (a * p).cos() * dg_p / (a * a);
        if let Some(q) = q {
            let qq = q * (1.0 - 1e-12);
            let h = 1e-4 * q;
            let dg_q = (3.0 * g(qq) - 4.0 * g(qq - h) + g(qq - 2.0 * h)) / (2.0 * h);
            cos_part += (a * q).sin() * g(qq) / a + (a * q).cos() * dg_q / (a * a);
        }
    }
    let far = end.unwrap_or(start * 1e8);
    let mut edges = log_edges(start, far, 8);
    insert_breakpoints(&mut edges, &rq.breakpoints());
    let mass_lo = g_lo.integrate_panels(&edges, g);
    let mass_hi = g_hi.integrate_panels(&edges, g);
    let remainder = if end.is_none() {
        rq.eval(far) * far.powf(-alpha) / alpha
    } else {
        0.0
    };
    (cos_part - mass_hi - remainder, (mass_hi - mass_lo).abs())
}

/// `Φ(ξ)` by quadrature; fails if the coarse and refined rules disagree beyond tolerance.
pub fn levy_symbol(spec: &LevyNoiseSpec, xi: &[f64], cfg: &SymbolQuadrature) -> Result<f64> {
    let d = spec.dimension();
    if xi.len() != d {
        return Err(LabError::config(format!(
            "frequency has dimension {} but the noise has dimension {d}",
            xi.len()
        )));
    }
    if xi.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let rule = aligned_rule(spec.spectral(), d, cfg.angular_order, xi)?;
    let mut value = 0.0;
    let mut residual = 0.0;
    for (dir, w) in rule.directions.iter().zip(&rule.weights) {
        let a: f64 = xi.iter().zip(dir).map(|(x, s)| x * s).sum();
        let rq = spec.q_family().along(spec.alpha(), d, dir);
        let (v, r) = radial_symbol(&rq, spec.alpha(), a, cfg);
        value += w * v;
        residual += w * r;
    }
    if residual > cfg.tolerance * value.abs().max(1e-300) {
        return Err(LabError::NonConvergence {
            module: "levy_noise",
            residual,
        });
    }
    Ok(value.min(0.0))
}

/// Sphere rule; for isotropic μ the polar axis is reflected onto `ξ` so that the kink of
/// `|ξ·s|^α` falls on a panel edge.
fn aligned_rule(spectral: &SpectralMeasure, d: usize, order: usize, xi: &[f64]) -> Result<SphereRule> {
    let mut rule = spectral.sphere_rule(d, order)?;
    if !matches!(spectral, SpectralMeasure::Isotropic) || d < 2 {
        return Ok(rule);
    }
    let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Householder reflection exchanging e_d and ξ/|ξ|.
    let mut v: Vec<f64> = xi.iter().map(|x| -x / norm).collect();
    v[d - 1] += 1.0;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if vv < 1e-24 {
        return Ok(rule);
    }
    for s in rule.directions.iter_mut() {
        let dot: f64 = s.iter().zip(&v).map(|(a, b)| a * b).sum();
        for (si, vi) in s.iter_mut().zip(&v) {
            *si -= 2.0 * dot / vv * vi;
        }
    }
    Ok(rule)
}

/// A base Lévy symbol `Φ: R^d → (-∞, 0]`.
pub trait BaseSymbol: Send + Sync {
    fn dimension(&self) -> usize;
    fn alpha(&self) -> f64;
    fn eval(&self, xi: &[f64]) -> f64;
}

/// Closed-form symbol of pure stable noise.
#[derive(Clone, Debug)]
pub struct StableSymbol {
    spec: LevyNoiseSpec,
}

impl StableSymbol {
    pub fn new(spec: &LevyNoiseSpec) -> Result<Self> {
        if !spec.is_stable() {
            return Err(LabError::config("closed-form symbol requires the stable family"));
        }
        Ok(StableSymbol { spec: spec.clone() })
    }
}

impl BaseSymbol for StableSymbol {
    fn dimension(&self) -> usize {
        self.spec.dimension()
    }
    fn alpha(&self) -> f64 {
        self.spec.alpha()
    }
    fn eval(&self, xi: &[f64]) -> f64 {
        self.spec.stable_symbol(xi)
    }
}

/// Interpolation table of `J(a) / a^α` on a uniform grid in `ln a`.
#[derive(Clone, Debug)]
struct RadialTable {
    alpha: f64,
    ln_lo: f64,
    step: f64,
    values: Vec<f64>,
    slope_lo: f64,
    slope_hi: f64,
}

impl RadialTable {
    fn build<F: FnMut(f64) -> Result<f64>>(alpha: f64, lo: f64, hi: f64, per_decade: usize, mut f: F) -> Result<Self> {
        let n = ((hi / lo).log10() * per_decade as f64).round() as usize;
        let ln_lo = lo.ln();
        let step = (hi / lo).ln() / n as f64;
        let mut values = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let a = (ln_lo + step * k as f64).exp();
            values.push(f(a)? / a.powf(alpha));
        }
        let log_abs = |k: usize| (values[k].abs().max(1e-300)).ln();
        // Slopes of ln|J| against ln a at both ends.
        let slope_lo = alpha + (log_abs(1) - log_abs(0)) / step;
        let slope_hi = alpha + (log_abs(n) - log_abs(n - 1)) / step;
        Ok(RadialTable {
            alpha,
            ln_lo,
            step,
            values,
            slope_lo,
            slope_hi,
        })
    }

    fn eval(&self, a: f64) -> f64 {
        let a = a.abs();
        if a == 0.0 {
            return 0.0;
        }
        let n = self.values.len() - 1;
        let x = (a.ln() - self.ln_lo) / self.step;
        if x <= 0.0 {
            let a0 = self.ln_lo.exp();
            return self.values[0] * a0.powf(self.alpha) * (a / a0).powf(self.slope_lo);
        }
        if x >= n as f64 {
            let a1 = (self.ln_lo + self.step * n as f64).exp();
            return self.values[n] * a1.powf(self.alpha) * (a / a1).powf(self.slope_hi);
        }
        // Four-point Lagrange interpolation.
        let i = (x.floor() as usize).clamp(1, n - 2);
        let t = x - i as f64;
        let (y0, y1, y2, y3) = (self.values[i - 1], self.values[i], self.values[i + 1], self.values[i + 2]);
        let v = -t * (t - 1.0) * (t - 2.0) / 6.0 * y0 + (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0 * y1
            - (t + 1.0) * t * (t - 2.0) / 2.0 * y2
            + (t + 1.0) * t * (t - 1.0) / 6.0 * y3;
        v * a.powf(self.alpha)
    }
}

#[derive(Clone, Debug)]
enum TableLayout {
    /// `Φ(ξ) = Σ_k w_k J(|ξ·s_k|)` over a finite rule.
    Projected { directions: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Rotation-invariant `Φ(ξ) = φ(|ξ|)`.
    Radial,
}

/// Symbol precomputed on a logarithmic frequency grid.
#[derive(Clone, Debug)]
pub struct TabulatedSymbol {
    dimension: usize,
    alpha: f64,
    table: RadialTable,
    layout: TableLayout,
}

/// Frequency range and density of the tabulation.
pub const TABLE_RANGE: (f64, f64) = (1e-5, 1e6);
pub const TABLE_PER_DECADE: usize = 80;

impl TabulatedSymbol {
    /// Available when `Q` does not depend on the direction.
    pub fn new(spec: &LevyNoiseSpec, cfg: &SymbolQuadrature) -> Result<Self> {
        let d = spec.dimension();
        let alpha = spec.alpha();
        if !radial_q(spec.q_family()) {
            return Err(LabError::config("tabulated symbol needs a direction-independent Q"));
        }
        let e1: Vec<f64> = (0..d).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect();
        let rq = spec.q_family().along(alpha, d, &e1);
        let radial = |a: f64| -> Result<f64> {
            let (v, r) = radial_symbol(&rq, alpha, a, cfg);
            if r > cfg.tolerance * v.abs().max(1e-300) {
                return Err(LabError::NonConvergence {
                    module: "levy_noise",
                    residual: r,
                });
            }
            Ok(v)
        };
        let (lo, hi) = TABLE_RANGE;
        match spec.spectral() {
            SpectralMeasure::Isotropic if d >= 2 => {
                let rule = spec.spectral().sphere_rule(d, cfg.angular_order)?;
                // Tabulate J on a wider range, then average over the sphere.
                let inner = RadialTable::build(alpha, lo * 1e-3, hi, TABLE_PER_DECADE / 2, radial)?;
                let table = RadialTable::build(alpha, lo, hi, TABLE_PER_DECADE, |u| {
                    Ok(rule
                        .directions
                        .iter()
                        .zip(&rule.weights)
                        .map(|(s, w)| w * inner.eval(u * s[d - 1]))
                        .sum())
                })?;
                Ok(TabulatedSymbol {
                    dimension: d,
                    alpha,
                    table,
                    layout: TableLayout::Radial,
                })
            }
            other => {
                let rule = other.sphere_rule(d, cfg.angular_order)?;
                let table = RadialTable::build(alpha, lo, hi, TABLE_PER_DECADE, radial)?;
                Ok(TabulatedSymbol {
                    dimension: d,
                    alpha,
                    table,
                    layout: TableLayout::Projected {
                        directions: rule.directions,
                        weights: rule.weights,
                    },
                })
            }
        }
    }
}

impl BaseSymbol for TabulatedSymbol {
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn alpha(&self) -> f64 {
        self.alpha
    }
    fn eval(&self, xi: &[f64]) -> f64 {
        match &self.layout {
            TableLayout::Radial => {
                let u = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
                self.table.eval(u).min(0.0)
            }
            TableLayout::Projected { directions, weights } => directions
                .iter()
                .zip(weights)
                .map(|(s, w)| {
                    let a: f64 = xi.iter().zip(s).map(|(x, y)| x * y).sum();
                    w * self.table.eval(a)
                })
                .sum::<f64>()
                .min(0.0),
        }
    }
}

/// Quadrature on every call; used when `Q` varies with direction.
#[derive(Clone, Debug)]
pub struct DirectSymbol {
    spec: LevyNoiseSpec,
    cfg: SymbolQuadrature,
}

impl DirectSymbol {
    pub fn new(spec: &LevyNoiseSpec, cfg: &SymbolQuadrature) -> Self {
        DirectSymbol {
            spec: spec.clone(),
            cfg: cfg.clone(),
        }
    }

    pub fn try_eval(&self, xi: &[f64]) -> Result<f64> {
        levy_symbol(&self.spec, xi, &self.cfg)
    }
}

impl BaseSymbol for DirectSymbol {
    fn dimension(&self) -> usize {
        self.spec.dimension()
    }
    fn alpha(&self) -> f64 {
        self.spec.alpha()
    }
    fn eval(&self, xi: &[f64]) -> f64 {
        // Residual failures surface through `try_eval`; here the refined value is used.
        let d = self.spec.dimension();
        let rule = match aligned_rule(self.spec.spectral(), d, self.cfg.angular_order, xi) {
            Ok(r) => r,
            Err(_) => return f64::NAN,
        };
        rule.directions
            .iter()
            .zip(&rule.weights)
            .map(|(s, w)| {
                let a: f64 = xi.iter().zip(s).map(|(x, y)| x * y).sum();
                let rq = self.spec.q_family().along(self.spec.alpha(), d, s);
                w * radial_symbol(&rq, self.spec.alpha(), a, &self.cfg).0
            })
            .sum::<f64>()
            .min(0.0)
    }
}

fn radial_q(q: &QFamily) -> bool {
    match q {
        QFamily::Lamperti { profile } => matches!(profile, SphereProfile::Constant { .. }),
        _ => true,
    }
}

/// Cheapest accurate symbol for the spec: closed form, table, or direct quadrature.
pub fn base_symbol(spec: &LevyNoiseSpec, cfg: &SymbolQuadrature) -> Result<Box<dyn BaseSymbol>> {
    if spec.is_stable() {
        return Ok(Box::new(StableSymbol::new(spec)?));
    }
    if radial_q(spec.q_family()) {
        return Ok(Box::new(TabulatedSymbol::new(spec, cfg)?));
    }
    Ok(Box::new(DirectSymbol::new(spec, cfg)))
}
