//! Density of the frozen (linearised) proxy by Fourier inversion of its multi-scale symbol.
//!
//! Everything is computed in the rescaled variable `u = 𝕋_{s-t}^{-1}(y - m̃)`, whose
//! characteristic exponent is `(s-t) Φ_S̃((s-t)^{-1/α} z)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::flows::{frozen_shift_map, CoveringFlow, FlowConfig, FrozenShift};
use crate::levy_noise::{base_symbol, BaseSymbol, SymbolQuadrature};
use crate::model::ChainModel;
use crate::quadrature::{uniform_edges, GaussLegendre};
use crate::scale_geometry::{scale_matrix, Resolvent, ScaleMatrices, RESOLVENT_TOL};
use crate::stats::{chi_square_test, log_log_slope, ChiSquareResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyConfig {
    /// Gauss–Legendre nodes of the `v ∈ [0, 1]` integral.
    pub v_nodes: usize,
    pub symbol: SymbolQuadrature,
    pub flow: FlowConfig,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            v_nodes: 64,
            symbol: SymbolQuadrature::default(),
            flow: FlowConfig::default(),
        }
    }
}

/// Frozen symbol of the proxy for one freezing pair `(τ, ξ)` and times `t < s`.
#[derive(Clone)]
pub struct FrozenSymbolContext {
    alpha: f64,
    t: f64,
    s: f64,
    /// `R̂_v B σ̃_{u(v)} = 𝕄^{-1}_{s-t} R_{s,u(v)} B σ̃_{u(v)}` at the v-nodes, each `N×d`.
    factors: Vec<DMatrix<f64>>,
    v_weights: Vec<f64>,
    base: Arc<dyn BaseSymbol>,
    shift: FrozenShift,
    scale: ScaleMatrices,
}

impl std::fmt::Debug for FrozenSymbolContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrozenSymbolContext")
            .field("alpha", &self.alpha)
            .field("t", &self.t)
            .field("s", &self.s)
            .finish()
    }
}

impl FrozenSymbolContext {
    pub fn new(model: &ChainModel, tau: f64, xi: &[f64], t: f64, s: f64, cfg: &ProxyConfig) -> Result<Self> {
        let base: Arc<dyn BaseSymbol> = Arc::from(base_symbol(&model.noise, &cfg.symbol)?);
        Self::with_symbol(model, base, tau, xi, t, s, cfg)
    }

    /// Reuses an already tabulated base symbol.
    pub fn with_symbol(
        model: &ChainModel,
        base: Arc<dyn BaseSymbol>,
        tau: f64,
        xi: &[f64],
        t: f64,
        s: f64,
        cfg: &ProxyConfig,
    ) -> Result<Self> {
        if !(s > t) {
            return Err(LabError::config(format!("proxy density needs s > t, got t={t}, s={s}")));
        }
        let shape = model.shape();
        let d = shape.noise_dim();
        let h = s - t;
        let alpha = model.alpha();
        let scale = scale_matrix(shape, alpha, h);
        let g = GaussLegendre::new(cfg.v_nodes.max(1));
        let (vs, v_weights): (Vec<f64>, Vec<f64>) = g.mapped(0.0, 1.0).unzip();
        let us: Vec<f64> = vs.iter().map(|v| t + v * h).collect();
        let resolvents = Resolvent::new(&model.matrix, RESOLVENT_TOL).from_target(s, &us)?;
        let flow = match model.diffusion.as_constant() {
            Some(_) => None,
            None => Some(CoveringFlow::new(&model.drift, &model.matrix, tau, xi, t, s, &cfg.flow)?),
        };
        let m_inv = DMatrix::from_diagonal(&scale.m_inv);
        let factors = us
            .iter()
            .zip(&resolvents)
            .map(|(&u, r)| {
                let sigma = match &flow {
                    None => model.diffusion.as_constant().unwrap().clone(),
                    Some(f) => model.diffusion.eval(u, &f.at(u)),
                };
                &m_inv * r.columns(0, d) * sigma
            })
            .collect();
        let shift = frozen_shift_map(&model.drift, &model.matrix, tau, xi, t, s, &cfg.flow)?;
        Ok(FrozenSymbolContext {
            alpha,
            t,
            s,
            factors,
            v_weights,
            base,
            shift,
            scale,
        })
    }

    pub fn dimension(&self) -> usize {
        self.scale.t.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gap(&self) -> f64 {
        self.s - self.t
    }

    pub fn shift(&self) -> &FrozenShift {
        &self.shift
    }

    pub fn scale(&self) -> &ScaleMatrices {
        &self.scale
    }

    /// `Φ_S̃(z) = ∫_0^1 Φ((R̂_v B σ̃)^* z) dv`.
    pub fn frozen_symbol(&self, z: &[f64]) -> f64 {
        self.weighted_symbol(z, 1.0)
    }

    /// Characteristic exponent of `𝕋^{-1}_{s-t} Λ̃`: `(s-t) Φ_S̃((s-t)^{-1/α} z)`.
    pub fn scaled_symbol(&self, z: &[f64]) -> f64 {
        let h = self.gap();
        h * self.weighted_symbol(z, h.powf(-1.0 / self.alpha))
    }

    fn weighted_symbol(&self, z: &[f64], factor: f64) -> f64 {
        let zv = DVector::from_column_slice(z);
        self.factors
            .iter()
            .zip(&self.v_weights)
            .map(|(k, w)| {
                let arg = k.tr_mul(&zv) * factor;
                w * self.base.eval(arg.as_slice())
            })
            .sum()
    }

    /// `𝕋^{-1}_{s-t}(y - m̃(x))`.
    pub fn to_scaled(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let m = self.shift.apply(x);
        y.iter()
            .zip(&m)
            .zip(self.scale.t_inv.iter())
            .map(|((yi, mi), ti)| (yi - mi) * ti)
            .collect()
    }

    /// `y = m̃(x) + 𝕋_{s-t} u`.
    pub fn from_scaled(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let m = self.shift.apply(x);
        m.iter().zip(u).zip(self.scale.t.iter()).map(|((mi, ui), ti)| mi + ti * ui).collect()
    }

    /// Smallest `Z` with `exp(scaled_symbol(Z w)) ≤ floor` along the unit direction `w`.
    pub fn decay_radius(&self, w: &[f64], floor: f64) -> Result<f64> {
        let target = floor.ln();
        let at = |r: f64| {
            let z: Vec<f64> = w.iter().map(|c| c * r).collect();
            self.scaled_symbol(&z)
        };
        let mut hi = 1.0;
        let mut iters = 0;
        while at(hi) > target {
            hi *= 2.0;
            iters += 1;
            if iters > 60 {
                return Err(LabError::numerical(
                    "proxy_density",
                    "characteristic function does not decay along a probe direction",
                ));
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if at(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// Largest `C` with `Φ_S̃(z) ≤ C(1 - |z|^α)` on the probe set (needs `|z| > 1` probes).
    pub fn coercivity_constant(&self, probes: &[Vec<f64>]) -> f64 {
        probes
            .iter()
            .filter_map(|z| {
                let r: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                (r > 1.0).then(|| -self.frozen_symbol(z) / (r.powf(self.alpha) - 1.0))
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Tensor FFT inversion grid in `u`-units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionGrid {
    /// Points per axis; `0` picks 4096, 256 and 64 for one, two and three axes.
    pub points_per_axis: usize,
    /// Characteristic-function magnitude at the frequency cut-off.
    pub decay_floor: f64,
    /// Accepted `|∫ p̃ - 1|`.
    pub mass_tolerance: f64,
    /// Frequency half-widths per axis; computed from the decay when absent.
    pub z_max: Option<Vec<f64>>,
}

impl Default for InversionGrid {
    fn default() -> Self {
        InversionGrid {
            points_per_axis: 0,
            decay_floor: 1e-12,
            mass_tolerance: 1e-4,
            z_max: None,
        }
    }
}

/// Largest state dimension handled by tensor inversion.
pub const MAX_INVERSION_DIM: usize = 3;

impl InversionGrid {
    fn points(&self, dims: usize) -> usize {
        if self.points_per_axis > 0 {
            return self.points_per_axis;
        }
        match dims {
            1 => 4096,
            2 => 256,
            _ => 64,
        }
    }

    fn resolve_z_max(&self, ctx: &FrozenSymbolContext) -> Result<Vec<f64>> {
        let n = ctx.dimension();
        if let Some(z) = &self.z_max {
            if z.len() != n {
                return Err(LabError::config("z_max needs one entry per axis"));
            }
            return Ok(z.clone());
        }
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                ctx.decay_radius(&e, self.decay_floor)
            })
            .collect()
    }
}

/// Density values on a centred tensor grid in `u`-units, stored with axis 0 fastest.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    pub points: usize,
    pub du: Vec<f64>,
    pub z_max: Vec<f64>,
    pub values: Vec<f64>,
    /// Total absolute mass of clipped negative values.
    pub negative_mass: f64,
    /// Indices of clipped values.
    pub clipped: Vec<usize>,
    /// `|Σ p Δu - 1|` after clipping.
    pub mass_defect: f64,
}

impl DensityGrid {
    pub fn dims(&self) -> usize {
        self.du.len()
    }

    /// Coordinate of index `j` along `axis`.
    pub fn coordinate(&self, axis: usize, j: usize) -> f64 {
        (j as f64 - (self.points / 2) as f64) * self.du[axis]
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &j| acc * self.points + j)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        (0..self.dims())
            .map(|_| {
                let j = flat % self.points;
                flat /= self.points;
                j
            })
            .collect()
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[self.index(idx)]
    }

    pub fn cell_volume(&self) -> f64 {
        self.du.iter().product()
    }

    /// Marginal on one axis by summing the others.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.points];
        let other: f64 = self.du.iter().enumerate().filter(|(a, _)| *a != axis).map(|(_, d)| d).product();
        for (flat, v) in self.values.iter().enumerate() {
            out[self.multi_index(flat)[axis]] += v * other;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Fourier multiplier applied before inversion.
#[derive(Clone, Debug, PartialEq)]
pub enum Multiplier {
    None,
    /// `(-i z·w)^k`, giving the `k`-th derivative along `w`.
    Directional { direction: Vec<f64>, order: u32 },
}

fn fft_axis(data: &mut [Complex<f64>], points: usize, dims: usize, axis: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_forward(points);
    let stride = points.pow(axis as u32);
    let total = points.pow(dims as u32);
    let mut line = vec![Complex::new(0.0, 0.0); points];
    for start in 0..total {
        // Visit each line once: its first element has a zero index along `axis`.
        if (start / stride) % points != 0 {
            continue;
        }
        for (k, l) in line.iter_mut().enumerate() {
            *l = data[start + k * stride];
        }
        fft.process(&mut line);
        for (k, l) in line.iter().enumerate() {
            data[start + k * stride] = *l;
        }
    }
}

/// `q(u) = (2π)^{-N} ∫ e^{-i⟨u, z⟩} m(z) exp(scaled_symbol(z)) dz` on the tensor grid.
pub fn invert_on_grid(ctx: &FrozenSymbolContext, grid: &InversionGrid, multiplier: &Multiplier) -> Result<DensityGrid> {
    let n = ctx.dimension();
    if n > MAX_INVERSION_DIM {
        return Err(LabError::config(format!(
            "tensor inversion supports N <= {MAX_INVERSION_DIM}; use marginal laws for N = {n}"
        )));
    }
    let m = grid.points(n);
    if m < 4 || m % 2 != 0 {
        return Err(LabError::config("inversion grid needs an even number of points per axis"));
    }
    let z_max = grid.resolve_z_max(ctx)?;
    let dz: Vec<f64> = z_max.iter().map(|z| 2.0 * z / m as f64).collect();
    let du: Vec<f64> = dz.iter().map(|d| 2.0 * PI / (m as f64 * d)).collect();
    let total = m.pow(n as u32);
    let half = (m / 2) as i64;
    let coords = |flat: usize| -> Vec<i64> {
        let mut f = flat;
        (0..n)
            .map(|_| {
                let j = (f % m) as i64;
                f /= m;
                j
            })
            .collect()
    };
    let mut data: Vec<Complex<f64>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let k = coords(flat);
            let z: Vec<f64> = k.iter().zip(&dz).map(|(&ki, d)| (ki - half) as f64 * d).collect();
            let phi = ctx.scaled_symbol(&z).exp();
            let sign = if k.iter().sum::<i64>() % 2 == 0 { 1.0 } else { -1.0 };
            let mult = match multiplier {
                Multiplier::None => Complex::new(1.0, 0.0),
                Multiplier::Directional { direction, order } => {
                    let dot: f64 = z.iter().zip(direction).map(|(a, b)| a * b).sum();
                    Complex::new(0.0, -dot).powu(*order)
                }
            };
            mult * (sign * phi)
        })
        .collect();
    let mut planner = FftPlanner::new();
    for axis in 0..n {
        fft_axis(&mut data, m, n, axis, &mut planner);
    }
    let norm: f64 = dz.iter().map(|d| d / (2.0 * PI)).product();
    let mut values = Vec::with_capacity(total);
    for (flat, c) in data.iter().enumerate() {
        let j = coords(flat);
        let parity = (j.iter().sum::<i64>() + half * n as i64) % 2;
        let sign = if parity == 0 { 1.0 } else { -1.0 };
        values.push(sign * c.re * norm);
    }
    let mut out = DensityGrid {
        points: m,
        du,
        z_max,
        values,
        negative_mass: 0.0,
        clipped: vec![],
        mass_defect: 0.0,
    };
    if *multiplier == Multiplier::None {
        let cell = out.cell_volume();
        for (k, v) in out.values.iter_mut().enumerate() {
            if *v < 0.0 {
                out.negative_mass += -*v * cell;
                out.clipped.push(k);
                *v = 0.0;
            }
        }
        let mass: f64 = out.values.iter().sum::<f64>() * cell;
        out.mass_defect = (mass - 1.0).abs();
        if out.mass_defect > grid.mass_tolerance {
            return Err(LabError::MassDefect {
                defect: out.mass_defect,
                tolerance: grid.mass_tolerance,
            });
        }
    }
    Ok(out)
}

/// Direct tensor-quadrature evaluator of `q(u)` for point queries.
#[derive(Clone, Debug)]
pub struct DirectInverter {
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    values: Vec<f64>,
}

/// Panels and order per axis of the direct evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectRule {
    pub panels: usize,
    pub order: usize,
}

impl Default for DirectRule {
    fn default() -> Self {
        DirectRule { panels: 128, order: 8 }
    }
}

impl DirectInverter {
    pub fn new(ctx: &FrozenSymbolContext, grid: &InversionGrid, rule: DirectRule) -> Result<Self> {
        let n = ctx.dimension();
        if n > MAX_INVERSION_DIM {
            return Err(LabError::config("direct inversion supports N <= 3"));
        }
        let z_max = grid.resolve_z_max(ctx)?;
        let g = GaussLegendre::new(rule.order);
        let axes: Vec<Vec<(f64, f64)>> = z_max
            .iter()
            .map(|&zm| {
                let edges = uniform_edges(-zm, zm, 2.0 * zm / rule.panels as f64);
                edges
                    .windows(2)
                    .flat_map(|w| g.mapped(w[0], w[1]).collect::<Vec<_>>())
                    .collect()
            })
            .collect();
        let per = axes[0].len();
        let total = axes.iter().map(|a| a.len()).product::<usize>();
        let (nodes, weights): (Vec<Vec<f64>>, Vec<f64>) = (0..total)
            .map(|mut flat| {
                let mut z = vec![];
                let mut w = 1.0;
                for axis in &axes {
                    let k = flat % per;
                    flat /= per;
                    z.push(axis[k].0);
                    w *= axis[k].1;
                }
                (z, w)
            })
            .unzip();
        let values = nodes.par_iter().map(|z| ctx.scaled_symbol(z).exp()).collect();
        Ok(DirectInverter { nodes, weights, values })
    }

    /// `q(u)`; the symbol is even so only the cosine part survives.
    pub fn density(&self, u: &[f64]) -> f64 {
        let n = u.len() as i32;
        let acc: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.values)
            .map(|((z, w), v)| {
                let dot: f64 = z.iter().zip(u).map(|(a, b)| a * b).sum();
                w * v * dot.cos()
            })
            .sum();
        acc / (2.0 * PI).powi(n)
    }
}

/// `p̃^{τ,ξ}(t, s, x, y)` by direct quadrature.
pub fn invert_density(ctx: &FrozenSymbolContext, x: &[f64], y: &[f64], grid: &InversionGrid) -> Result<f64> {
    let inv = DirectInverter::new(ctx, grid, DirectRule::default())?;
    let u = ctx.to_scaled(x, y);
    Ok((inv.density(&u) / ctx.scale().det_t).max(0.0))
}

/// One-dimensional law of `⟨w, U⟩` for `U = 𝕋^{-1}(X̃_s - m̃)`.
#[derive(Clone, Debug)]
pub struct MarginalLaw {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    phi: Vec<f64>,
}

impl MarginalLaw {
    pub fn new(ctx: &FrozenSymbolContext, direction: &[f64], decay_floor: f64, panels: usize) -> Result<Self> {
        let z_max = ctx.decay_radius(direction, decay_floor)?;
        let g = GaussLegendre::new(12);
        let edges = uniform_edges(0.0, z_max, z_max / panels.max(1) as f64);
        let (nodes, weights): (Vec<f64>, Vec<f64>) =
            edges.windows(2).flat_map(|w| g.mapped(w[0], w[1]).collect::<Vec<_>>()).unzip();
        let phi = nodes
            .iter()
            .map(|&z| {
                let v: Vec<f64> = direction.iter().map(|c| c * z).collect();
                ctx.scaled_symbol(&v).exp()
            })
            .collect();
        Ok(MarginalLaw { nodes, weights, phi })
    }

    /// Axis marginal of coordinate `axis`.
    pub fn axis(ctx: &FrozenSymbolContext, axis: usize) -> Result<Self> {
        let mut e = vec![0.0; ctx.dimension()];
        e[axis] = 1.0;
        Self::new(ctx, &e, 1e-14, 2000)
    }

    /// `(1/π) ∫_0^∞ cos(u z) φ(z) dz`.
    pub fn pdf(&self, u: f64) -> f64 {
        let s: f64 = self.nodes.iter().zip(&self.weights).zip(&self.phi).map(|((z, w), p)| w * p * (u * z).cos()).sum();
        s / PI
    }

    /// `1/2 + (1/π) ∫_0^∞ sin(u z)/z φ(z) dz`.
    pub fn cdf(&self, u: f64) -> f64 {
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .zip(&self.phi)
            .map(|((z, w), p)| w * p * (u * z).sin() / z)
            .sum();
        (0.5 + s / PI).clamp(0.0, 1.0)
    }

    /// Quantile by bisection on the CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.cdf(lo) > p {
            lo *= 2.0;
        }
        while self.cdf(hi) < p {
            hi *= 2.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Pearson test of a scaled sample against a marginal law on `bins` equiprobable bins.
pub fn marginal_chi_square(law: &MarginalLaw, sample: &[f64], bins: usize) -> ChiSquareResult {
    let edges: Vec<f64> = (1..bins).map(|k| law.quantile(k as f64 / bins as f64)).collect();
    let mut counts = vec![0u64; bins];
    for &u in sample {
        let b = edges.partition_point(|e| *e < u);
        counts[b] += 1;
    }
    chi_square_test(&counts, &vec![1.0 / bins as f64; bins], 0)
}

/// Collapse of rescaled profiles across a sweep of time gaps.
#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub gaps: Vec<f64>,
    /// Max absolute deviation from the first profile, per gap.
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
    /// Max relative deviation per `|u|` band, per gap; bands are `[0,1), [1,3), [3,10), [10,∞)`.
    pub band_relative: Vec<[f64; 4]>,
    /// Smallest band edge beyond which the relative deviation exceeds the tolerance, if any.
    pub divergence_radius: Option<f64>,
}

pub const SCALING_BANDS: [f64; 4] = [0.0, 1.0, 3.0, 10.0];

/// Compares `det 𝕋 · p̃(m̃ + 𝕋 u)` across contexts on one shared grid.
pub fn verify_scaling(ctxs: &[FrozenSymbolContext], grid: &InversionGrid, rel_tolerance: f64) -> Result<ScalingReport> {
    if ctxs.is_empty() {
        return Err(LabError::config("scaling check needs at least one context"));
    }
    let n = ctxs[0].dimension();
    let mut z_max = vec![0.0f64; n];
    for c in ctxs {
        for (zm, z) in z_max.iter_mut().zip(grid.resolve_z_max(c)?) {
            *zm = zm.max(z);
        }
    }
    let shared = InversionGrid {
        z_max: Some(z_max),
        mass_tolerance: f64::INFINITY,
        ..grid.clone()
    };
    let profiles: Vec<DensityGrid> = ctxs
        .iter()
        .map(|c| invert_on_grid(c, &shared, &Multiplier::None))
        .collect::<Result<_>>()?;
    let reference = &profiles[0];
    let floor = 1e-3 * reference.max_abs();
    let mut deviation = vec![];
    let mut band_relative = vec![];
    for p in &profiles {
        let mut dev = 0.0f64;
        let mut bands = [0.0f64; 4];
        for (flat, (a, b)) in p.values.iter().zip(&reference.values).enumerate() {
            dev = dev.max((a - b).abs());
            let idx = reference.multi_index(flat);
            let r: f64 = idx
                .iter()
                .enumerate()
                .map(|(ax, &j)| reference.coordinate(ax, j).powi(2))
                .sum::<f64>()
                .sqrt();
            if *b > floor * 1e-3 {
                let band = SCALING_BANDS.iter().rposition(|e| r >= *e).unwrap();
                bands[band] = bands[band].max((a - b).abs() / b);
            }
        }
        deviation.push(dev);
        band_relative.push(bands);
    }
    let divergence_radius = (0..4)
        .find(|&b| band_relative.iter().any(|bands| bands[b] > rel_tolerance))
        .map(|b| SCALING_BANDS[b]);
    Ok(ScalingReport {
        gaps: ctxs.iter().map(|c| c.gap()).collect(),
        max_deviation: deviation.iter().cloned().fold(0.0, f64::max),
        deviation,
        band_relative,
        divergence_radius,
    })
}

/// Log-log fit of `max_y |D^k_{x_i} p̃| · det 𝕋` against the time gap.
#[derive(Clone, Debug)]
pub struct DerivativeReport {
    pub order: u32,
    pub component: usize,
    pub gaps: Vec<f64>,
    pub normalized_max: Vec<f64>,
    pub fitted_slope: f64,
    pub predicted_slope: f64,
}

/// `-k(1 + α(i-1))/α` for 1-based level `i`.
pub fn derivative_exponent(alpha: f64, order: u32, level: usize) -> f64 {
    -(order as f64) * (1.0 + alpha * (level as f64 - 1.0)) / alpha
}

/// `ctxs` are contexts over a gap sweep; `coordinate` is the 0-based state index of `x_i`.
pub fn derivative_bound_check(
    ctxs: &[FrozenSymbolContext],
    order: u32,
    coordinate: usize,
    level: usize,
    grid: &InversionGrid,
) -> Result<DerivativeReport> {
    let mut gaps = vec![];
    let mut maxima = vec![];
    for ctx in ctxs {
        // ∂_{x_i} u = -𝕋^{-1} R_{s,t} e_i.
        let r = &ctx.shift().resolvent;
        let direction: Vec<f64> = (0..ctx.dimension())
            .map(|row| r[(row, coordinate)] * ctx.scale().t_inv[row])
            .collect();
        let mult = if order == 0 {
            Multiplier::None
        } else {
            Multiplier::Directional { direction, order }
        };
        let g = InversionGrid {
            mass_tolerance: f64::INFINITY,
            ..grid.clone()
        };
        let q = invert_on_grid(ctx, &g, &mult)?;
        gaps.push(ctx.gap());
        maxima.push(q.max_abs());
    }
    let fitted_slope = log_log_slope(&gaps, &maxima);
    let alpha = ctxs.first().map(|c| c.alpha()).unwrap_or(1.5);
    Ok(DerivativeReport {
        order,
        component: level,
        gaps,
        normalized_max: maxima,
        fitted_slope,
        predicted_slope: derivative_exponent(alpha, order, level),
    })
}

/// CSV rows `y_1..y_N, density, clipped` of a density grid mapped back to `y`.
pub fn density_csv(ctx: &FrozenSymbolContext, x: &[f64], grid: &DensityGrid) -> String {
    let n = grid.dims();
    let mut out = String::new();
    for k in 0..n {
        out.push_str(&format!("y{},", k + 1));
    }
    out.push_str("density,clipped\n");
    let det = ctx.scale().det_t;
    for (flat, v) in grid.values.iter().enumerate() {
        let idx = grid.multi_index(flat);
        let u: Vec<f64> = idx.iter().enumerate().map(|(a, &j)| grid.coordinate(a, j)).collect();
        let y = ctx.from_scaled(x, &u);
        for c in y {
            out.push_str(&format!("{c},"));
        }
        let clipped = grid.clipped.binary_search(&flat).is_ok();
        out.push_str(&format!("{},{}\n", v / det, clipped as u8));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_noise::{LevyNoiseSpec, SpectralMeasure, StabilityIndex};
    use crate::scale_geometry::ChainShape;

    fn stable_chain(n: usize, alpha: f64) -> ChainModel {
        let noise = LevyNoiseSpec::stable(StabilityIndex::new(alpha).unwrap(), 1, SpectralMeasure::Isotropic).unwrap();
        ChainModel::noise_only(ChainShape::scalar(n).unwrap(), noise).unwrap()
    }

    #[test]
    fn zero_frequency_symbol_vanishes() {
        let ctx = FrozenSymbolContext::new(&stable_chain(2, 1.5), 0.0, &[0.0, 0.0], 0.0, 0.5, &ProxyConfig::default())
            .unwrap();
        assert_eq!(ctx.frozen_symbol(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn nondegenerate_frozen_symbol_is_base_symbol() {
        let model = stable_chain(1, 1.5);
        let ctx = FrozenSymbolContext::new(&model, 0.0, &[0.0], 0.2, 0.7, &ProxyConfig::default()).unwrap();
        for z in [0.3, 1.0, 4.0] {
            let exact = model.noise.stable_symbol(&[z]);
            assert!((ctx.frozen_symbol(&[z]) - exact).abs() < 1e-12 * exact.abs());
        }
    }

    #[test]
    fn grid_coordinates_are_centred() {
        let g = DensityGrid {
            points: 4,
            du: vec![0.5, 2.0],
            z_max: vec![1.0, 1.0],
            values: vec![0.0; 16],
            negative_mass: 0.0,
            clipped: vec![],
            mass_defect: 0.0,
        };
        assert_eq!(g.coordinate(0, 2), 0.0);
        assert_eq!(g.coordinate(1, 0), -4.0);
        assert_eq!(g.multi_index(g.index(&[3, 1])), vec![3, 1]);
    }

    #[test]
    fn derivative_exponents() {
        assert!((derivative_exponent(1.5, 1, 1) + 2.0 / 3.0).abs() < 1e-15);
        assert!((derivative_exponent(1.5, 1, 2) + 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(derivative_exponent(1.5, 0, 2), 0.0);
    }
}
