//! Deterministic Cauchy–Peano flows, frozen shifts, multi-scale mollification and the
//! numerical diagnostics of the flow estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::ode::{rk4_step, Dopri5, Rk4Work};
use crate::quadrature::GaussLegendre;
use crate::rng::SeedTree;
use crate::scale_geometry::{scale_matrix, ChainMatrix, ChainShape, Resolvent};
use rand::Rng;

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Nonlinear drift `F = (F_1, …, F_n)` with per-variable Hölder exponents.
#[derive(Clone)]
pub struct DriftSpec {
    shape: ChainShape,
    f: Arc<DriftFn>,
    holder: Vec<f64>,
    bound: f64,
    label: String,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("label", &self.label)
            .field("holder", &self.holder)
            .field("bound", &self.bound)
            .finish()
    }
}

/// Verdict of the well-posedness thresholds for one level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelThreshold {
    pub level: usize,
    pub threshold: f64,
    pub beta: f64,
    pub satisfied: bool,
}

/// `(1 + α(j-2)) / (1 + α(j-1))`, the minimal Hölder exponent in variable `j ≥ 2`.
pub fn wellposedness_threshold(alpha: f64, level: usize) -> f64 {
    let j = level as f64;
    (1.0 + alpha * (j - 2.0)) / (1.0 + alpha * (j - 1.0))
}

impl DriftSpec {
    /// `f(t, x, out)` writes `F(t, x)` into `out`; `holder[j]` is the exponent in level `j + 1`.
    pub fn new<F>(shape: ChainShape, f: F, holder: Vec<f64>, bound: f64, label: impl Into<String>) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if holder.len() != shape.levels() {
            return Err(LabError::config(format!(
                "drift needs {} Hölder exponents, got {}",
                shape.levels(),
                holder.len()
            )));
        }
        if holder.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return Err(LabError::config("Hölder exponents must lie in (0, 1]"));
        }
        Ok(DriftSpec {
            shape,
            f: Arc::new(f),
            holder,
            bound,
            label: label.into(),
        })
    }

    pub fn zero(shape: ChainShape) -> Self {
        let n = shape.levels();
        DriftSpec {
            shape,
            f: Arc::new(|_, _, out: &mut [f64]| out.iter_mut().for_each(|o| *o = 0.0)),
            holder: vec![1.0; n],
            bound: 0.0,
            label: "zero".into(),
        }
    }

    /// `F(x) = e_i sgn(x_j) |x_j|^β` on the first coordinates of levels `i ≤ j` (1-based).
    pub fn peano(shape: ChainShape, level_i: usize, level_j: usize, beta: f64) -> Result<Self> {
        let n = shape.levels();
        if !(2 <= level_i && level_i <= level_j && level_j <= n) {
            return Err(LabError::config(format!(
                "peano drift needs 2 <= i <= j <= n, got i={level_i}, j={level_j}, n={n}"
            )));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(LabError::config(format!("peano exponent must lie in (0, 1], got {beta}")));
        }
        let target = shape.offset(level_i - 1);
        let source = shape.offset(level_j - 1);
        let mut holder = vec![1.0; n];
        holder[level_j - 1] = beta;
        Self::new(
            shape,
            move |_, x, out| {
                out.iter_mut().for_each(|o| *o = 0.0);
                let v = x[source];
                out[target] = sgn(v) * v.abs().powf(beta);
            },
            holder,
            0.0,
            format!("peano(i={level_i}, j={level_j}, beta={beta})"),
        )
    }

    pub fn shape(&self) -> &ChainShape {
        &self.shape
    }

    pub fn holder(&self) -> &[f64] {
        &self.holder
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }

    /// Probe that `F_i` ignores levels `< i` by perturbing forbidden coordinates.
    pub fn check_dependency(&self, horizon: f64, probes: usize, seed: u64) -> Result<()> {
        let n = self.shape.total();
        let mut rng = SeedTree::new(seed).named("drift-dependency").stream(0);
        let mut base = vec![0.0; n];
        let mut moved = vec![0.0; n];
        let mut x = vec![0.0; n];
        for _ in 0..probes {
            let t = horizon * rng.random::<f64>();
            for v in x.iter_mut() {
                *v = 4.0 * rng.random::<f64>() - 2.0;
            }
            self.eval(t, &x, &mut base);
            for k in 0..n {
                let lk = self.shape.level_of(k);
                let mut y = x.clone();
                y[k] += 0.5 + rng.random::<f64>();
                self.eval(t, &y, &mut moved);
                for c in 0..n {
                    let lc = self.shape.level_of(c);
                    // F_c may not depend on coordinates of earlier levels.
                    if lk < lc && (moved[c] - base[c]).abs() > 1e-12 * (1.0 + base[c].abs()) {
                        return Err(LabError::config(format!(
                            "drift component {} depends on coordinate {} of level {}",
                            c + 1,
                            k + 1,
                            lk + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-level comparison of the declared exponents with the well-posedness thresholds.
    pub fn thresholds(&self, alpha: f64) -> Vec<LevelThreshold> {
        (2..=self.shape.levels())
            .map(|j| {
                let threshold = wellposedness_threshold(alpha, j);
                let beta = self.holder[j - 1];
                LevelThreshold {
                    level: j,
                    threshold,
                    beta,
                    satisfied: beta > threshold,
                }
            })
            .collect()
    }
}

/// Time direction of a flow solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Integrator defining the Peano selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowIntegrator {
    /// RK4 with step doubling; fixed evaluation order.
    #[default]
    Rk4Doubling,
    /// Classical RK4 on a uniform grid of `fixed_steps` steps.
    Rk4Fixed,
    /// Dormand–Prince 5(4) on a fixed output grid.
    Dopri,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub tol: f64,
    pub integrator: FlowIntegrator,
    pub initial_step: f64,
    pub min_step: f64,
    pub state_bound: f64,
    /// Output intervals of the Dormand–Prince route.
    pub dopri_segments: usize,
    /// Steps of the uniform RK4 route.
    pub fixed_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            tol: 1e-10,
            integrator: FlowIntegrator::Rk4Doubling,
            initial_step: 1e-3,
            min_step: 1e-14,
            state_bound: 1e8,
            dopri_segments: 256,
            fixed_steps: 1000,
        }
    }
}

/// `G(t, x) = A_t x + F(t, x)`.
#[derive(Clone, Debug)]
pub struct ChainVectorField {
    pub matrix: ChainMatrix,
    pub drift: DriftSpec,
}

impl ChainVectorField {
    pub fn new(matrix: &ChainMatrix, drift: &DriftSpec) -> Result<Self> {
        if matrix.shape() != drift.shape() {
            return Err(LabError::config("drift and chain matrix have different shapes"));
        }
        Ok(ChainVectorField {
            matrix: matrix.clone(),
            drift: drift.clone(),
        })
    }

    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.drift.eval(t, x, out);
        let a = self.matrix.at(t);
        let n = x.len();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[(i, j)] * x[j];
            }
            out[i] += acc;
        }
    }
}

/// Discrete solution `u ↦ θ_{u,τ}(ξ)` with Hermite dense output.
#[derive(Clone, Debug)]
pub struct FlowSolution {
    pub tau: f64,
    pub xi: Vec<f64>,
    pub direction: Direction,
    pub integrator: FlowIntegrator,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub slopes: Vec<Vec<f64>>,
    /// Largest local error estimate accepted.
    pub max_local_error: f64,
}

impl FlowSolution {
    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn end_value(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    /// Value at `t` inside the solved interval.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let m = self.times.len();
        if m == 1 {
            return self.values[0].clone();
        }
        let forward = self.times[m - 1] > self.times[0];
        let key = |u: f64| if forward { u } else { -u };
        let tk = key(t);
        let k = match self.times.binary_search_by(|u| key(*u).total_cmp(&tk)) {
            Ok(k) => return self.values[k].clone(),
            Err(k) => k.clamp(1, m - 1),
        };
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        (0..self.xi.len())
            .map(|i| {
                h00 * self.values[k - 1][i]
                    + h10 * h * self.slopes[k - 1][i]
                    + h01 * self.values[k][i]
                    + h11 * h * self.slopes[k][i]
            })
            .collect()
    }

    /// Whether `t` lies in the solved interval.
    pub fn covers(&self, t: f64) -> bool {
        let (a, b) = (self.times[0], self.end_time());
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        t >= lo - 1e-14 && t <= hi + 1e-14
    }
}

fn check_state(x: &[f64], bound: f64, t: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > bound) {
        return Err(LabError::Divergence {
            module: "flows",
            path: 0,
            t,
        });
    }
    Ok(())
}

/// Solve `θ_{u,τ}(ξ)` from `u = τ` to `u = until` with any vector field.
pub fn solve_field<G>(g: &G, tau: f64, xi: &[f64], until: f64, cfg: &FlowConfig) -> Result<FlowSolution>
where
    G: Fn(f64, &[f64], &mut [f64]),
{
    let n = xi.len();
    let direction = if until >= tau {
        Direction::Forward
    } else {
        Direction::Backward
    };
    let mut sol = FlowSolution {
        tau,
        xi: xi.to_vec(),
        direction,
        integrator: cfg.integrator,
        times: vec![tau],
        values: vec![xi.to_vec()],
        slopes: vec![],
        max_local_error: 0.0,
    };
    let mut slope = vec![0.0; n];
    g(tau, xi, &mut slope);
    sol.slopes.push(slope.clone());
    if until == tau {
        return Ok(sol);
    }
    let dir = (until - tau).signum();
    let span = (until - tau).abs();
    match cfg.integrator {
        FlowIntegrator::Rk4Doubling => {
            let mut f = |t: f64, y: &[f64], dy: &mut [f64]| g(t, y, dy);
            let mut w = Rk4Work::new(n);
            let mut full = vec![0.0; n];
            let mut half = vec![0.0; n];
            let mut two = vec![0.0; n];
            let mut t = tau;
            let mut y = xi.to_vec();
            let mut h = cfg.initial_step.min(span);
            while (until - t) * dir > 0.0 {
                let remaining = (until - t).abs();
                let last = h >= remaining;
                let step = if last { remaining } else { h };
                let hs = dir * step;
                rk4_step(&mut f, t, &y, hs, &mut full, &mut w);
                rk4_step(&mut f, t, &y, 0.5 * hs, &mut half, &mut w);
                rk4_step(&mut f, t + 0.5 * hs, &half, 0.5 * hs, &mut two, &mut w);
                let mut err = 0.0f64;
                for i in 0..n {
                    let e = (two[i] - full[i]).abs() / 15.0;
                    err = err.max(e / (1.0 + two[i].abs()));
                }
                if !err.is_finite() {
                    return Err(LabError::Divergence {
                        module: "flows",
                        path: 0,
                        t,
                    });
                }
                if err <= cfg.tol {
                    t = if last { until } else { t + hs };
                    // Richardson-extrapolated value.
                    for i in 0..n {
                        y[i] = two[i] + (two[i] - full[i]) / 15.0;
                    }
                    check_state(&y, cfg.state_bound, t)?;
                    g(t, &y, &mut slope);
                    sol.times.push(t);
                    sol.values.push(y.clone());
                    sol.slopes.push(slope.clone());
                    sol.max_local_error = sol.max_local_error.max(err);
                    let fac = if err == 0.0 { 2.0 } else { (0.9 * (cfg.tol / err).powf(0.2)).clamp(0.3, 2.0) };
                    h = step * fac;
                } else {
                    h = step * (0.9 * (cfg.tol / err).powf(0.2)).clamp(0.1, 0.9);
                    if h < cfg.min_step {
                        return Err(LabError::StepUnderflow { module: "flows", t, h });
                    }
                }
            }
        }
        FlowIntegrator::Rk4Fixed => {
            let mut f = |t: f64, y: &[f64], dy: &mut [f64]| g(t, y, dy);
            let mut w = Rk4Work::new(n);
            let steps = cfg.fixed_steps.max(1);
            let mut y = xi.to_vec();
            let mut next = vec![0.0; n];
            for k in 1..=steps {
                let t0 = tau + (until - tau) * (k - 1) as f64 / steps as f64;
                let t1 = if k == steps {
                    until
                } else {
                    tau + (until - tau) * k as f64 / steps as f64
                };
                rk4_step(&mut f, t0, &y, t1 - t0, &mut next, &mut w);
                std::mem::swap(&mut y, &mut next);
                check_state(&y, cfg.state_bound, t1)?;
                g(t1, &y, &mut slope);
                sol.times.push(t1);
                sol.values.push(y.clone());
                sol.slopes.push(slope.clone());
            }
        }
        FlowIntegrator::Dopri => {
            let solver = Dopri5::with_tolerance(cfg.tol);
            let segments = cfg.dopri_segments.max(1);
            let mut y = xi.to_vec();
            let mut t = tau;
            for k in 1..=segments {
                let t1 = tau + (until - tau) * k as f64 / segments as f64;
                y = solver.integrate(|u, z, dz| g(u, z, dz), t, &y, t1)?;
                t = t1;
                check_state(&y, cfg.state_bound, t)?;
                g(t, &y, &mut slope);
                sol.times.push(t);
                sol.values.push(y.clone());
                sol.slopes.push(slope.clone());
            }
        }
    }
    Ok(sol)
}

/// `θ_{u,τ}(ξ)` for the chain drift `A_u x + F(u, x)`.
pub fn solve_flow(
    drift: &DriftSpec,
    matrix: &ChainMatrix,
    tau: f64,
    xi: &[f64],
    until: f64,
    cfg: &FlowConfig,
) -> Result<FlowSolution> {
    let field = ChainVectorField::new(matrix, drift)?;
    if xi.len() != matrix.shape().total() {
        return Err(LabError::config("flow start point has the wrong dimension"));
    }
    solve_field(&|t: f64, x: &[f64], out: &mut [f64]| field.eval(t, x, out), tau, xi, until, cfg)
}

/// Frozen shift `m̃^{τ,ξ}_{s,t}(x) = R_{s,t} x + ∫_t^s R_{s,u} F(u, θ_{u,τ}(ξ)) du`.
#[derive(Clone, Debug)]
pub struct FrozenShift {
    pub t: f64,
    pub s: f64,
    pub resolvent: DMatrix<f64>,
    /// The integral term, independent of `x`.
    pub offset: DVector<f64>,
}

impl FrozenShift {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (&self.resolvent * xv + &self.offset).as_slice().to_vec()
    }
}

/// Builds the affine map `x ↦ m̃^{τ,ξ}_{s,t}(x)`.
///
/// The flow is integrated jointly with the Duhamel term by the configured integrator,
/// starting from `θ_{a,τ}(ξ)` where `a` is `τ` clamped to `[t, s]`.
pub fn frozen_shift_map(
    drift: &DriftSpec,
    matrix: &ChainMatrix,
    tau: f64,
    xi: &[f64],
    t: f64,
    s: f64,
    cfg: &FlowConfig,
) -> Result<FrozenShift> {
    if !(t <= s) {
        return Err(LabError::config(format!("frozen shift needs t <= s, got t={t}, s={s}")));
    }
    let n = matrix.shape().total();
    if xi.len() != n {
        return Err(LabError::config("frozen shift start point has the wrong dimension"));
    }
    ChainVectorField::new(matrix, drift)?;
    let a = tau.clamp(t, s);
    let start = if a == tau {
        xi.to_vec()
    } else {
        solve_flow(drift, matrix, tau, xi, a, cfg)?.end_value().to_vec()
    };
    let resolvent_of = Resolvent::new(matrix, cfg.tol.max(1e-13));

    // Writes F(u, θ) into `f` and A_u θ + F(u, θ) into `dtheta`; returns A_u.
    let step = |u: f64, theta: &[f64], f: &mut [f64], dtheta: &mut [f64]| {
        drift.eval(u, theta, f);
        let am = matrix.at(u);
        for i in 0..n {
            dtheta[i] = f[i] + (0..n).map(|j| am[(i, j)] * theta[j]).sum::<f64>();
        }
        am
    };

    // Forward piece: p' = A p + F(u, θ_u), p(a) = 0, so p(s) = ∫_a^s R_{s,u} F du.
    let forward = {
        let mut z0 = start.clone();
        z0.extend(std::iter::repeat_n(0.0, n));
        let g = |u: f64, z: &[f64], dz: &mut [f64]| {
            let mut f = vec![0.0; n];
            let am = step(u, &z[..n], &mut f, &mut dz[..n]);
            for i in 0..n {
                dz[n + i] = f[i] + (0..n).map(|j| am[(i, j)] * z[n + j]).sum::<f64>();
            }
        };
        solve_field(&g, a, &z0, s, cfg)?.end_value()[n..].to_vec()
    };

    // Backward piece: W' = -W A_u, w' = -W F(u, θ_u), W(a) = I, w(a) = 0, so
    // w(t) = ∫_t^a R_{a,u} F du.
    let backward = if t < a {
        let mut z0 = start.clone();
        z0.extend(DMatrix::<f64>::identity(n, n).as_slice());
        z0.extend(std::iter::repeat_n(0.0, n));
        let g = |u: f64, z: &[f64], dz: &mut [f64]| {
            let mut f = vec![0.0; n];
            let am = step(u, &z[..n], &mut f, &mut dz[..n]);
            let w = nalgebra::DMatrixView::from_slice(&z[n..n + n * n], n, n);
            let dw = -(w * &am);
            dz[n..n + n * n].copy_from_slice(dw.as_slice());
            let wf = -(w * DVector::from_column_slice(&f));
            dz[n + n * n..].copy_from_slice(wf.as_slice());
        };
        let end = solve_field(&g, a, &z0, t, cfg)?;
        DVector::from_column_slice(&end.end_value()[n + n * n..])
    } else {
        DVector::zeros(n)
    };
    let offset = DVector::from_vec(forward) + resolvent_of.between(s, a)? * backward;
    Ok(FrozenShift {
        t,
        s,
        resolvent: resolvent_of.between(s, t)?,
        offset,
    })
}

/// `m̃^{τ,ξ}_{s,t}(x)`.
#[allow(clippy::too_many_arguments)]
pub fn frozen_shift(
    drift: &DriftSpec,
    matrix: &ChainMatrix,
    tau: f64,
    xi: &[f64],
    t: f64,
    s: f64,
    x: &[f64],
    cfg: &FlowConfig,
) -> Result<Vec<f64>> {
    Ok(frozen_shift_map(drift, matrix, tau, xi, t, s, cfg)?.apply(x))
}


/// `u ↦ θ_{u,τ}(ξ)` over `[min(t, τ), max(s, τ)]`, solved in both directions from `τ`.
#[derive(Clone, Debug)]
pub struct CoveringFlow {
    tau: f64,
    xi: Vec<f64>,
    backward: Option<FlowSolution>,
    forward: Option<FlowSolution>,
}

impl CoveringFlow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        drift: &DriftSpec,
        matrix: &ChainMatrix,
        tau: f64,
        xi: &[f64],
        t: f64,
        s: f64,
        cfg: &FlowConfig,
    ) -> Result<Self> {
        let backward = if t < tau {
            Some(solve_flow(drift, matrix, tau, xi, t, cfg)?)
        } else {
            None
        };
        let forward = if s > tau {
            Some(solve_flow(drift, matrix, tau, xi, s, cfg)?)
        } else {
            None
        };
        Ok(CoveringFlow {
            tau,
            xi: xi.to_vec(),
            backward,
            forward,
        })
    }

    pub fn at(&self, u: f64) -> Vec<f64> {
        let piece = if u < self.tau { &self.backward } else { &self.forward };
        match piece {
            Some(sol) if u != self.tau => sol.at(u),
            _ => self.xi.clone(),
        }
    }
}

/// Radius schedule of the multi-scale mollification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MollifierSchedule {
    /// `δ_ij = h^{(1+α(i-2))/(αβ^j)}` for `2 ≤ i ≤ j`; `F_1` untouched.
    FlowControl,
    /// `δ_ij = C̄ h^{(1+α(j-2))/(αβ^j)}` for `2 ≤ i ≤ j`; `δ_1j = C_1`.
    JacobianControl,
}

/// Constants of the Jacobian-control schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MollifierConstants {
    pub c_bar: f64,
    pub c_one: f64,
    /// Upper bound on tensor nodes per level; panels per axis shrink with the smoothed dimension.
    pub node_budget: usize,
    /// Gauss–Legendre nodes per composite panel.
    pub nodes_per_panel: usize,
}

impl Default for MollifierConstants {
    fn default() -> Self {
        MollifierConstants {
            c_bar: 10.0,
            c_one: 100.0,
            node_budget: 4096,
            nodes_per_panel: 8,
        }
    }
}

/// Kernel truncation in units of the radius.
pub const KERNEL_TRUNCATION: f64 = 6.0;

/// Exponent of `h` in `δ_ij` (levels 1-based, `2 ≤ i ≤ j`).
pub fn schedule_exponent(schedule: MollifierSchedule, alpha: f64, i: usize, j: usize, beta_j: f64) -> f64 {
    let lvl = match schedule {
        MollifierSchedule::FlowControl => i as f64,
        MollifierSchedule::JacobianControl => j as f64,
    };
    (1.0 + alpha * (lvl - 2.0)) / (alpha * beta_j)
}

/// Drift convolved per level and per variable with truncated Gaussian kernels.
#[derive(Clone, Debug)]
pub struct MollifiedDrift {
    base: DriftSpec,
    schedule: MollifierSchedule,
    /// `radii[i][j]` for levels `i ≤ j` (0-based); zero means no smoothing.
    radii: Vec<Vec<f64>>,
    /// `rules[k - 1]` is the per-axis kernel rule used when `k` coordinates are smoothed.
    rules: Vec<KernelRule>,
}

#[derive(Clone, Debug)]
struct KernelRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl KernelRule {
    fn new(panels: usize, per_panel: usize) -> Self {
        let g = GaussLegendre::new(per_panel.max(1));
        let panels = panels.max(1);
        let width = 2.0 * KERNEL_TRUNCATION / panels as f64;
        let mut nodes = vec![];
        let mut weights = vec![];
        for p in 0..panels {
            let lo = -KERNEL_TRUNCATION + p as f64 * width;
            for (x, w) in g.mapped(lo, lo + width) {
                nodes.push(x);
                weights.push(w * (-0.5 * x * x).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        KernelRule { nodes, weights }
    }
}

pub fn mollify_drift(
    drift: &DriftSpec,
    alpha: f64,
    s_minus_t: f64,
    schedule: MollifierSchedule,
    constants: &MollifierConstants,
) -> Result<MollifiedDrift> {
    if !(s_minus_t > 0.0) {
        return Err(LabError::config("mollification needs s - t > 0"));
    }
    let n = drift.shape().levels();
    let mut radii = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = if i == 0 {
                match schedule {
                    MollifierSchedule::FlowControl => 0.0,
                    MollifierSchedule::JacobianControl => constants.c_one,
                }
            } else {
                let e = schedule_exponent(schedule, alpha, i + 1, j + 1, drift.holder()[j]);
                let pre = match schedule {
                    MollifierSchedule::FlowControl => 1.0,
                    MollifierSchedule::JacobianControl => constants.c_bar,
                };
                pre * s_minus_t.powf(e)
            };
            if i > 0 || schedule == MollifierSchedule::JacobianControl {
                if !(r > 1e-300) || !r.is_finite() {
                    return Err(LabError::RadiusUnderflow {
                        level: i + 1,
                        variable: j + 1,
                        radius: r,
                    });
                }
            }
            radii[i][j] = r;
        }
    }
    let per_panel = constants.nodes_per_panel.max(1);
    let rules = (1..=drift.shape().total())
        .map(|k| {
            let per_axis = (constants.node_budget as f64).powf(1.0 / k as f64).floor() as usize;
            KernelRule::new(per_axis / per_panel, per_panel)
        })
        .collect();
    Ok(MollifiedDrift {
        base: drift.clone(),
        schedule,
        radii,
        rules,
    })
}

impl MollifiedDrift {
    pub fn base(&self) -> &DriftSpec {
        &self.base
    }

    pub fn schedule(&self) -> MollifierSchedule {
        self.schedule
    }

    /// `δ_ij` for 1-based levels.
    pub fn radius(&self, i: usize, j: usize) -> f64 {
        self.radii[i - 1][j - 1]
    }

    pub fn max_radius(&self) -> f64 {
        self.radii.iter().flatten().cloned().fold(0.0, f64::max)
    }

    /// Coordinates smoothed for level `i` (0-based) and their radii.
    fn smoothed_coords(&self, level: usize) -> Vec<(usize, f64)> {
        let shape = self.base.shape();
        let mut out = vec![];
        for j in level..shape.levels() {
            let r = self.radii[level][j];
            if r > 0.0 {
                for k in 0..shape.dims()[j] {
                    out.push((shape.offset(j) + k, r));
                }
            }
        }
        out
    }

    /// Runs `visit(weight, shifted point, omega)` over the tensor kernel rule of one level.
    fn for_each_node<V: FnMut(f64, &[f64], &[f64])>(&self, x: &[f64], coords: &[(usize, f64)], mut visit: V) {
        let dims = coords.len();
        let rule = &self.rules[dims - 1];
        let m = rule.nodes.len();
        let mut idx = vec![0usize; dims];
        let mut y = x.to_vec();
        let mut omega = vec![0.0; dims];
        loop {
            let mut w = 1.0;
            for (a, &(c, r)) in coords.iter().enumerate() {
                omega[a] = rule.nodes[idx[a]];
                y[c] = x[c] - r * omega[a];
                w *= rule.weights[idx[a]];
            }
            visit(w, &y, &omega);
            let mut a = 0;
            loop {
                if a == dims {
                    return;
                }
                idx[a] += 1;
                if idx[a] < m {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    /// `F^δ(t, x)`.
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let shape = self.base.shape();
        let n = x.len();
        let mut buf = vec![0.0; n];
        self.base.eval(t, x, out);
        for level in 0..shape.levels() {
            let coords = self.smoothed_coords(level);
            if coords.is_empty() {
                continue;
            }
            let (lo, hi) = (shape.offset(level), shape.offset(level) + shape.dims()[level]);
            let mut acc = vec![0.0; hi - lo];
            self.for_each_node(x, &coords, |w, y, _| {
                self.base.eval(t, y, &mut buf);
                for (a, v) in acc.iter_mut().zip(&buf[lo..hi]) {
                    *a += w * v;
                }
            });
            out[lo..hi].copy_from_slice(&acc);
        }
    }

    /// `D_x F^δ(t, x)` using `∂_{x_c} F^δ = -(1/δ) ∫ F(x - δω) ω_c ρ(ω) dω` on smoothed
    /// coordinates; unsmoothed ones by central differences.
    pub fn jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let shape = self.base.shape();
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut buf = vec![0.0; n];
        for level in 0..shape.levels() {
            let coords = self.smoothed_coords(level);
            let (lo, hi) = (shape.offset(level), shape.offset(level) + shape.dims()[level]);
            if !coords.is_empty() {
                self.for_each_node(x, &coords, |w, y, omega| {
                    self.base.eval(t, y, &mut buf);
                    for (a, &(c, r)) in coords.iter().enumerate() {
                        for row in lo..hi {
                            jac[(row, c)] -= w * buf[row] * omega[a] / r;
                        }
                    }
                });
            }
            // Coordinates not smoothed for this level (none for the determinant schedule).
            let smoothed: Vec<usize> = coords.iter().map(|c| c.0).collect();
            for c in shape.offset(level)..n {
                if smoothed.contains(&c) {
                    continue;
                }
                let h = 1e-6 * (1.0 + x[c].abs());
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[c] += h;
                xm[c] -= h;
                let mut fp = vec![0.0; n];
                let mut fm = vec![0.0; n];
                self.eval(t, &xp, &mut fp);
                self.eval(t, &xm, &mut fm);
                for row in lo..hi {
                    jac[(row, c)] = (fp[row] - fm[row]) / (2.0 * h);
                }
            }
        }
        jac
    }

    /// `sup_grid |F_i - F^δ_i|` and `Σ_j δ_ij^{β^j}` per level.
    pub fn approximation_gap(&self, t: f64, points: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let shape = self.base.shape();
        let n = shape.total();
        let mut f = vec![0.0; n];
        let mut fd = vec![0.0; n];
        (0..shape.levels())
            .map(|level| {
                let (lo, hi) = (shape.offset(level), shape.offset(level) + shape.dims()[level]);
                let mut gap = 0.0f64;
                for x in points {
                    self.base.eval(t, x, &mut f);
                    self.eval(t, x, &mut fd);
                    for k in lo..hi {
                        gap = gap.max((f[k] - fd[k]).abs());
                    }
                }
                let scale: f64 = (level..shape.levels())
                    .map(|j| self.radii[level][j].powf(self.base.holder()[j]))
                    .sum();
                (gap, scale)
            })
            .collect()
    }
}

/// Backward mollified flow `θ^δ_{t,s}(y)`.
pub fn mollified_flow(
    mdrift: &MollifiedDrift,
    matrix: &ChainMatrix,
    t: f64,
    s: f64,
    y: &[f64],
    cfg: &FlowConfig,
) -> Result<FlowSolution> {
    let n = y.len();
    let field = |u: f64, x: &[f64], out: &mut [f64]| {
        mdrift.eval(u, x, out);
        let a = matrix.at(u);
        for i in 0..n {
            for j in 0..n {
                out[i] += a[(i, j)] * x[j];
            }
        }
    };
    solve_field(&field, s, y, t, cfg)
}

/// `det D_y θ^δ_{t,s}(y)` from the variational equation solved alongside the mollified flow.
pub fn flow_jacobian_det(
    mdrift: &MollifiedDrift,
    matrix: &ChainMatrix,
    t: f64,
    s: f64,
    y: &[f64],
    tol: f64,
) -> Result<f64> {
    if mdrift.schedule() != MollifierSchedule::JacobianControl {
        return Err(LabError::config("the Jacobian control uses the Jacobian-control schedule"));
    }
    if !(t <= s) {
        return Err(LabError::config("flow_jacobian_det needs t <= s"));
    }
    let n = y.len();
    let mut state = y.to_vec();
    state.extend(DMatrix::<f64>::identity(n, n).as_slice());
    let solver = Dopri5::with_tolerance(tol);
    let mut fbuf = vec![0.0; n];
    let out = solver.integrate(
        |u, z, dz| {
            let x = &z[..n];
            let a = matrix.at(u);
            mdrift.eval(u, x, &mut fbuf);
            for i in 0..n {
                let mut acc = fbuf[i];
                for j in 0..n {
                    acc += a[(i, j)] * x[j];
                }
                dz[i] = acc;
            }
            let jac = a + mdrift.jacobian(u, x);
            let jm = nalgebra::DMatrixView::from_slice(&z[n..], n, n);
            let d = &jac * jm;
            dz[n..].copy_from_slice(d.as_slice());
        },
        s,
        &state,
        t,
    )?;
    let j = DMatrix::from_column_slice(n, n, &out[n..]);
    Ok(j.determinant())
}

/// `|𝕋^{-1}_{s-t} v|`.
pub fn scaled_norm(shape: &ChainShape, alpha: f64, h: f64, v: &[f64]) -> f64 {
    let sc = scale_matrix(shape, alpha, h);
    v.iter().zip(sc.t_inv.iter()).map(|(a, b)| (a * b).powi(2)).sum::<f64>().sqrt()
}

/// `|𝕋^{-1}_{s-t}(θ_{t,s}(y) - θ^δ_{t,s}(y))|`.
#[allow(clippy::too_many_arguments)]
pub fn mollified_flow_gap(
    drift: &DriftSpec,
    mdrift: &MollifiedDrift,
    matrix: &ChainMatrix,
    alpha: f64,
    t: f64,
    s: f64,
    y: &[f64],
    cfg: &FlowConfig,
) -> Result<f64> {
    let exact = solve_flow(drift, matrix, s, y, t, cfg)?;
    let smooth = mollified_flow(mdrift, matrix, t, s, y, cfg)?;
    let diff: Vec<f64> = exact.end_value().iter().zip(smooth.end_value()).map(|(a, b)| a - b).collect();
    Ok(scaled_norm(matrix.shape(), alpha, s - t, &diff))
}

/// Both sides of the approximate Lipschitz comparison for one pair `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzSample {
    pub t: f64,
    pub s: f64,
    /// `|𝕋^{-1}(x - θ_{t,s}(y))|` with the step-doubling RK4 selection.
    pub lhs: f64,
    /// `|𝕋^{-1}(θ̌_{s,t}(x) - y)|` with the Dormand–Prince selection.
    pub rhs: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn approximate_lipschitz_diagnostic(
    drift: &DriftSpec,
    matrix: &ChainMatrix,
    alpha: f64,
    t: f64,
    s: f64,
    x: &[f64],
    y: &[f64],
    cfg: &FlowConfig,
) -> Result<LipschitzSample> {
    if !(t < s) {
        return Err(LabError::config("approximate Lipschitz diagnostic needs t < s"));
    }
    let rk = FlowConfig {
        integrator: FlowIntegrator::Rk4Doubling,
        ..cfg.clone()
    };
    let dp = FlowConfig {
        integrator: FlowIntegrator::Dopri,
        ..cfg.clone()
    };
    let back = solve_flow(drift, matrix, s, y, t, &rk)?;
    let fwd = solve_flow(drift, matrix, t, x, s, &dp)?;
    let d1: Vec<f64> = x.iter().zip(back.end_value()).map(|(a, b)| a - b).collect();
    let d2: Vec<f64> = fwd.end_value().iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(LipschitzSample {
        t,
        s,
        lhs: scaled_norm(matrix.shape(), alpha, s - t, &d1),
        rhs: scaled_norm(matrix.shape(), alpha, s - t, &d2),
    })
}

/// Smallest `(C, C')` with `rhs / C - C' ≤ lhs ≤ C (rhs + 1)` on all samples.
pub fn fit_lipschitz_constants(samples: &[LipschitzSample]) -> (f64, f64) {
    let c = samples
        .iter()
        .map(|p| p.lhs / (p.rhs + 1.0))
        .fold(1.0, f64::max);
    let c_prime = samples.iter().map(|p| p.rhs / c - p.lhs).fold(0.0, f64::max);
    (c, c_prime)
}

/// `|𝕋^{-1}(θ_{s,t}(x) - m̃^{s,y}_{s,t}(x))| / (1 + |𝕋^{-1}(θ_{s,t}(x) - y)|)`.
#[allow(clippy::too_many_arguments)]
pub fn control_error_ratio(
    drift: &DriftSpec,
    matrix: &ChainMatrix,
    alpha: f64,
    t: f64,
    s: f64,
    x: &[f64],
    y: &[f64],
    cfg: &FlowConfig,
) -> Result<f64> {
    let fwd = solve_flow(drift, matrix, t, x, s, cfg)?;
    let theta = fwd.end_value();
    let m = frozen_shift(drift, matrix, s, y, t, s, x, cfg)?;
    let num: Vec<f64> = theta.iter().zip(&m).map(|(a, b)| a - b).collect();
    let den: Vec<f64> = theta.iter().zip(y).map(|(a, b)| a - b).collect();
    let h = s - t;
    Ok(scaled_norm(matrix.shape(), alpha, h, &num) / (1.0 + scaled_norm(matrix.shape(), alpha, h, &den)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sgn(0.0), 0.0);
        assert_eq!(sgn(-0.0), 0.0);
        assert_eq!(sgn(-2.0), -1.0);
    }

    #[test]
    fn schedule_exponent_example() {
        let e = schedule_exponent(MollifierSchedule::FlowControl, 1.5, 2, 2, 0.5);
        assert!((e - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_flow_for_zero_field() {
        let sh = ChainShape::scalar(2).unwrap();
        let a = ChainMatrix::constant(sh.clone(), DMatrix::zeros(2, 2)).unwrap();
        let sol = solve_flow(&DriftSpec::zero(sh), &a, 0.5, &[1.0, -2.0], 0.0, &FlowConfig::default()).unwrap();
        assert_eq!(sol.end_value(), &[1.0, -2.0]);
        assert_eq!(sol.values[0], vec![1.0, -2.0]);
    }

    #[test]
    fn hermite_dense_output_on_exponential() {
        let cfg = FlowConfig {
            tol: 1e-12,
            ..Default::default()
        };
        let sol = solve_field(&|_, x: &[f64], o: &mut [f64]| o[0] = x[0], 0.0, &[1.0], 1.0, &cfg).unwrap();
        for u in [0.1, 0.37, 0.81] {
            assert!((sol.at(u)[0] - f64::exp(u)).abs() < 1e-9);
        }
    }

    #[test]
    fn peano_from_origin_stays_at_origin() {
        let sh = ChainShape::scalar(2).unwrap();
        let drift = DriftSpec::peano(sh.clone(), 2, 2, 0.3).unwrap();
        let a = ChainMatrix::constant(sh, DMatrix::zeros(2, 2)).unwrap();
        let sol = solve_flow(&drift, &a, 0.0, &[0.0, 0.0], 1.0, &FlowConfig::default()).unwrap();
        assert_eq!(sol.end_value(), &[0.0, 0.0]);
    }

    #[test]
    fn dependency_probe_flags_forbidden_variable() {
        let sh = ChainShape::scalar(2).unwrap();
        let bad = DriftSpec::new(
            sh.clone(),
            |_, x, o| {
                o[0] = 0.0;
                o[1] = x[0].sin();
            },
            vec![1.0, 1.0],
            1.0,
            "bad",
        )
        .unwrap();
        assert!(bad.check_dependency(1.0, 5, 1).is_err());
        let good = DriftSpec::peano(sh, 2, 2, 0.5).unwrap();
        assert!(good.check_dependency(1.0, 5, 1).is_ok());
    }
}
