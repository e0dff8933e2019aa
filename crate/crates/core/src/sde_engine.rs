//! Euler simulation of the chain SDE and of its frozen proxy.
//!
//! Every path draws from its own ChaCha stream selected by path index, so an
//! ensemble is a pure function of the plan and its master seed. Paths run in
//! parallel on the ambient rayon pool and are merged by index.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{LabError, Result};
use crate::flows::{CoveringFlow, FlowConfig};
use crate::levy_noise::{QModulatedSampler, SmallJumpPolicy, StableSampler};
use crate::model::ChainModel;
use crate::report::fmt_f64;
use crate::rng::{SeedTree, Stream};

/// Time stepping of the Euler scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepPolicy {
    /// Uniform steps; noise increments are sampled per step.
    Fixed { dt: f64 },
    /// Jumps above the cutoff become grid points; drift steps are at most `max_dt`.
    JumpAdapted { max_dt: f64 },
}

impl StepPolicy {
    pub fn base_step(&self) -> f64 {
        match self {
            StepPolicy::Fixed { dt } => *dt,
            StepPolicy::JumpAdapted { max_dt } => *max_dt,
        }
    }
}

/// Law of the starting point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Point { x: Vec<f64> },
    /// Independent normal coordinates.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Independent uniform coordinates on `[low, high]`.
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

impl InitialCondition {
    pub fn dimension(&self) -> usize {
        match self {
            InitialCondition::Point { x } => x.len(),
            InitialCondition::Gaussian { mean, .. } => mean.len(),
            InitialCondition::Uniform { low, .. } => low.len(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let ok = match self {
            InitialCondition::Point { x } => x.len() == n && x.iter().all(|v| v.is_finite()),
            InitialCondition::Gaussian { mean, std } => {
                mean.len() == n && std.len() == n && std.iter().all(|s| *s >= 0.0)
            }
            InitialCondition::Uniform { low, high } => {
                low.len() == n && high.len() == n && low.iter().zip(high).all(|(a, b)| a <= b)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::config(format!("initial condition does not describe a law on R^{n}")))
        }
    }

    /// Draws a start; `mirror` reflects the draw through the centre.
    fn sample(&self, rng: &mut Stream, mirror: bool, out: &mut [f64]) {
        match self {
            InitialCondition::Point { x } => out.copy_from_slice(x),
            InitialCondition::Gaussian { mean, std } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = if mirror { m - s * g } else { m + s * g };
                }
            }
            InitialCondition::Uniform { low, high } => {
                for ((o, a), b) in out.iter_mut().zip(low).zip(high) {
                    let u: f64 = rng.random();
                    let c = 0.5 * (a + b);
                    let v = a + (b - a) * u;
                    *o = if mirror { 2.0 * c - v } else { v };
                }
            }
        }
    }
}

/// Times at which an ensemble stores states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RecordGrid {
    /// Every `stride`-th point of the base grid, plus the horizon.
    Every { stride: usize },
    /// Explicit times in `(t0, T]`; they become mandatory grid points.
    Times { times: Vec<f64> },
}

impl Default for RecordGrid {
    fn default() -> Self {
        RecordGrid::Every { stride: 1 }
    }
}

/// Everything needed to simulate an ensemble.
#[derive(Clone, Debug)]
pub struct SimulationPlan {
    pub model: ChainModel,
    pub t0: f64,
    pub initial: InitialCondition,
    pub horizon: f64,
    pub step: StepPolicy,
    pub small_jump_cutoff: f64,
    pub small_jump_policy: SmallJumpPolicy,
    pub paths: usize,
    pub seed: u64,
    pub record: RecordGrid,
    /// Odd paths reuse the stream of the preceding even path with negated noise.
    pub antithetic: bool,
    /// Euclidean bound beyond which a path counts as divergent.
    pub state_bound: f64,
}

pub const DEFAULT_STATE_BOUND: f64 = 1e12;

impl SimulationPlan {
    /// Plan with a fixed step, a point start at `t0 = 0` and full recording.
    pub fn new(model: ChainModel, x0: Vec<f64>, horizon: f64, dt: f64, paths: usize, seed: u64) -> Self {
        SimulationPlan {
            model,
            t0: 0.0,
            initial: InitialCondition::Point { x: x0 },
            horizon,
            step: StepPolicy::Fixed { dt },
            small_jump_cutoff: 1e-2,
            small_jump_policy: SmallJumpPolicy::Drop,
            paths,
            seed,
            record: RecordGrid::default(),
            antithetic: false,
            state_bound: DEFAULT_STATE_BOUND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > self.t0) || !self.horizon.is_finite() || !self.t0.is_finite() {
            return Err(LabError::config(format!(
                "horizon {} must exceed the start time {}",
                self.horizon, self.t0
            )));
        }
        if self.paths == 0 {
            return Err(LabError::config("path count must be at least 1"));
        }
        if !(self.small_jump_cutoff > 0.0) {
            return Err(LabError::config("small_jump_cutoff must be positive"));
        }
        let h = self.step.base_step();
        if !(h > 0.0) || !h.is_finite() {
            return Err(LabError::config("step size must be positive"));
        }
        if (self.horizon - self.t0) / h > 1e9 {
            return Err(LabError::config("step size too small for the horizon"));
        }
        if !(self.state_bound > 0.0) {
            return Err(LabError::config("state_bound must be positive"));
        }
        self.initial.validate(self.model.shape().total())?;
        match &self.record {
            RecordGrid::Every { stride } if *stride == 0 => {
                return Err(LabError::config("record stride must be at least 1"))
            }
            RecordGrid::Times { times } => {
                if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(LabError::config("record times must be strictly increasing"));
                }
                if times[0] <= self.t0 || *times.last().unwrap() > self.horizon {
                    return Err(LabError::config("record times must lie in (t0, T]"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Which SDE the engine integrates.
#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    /// `dX = (A X + F(t, X)) dt + B σ(t, X_-) dZ`.
    Chain,
    /// Coefficients frozen along `u ↦ θ_{u,τ}(ξ)`.
    FrozenProxy { tau: f64, xi: Vec<f64> },
}

/// Receives the states of one path as they are produced.
pub trait PathObserver {
    type Output: Send;
    /// Called at the start and after every step; returning `false` stops the path.
    fn observe(&mut self, t: f64, x: &[f64]) -> bool;
    fn finish(self) -> Self::Output;
}

#[derive(Clone, Debug)]
enum NoiseDriver {
    Exact(StableSampler),
    Thinned(QModulatedSampler),
}

/// Shared, read-only state of a simulation.
struct Engine<'a> {
    plan: &'a SimulationPlan,
    n: usize,
    d: usize,
    noise: NoiseDriver,
    adapted: bool,
    /// Base grid including record times; `recorded[k]` marks stored points.
    grid: Vec<f64>,
    recorded: Vec<bool>,
    a_const: Option<DMatrix<f64>>,
    sigma_const: Option<DMatrix<f64>>,
    /// Frozen drift and diffusion at the base grid points.
    frozen: Option<FrozenCoefficients>,
    tree: SeedTree,
}

struct FrozenCoefficients {
    flow: CoveringFlow,
    drift: Vec<Vec<f64>>,
    sigma: Vec<DMatrix<f64>>,
}

fn base_grid(plan: &SimulationPlan) -> (Vec<f64>, Vec<bool>) {
    let h = plan.step.base_step();
    let span = plan.horizon - plan.t0;
    let steps = (span / h - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..steps).map(|k| plan.t0 + k as f64 * h).collect();
    grid.push(plan.horizon);
    let mut recorded = match &plan.record {
        RecordGrid::Every { stride } => (0..grid.len()).map(|k| k % stride == 0).collect::<Vec<_>>(),
        RecordGrid::Times { .. } => {
            let mut r = vec![false; grid.len()];
            r[0] = true;
            r
        }
    };
    *recorded.last_mut().unwrap() = true;
    if let RecordGrid::Times { times } = &plan.record {
        for &t in times {
            match grid.binary_search_by(|g| g.total_cmp(&t)) {
                Ok(k) => recorded[k] = true,
                Err(k) => {
                    grid.insert(k, t);
                    recorded.insert(k, true);
                }
            }
        }
        // Only requested times (and the start) are stored.
        let last = grid.len() - 1;
        recorded[last] = times.last().is_some_and(|&t| t == plan.horizon);
    }
    (grid, recorded)
}

impl<'a> Engine<'a> {
    fn new(plan: &'a SimulationPlan, dynamics: &Dynamics) -> Result<Self> {
        plan.validate()?;
        let model = &plan.model;
        let n = model.shape().total();
        let d = model.shape().noise_dim();
        let adapted = matches!(plan.step, StepPolicy::JumpAdapted { .. });
        let noise = if model.noise.is_stable() && !adapted {
            NoiseDriver::Exact(StableSampler::from_spec(&model.noise)?)
        } else {
            NoiseDriver::Thinned(QModulatedSampler::new(
                &model.noise,
                plan.small_jump_cutoff,
                plan.small_jump_policy,
            )?)
        };
        let (grid, recorded) = base_grid(plan);
        let frozen = match dynamics {
            Dynamics::Chain => None,
            Dynamics::FrozenProxy { tau, xi } => {
                if xi.len() != n {
                    return Err(LabError::config("freezing point has the wrong dimension"));
                }
                let flow = CoveringFlow::new(
                    &model.drift,
                    &model.matrix,
                    *tau,
                    xi,
                    plan.t0.min(*tau),
                    plan.horizon.max(*tau),
                    &FlowConfig::default(),
                )?;
                let mut drift = Vec::with_capacity(grid.len());
                let mut sigma = Vec::with_capacity(grid.len());
                for &u in &grid {
                    let theta = flow.at(u);
                    let mut f = vec![0.0; n];
                    model.drift.eval(u, &theta, &mut f);
                    drift.push(f);
                    sigma.push(model.diffusion.eval(u, &theta));
                }
                Some(FrozenCoefficients { flow, drift, sigma })
            }
        };
        Ok(Engine {
            plan,
            n,
            d,
            noise,
            adapted,
            grid,
            recorded,
            a_const: model.matrix.as_constant().cloned(),
            sigma_const: model.diffusion.as_constant().cloned(),
            frozen,
            tree: SeedTree::new(plan.seed).named("sde_engine/paths"),
        })
    }

    /// Stream index and noise sign of a path.
    fn stream_of(&self, path: usize) -> (u64, f64) {
        if self.plan.antithetic {
            ((path / 2) as u64, if path % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (path as u64, 1.0)
        }
    }

    /// `A_t x + F(t, x)` (or the frozen drift) into `out`.
    fn drift(&self, t: f64, base: Option<usize>, x: &[f64], out: &mut [f64]) {
        let model = &self.plan.model;
        match (&self.frozen, base) {
            (Some(fc), Some(k)) => out.copy_from_slice(&fc.drift[k]),
            (Some(fc), None) => {
                let theta = fc.flow.at(t);
                model.drift.eval(t, &theta, out);
            }
            (None, _) => model.drift.eval(t, x, out),
        }
        let owned;
        let a = match &self.a_const {
            Some(a) => a,
            None => {
                owned = model.matrix.at(t);
                &owned
            }
        };
        for i in 0..self.n {
            let mut acc = 0.0;
            for j in 0..self.n {
                acc += a[(i, j)] * x[j];
            }
            out[i] += acc;
        }
    }

    /// `σ` at the pre-jump state (or frozen), written into `out`.
    fn sigma<'s>(&'s self, t: f64, base: Option<usize>, x: &[f64], out: &'s mut DMatrix<f64>) -> &'s DMatrix<f64> {
        let model = &self.plan.model;
        match (&self.frozen, base) {
            (Some(fc), Some(k)) => &fc.sigma[k],
            (Some(fc), None) => {
                let theta = fc.flow.at(t);
                model.diffusion.eval_into(t, &theta, out);
                out
            }
            (None, _) => match &self.sigma_const {
                Some(s) => s,
                None => {
                    model.diffusion.eval_into(t, x, out);
                    out
                }
            },
        }
    }

    fn run<O: PathObserver>(&self, path: usize, mut obs: O) -> Result<(O::Output, usize)> {
        let (stream, sign) = self.stream_of(path);
        let mut rng = self.tree.stream(stream);
        let (n, d) = (self.n, self.d);
        let mut x = vec![0.0; n];
        self.plan.initial.sample(&mut rng, sign < 0.0, &mut x);
        if !obs.observe(self.grid[0], &x) {
            return Ok((obs.finish(), 0));
        }
        let jumps = match (&self.noise, self.adapted) {
            (NoiseDriver::Thinned(s), true) => s.large_jumps(self.plan.horizon - self.plan.t0, &mut rng)?,
            _ => Vec::new(),
        };
        let mut g = vec![0.0; n];
        let mut dz = vec![0.0; d];
        let mut sig_buf = DMatrix::zeros(d, d);
        let mut next_jump = 0;
        let mut steps = 0;
        let mut t = self.grid[0];
        let mut base = Some(0usize);
        let mut k = 0usize;
        while k + 1 < self.grid.len() {
            let jump_time = jumps.get(next_jump).map(|j| self.plan.t0 + j.time);
            let (t_next, next_base, is_jump) = match jump_time {
                Some(tj) if tj < self.grid[k + 1] => {
                    let tj = tj.max(t);
                    (tj, if tj == t { base } else { None }, true)
                }
                Some(tj) if tj == self.grid[k + 1] => (tj, Some(k + 1), true),
                _ => (self.grid[k + 1], Some(k + 1), false),
            };
            let h = t_next - t;
            // Drift and noise at the left endpoint.
            self.drift(t, base, &x, &mut g);
            match &self.noise {
                NoiseDriver::Exact(s) => s.increment_into(h, &mut rng, &mut dz),
                NoiseDriver::Thinned(s) => {
                    if self.adapted {
                        dz.iter_mut().for_each(|v| *v = 0.0);
                        s.add_small_jumps(h, &mut rng, &mut dz);
                    } else {
                        s.increment_into(h, &mut rng, &mut dz)?;
                    }
                }
            }
            let sigma = self.sigma(t, base, &x, &mut sig_buf);
            for i in 0..n {
                x[i] += g[i] * h;
            }
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += sigma[(i, j)] * dz[j];
                }
                x[i] += sign * acc;
            }
            if is_jump {
                // σ at X_{t-}: the state just before the jump.
                let jump = &jumps[next_jump];
                let sigma = self.sigma(t_next, next_base, &x, &mut sig_buf);
                let mut kick = vec![0.0; d];
                for (i, kv) in kick.iter_mut().enumerate() {
                    for j in 0..d {
                        *kv += sigma[(i, j)] * jump.size[j];
                    }
                }
                for i in 0..d {
                    x[i] += sign * kick[i];
                }
                next_jump += 1;
            }
            steps += 1;
            t = t_next;
            base = next_base;
            if let Some(b) = next_base {
                k = b;
            }
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            if !(norm2.sqrt() <= self.plan.state_bound) {
                return Err(LabError::Divergence {
                    module: "sde_engine",
                    path,
                    t,
                });
            }
            if !obs.observe(t, &x) {
                break;
            }
        }
        Ok((obs.finish(), steps))
    }
}

/// Runs every path of `plan` through an observer built by `make(path)`.
///
/// Results are ordered by path index. On failure the error of the lowest
/// failing path is returned, independent of scheduling.
pub fn run_paths<O, F>(plan: &SimulationPlan, dynamics: &Dynamics, make: F) -> Result<Vec<O::Output>>
where
    O: PathObserver,
    F: Fn(usize) -> O + Sync,
{
    let engine = Engine::new(plan, dynamics)?;
    let results: Vec<Result<(O::Output, usize)>> = (0..plan.paths)
        .into_par_iter()
        .map(|p| engine.run(p, make(p)))
        .collect();
    results.into_iter().map(|r| r.map(|(o, _)| o)).collect()
}

/// Per-path provenance of an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSeed {
    pub path: usize,
    pub stream: u64,
    pub negated: bool,
}

/// How an ensemble was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorMeta {
    pub scheme: String,
    pub step: StepPolicy,
    pub small_jump_cutoff: f64,
    pub small_jump_policy: SmallJumpPolicy,
    pub master_seed: u64,
    pub key_fingerprint: u64,
    /// Total Euler steps over all paths.
    pub total_steps: u64,
}

/// Recorded states of many paths on a common time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub dim: usize,
    /// `values[(p * times.len() + k) * dim + c]`.
    pub values: Vec<f64>,
    pub seeds: Vec<PathSeed>,
    pub meta: IntegratorMeta,
}

impl PathEnsemble {
    pub fn paths(&self) -> usize {
        self.seeds.len()
    }

    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let off = (path * self.times.len() + k) * self.dim;
        &self.values[off..off + self.dim]
    }

    /// Coordinate `c` of path `path` over the grid.
    pub fn coordinate_path(&self, path: usize, c: usize) -> Vec<f64> {
        (0..self.times.len()).map(|k| self.state(path, k)[c]).collect()
    }

    /// Coordinate `c` of every path at grid index `k`.
    pub fn cross_section(&self, k: usize, c: usize) -> Vec<f64> {
        (0..self.paths()).map(|p| self.state(p, k)[c]).collect()
    }

    pub fn terminal(&self, c: usize) -> Vec<f64> {
        self.cross_section(self.times.len() - 1, c)
    }

    /// Long-format CSV `path_id,t,x_1..x_N` with shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "path_id,t")?;
        for c in 1..=self.dim {
            write!(w, ",x_{c}")?;
        }
        writeln!(w)?;
        for p in 0..self.paths() {
            for (k, t) in self.times.iter().enumerate() {
                write!(w, "{p},{}", fmt_f64(*t))?;
                for v in self.state(p, k) {
                    write!(w, ",{}", fmt_f64(*v))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Binary dump, see [`BINARY_MAGIC`] for the layout.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        for v in [
            self.paths() as u64,
            self.times.len() as u64,
            self.dim as u64,
            self.meta.master_seed,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for c in 0..self.dim {
            for p in 0..self.paths() {
                for k in 0..self.times.len() {
                    w.write_all(&self.state(p, k)[c].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}

/// Binary layout, all little-endian:
/// `"LVYENS01"`, then `u64` path count `P`, time count `K`, dimension `N`, master seed,
/// then `K` times as `f64`, then `N` column blocks; block `c` holds `P × K` values of
/// coordinate `c`, path-major.
pub const BINARY_MAGIC: &[u8; 8] = b"LVYENS01";

/// Contents of a binary dump.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryEnsemble {
    pub paths: usize,
    pub dim: usize,
    pub master_seed: u64,
    pub times: Vec<f64>,
    /// `columns[c][p * K + k]`.
    pub columns: Vec<Vec<f64>>,
}

pub fn read_binary<R: Read>(mut r: R) -> Result<BinaryEnsemble> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(LabError::Io("not an ensemble dump".into()));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let paths = next_u64(&mut r)? as usize;
    let k = next_u64(&mut r)? as usize;
    let dim = next_u64(&mut r)? as usize;
    let master_seed = next_u64(&mut r)?;
    let read_f64s = |r: &mut R, len: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 8 * len];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let times = read_f64s(&mut r, k)?;
    let columns = (0..dim)
        .map(|_| read_f64s(&mut r, paths * k))
        .collect::<Result<Vec<_>>>()?;
    Ok(BinaryEnsemble {
        paths,
        dim,
        master_seed,
        times,
        columns,
    })
}

struct Recorder<'a> {
    grid: &'a [f64],
    recorded: &'a [bool],
    cursor: usize,
    values: Vec<f64>,
}

impl PathObserver for Recorder<'_> {
    type Output = Vec<f64>;

    fn observe(&mut self, t: f64, x: &[f64]) -> bool {
        while self.cursor < self.grid.len() && self.grid[self.cursor] < t {
            self.cursor += 1;
        }
        if self.cursor < self.grid.len() && self.grid[self.cursor] == t {
            if self.recorded[self.cursor] {
                self.values.extend_from_slice(x);
            }
            self.cursor += 1;
        }
        true
    }

    fn finish(self) -> Vec<f64> {
        self.values
    }
}

fn simulate(plan: &SimulationPlan, dynamics: &Dynamics, scheme: &str) -> Result<PathEnsemble> {
    let engine = Engine::new(plan, dynamics)?;
    let times: Vec<f64> = engine
        .grid
        .iter()
        .zip(&engine.recorded)
        .filter(|(_, r)| **r)
        .map(|(t, _)| *t)
        .collect();
    let results: Vec<Result<(Vec<f64>, usize)>> = (0..plan.paths)
        .into_par_iter()
        .map(|p| {
            engine.run(
                p,
                Recorder {
                    grid: &engine.grid,
                    recorded: &engine.recorded,
                    cursor: 0,
                    values: Vec::with_capacity(times.len() * engine.n),
                },
            )
        })
        .collect();
    let mut values = Vec::with_capacity(plan.paths * times.len() * engine.n);
    let mut total_steps = 0u64;
    let mut seeds = Vec::with_capacity(plan.paths);
    for (p, r) in results.into_iter().enumerate() {
        let (v, steps) = r?;
        values.extend_from_slice(&v);
        total_steps += steps as u64;
        let (stream, sign) = engine.stream_of(p);
        seeds.push(PathSeed {
            path: p,
            stream,
            negated: sign < 0.0,
        });
    }
    Ok(PathEnsemble {
        dim: engine.n,
        times,
        values,
        seeds,
        meta: IntegratorMeta {
            scheme: scheme.into(),
            step: plan.step.clone(),
            small_jump_cutoff: plan.small_jump_cutoff,
            small_jump_policy: plan.small_jump_policy,
            master_seed: plan.seed,
            key_fingerprint: engine.tree.fingerprint(),
            total_steps,
        },
    })
}

/// Euler scheme for the full chain.
pub fn simulate_chain(plan: &SimulationPlan) -> Result<PathEnsemble> {
    simulate(plan, &Dynamics::Chain, "euler")
}

/// Euler scheme for the proxy frozen along `θ_{·,τ}(ξ)`.
pub fn simulate_frozen_proxy(plan: &SimulationPlan, tau: f64, xi: &[f64]) -> Result<PathEnsemble> {
    simulate(
        plan,
        &Dynamics::FrozenProxy {
            tau,
            xi: xi.to_vec(),
        },
        "euler-frozen",
    )
}

/// `I^k` of a path on its grid by repeated left-endpoint sums; `I^0` is the path.
pub fn iterated_integral(times: &[f64], values: &[f64], k: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    for _ in 0..k {
        let mut next = Vec::with_capacity(cur.len());
        let mut acc = 0.0;
        next.push(0.0);
        for l in 1..cur.len() {
            acc += cur[l - 1] * (times[l] - times[l - 1]);
            next.push(acc);
        }
        cur = next;
    }
    cur
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| LabError::numerical("sde_engine", e.to_string()))?;
    Ok(pool.install(f))
}
