//! Serializable descriptions of noises, chains and simulation plans.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flows::DriftSpec;
use crate::levy_noise::{LevyNoiseSpec, QFamily, SmallJumpPolicy, SpectralMeasure, StabilityIndex};
use crate::model::{ChainModel, Diffusion};
use crate::scale_geometry::{ChainMatrix, ChainShape};
use crate::sde_engine::{InitialCondition, RecordGrid, SimulationPlan, StepPolicy, DEFAULT_STATE_BOUND};

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn unit() -> f64 {
    1.0
}

/// Driving noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub alpha: f64,
    #[serde(default = "one")]
    pub dimension: usize,
    #[serde(default = "isotropic")]
    pub spectral: SpectralMeasure,
    #[serde(default = "stable_q")]
    pub q: QFamily,
    /// Declared `sup Q`; the family's own bound when absent.
    #[serde(default)]
    pub q_sup: Option<f64>,
}

fn isotropic() -> SpectralMeasure {
    SpectralMeasure::Isotropic
}

fn stable_q() -> QFamily {
    QFamily::Stable
}

impl NoiseConfig {
    pub fn stable(alpha: f64) -> Self {
        NoiseConfig {
            alpha,
            dimension: 1,
            spectral: SpectralMeasure::Isotropic,
            q: QFamily::Stable,
            q_sup: None,
        }
    }

    pub fn build(&self) -> Result<LevyNoiseSpec> {
        let alpha = StabilityIndex::new(self.alpha)?;
        let q_sup = self
            .q_sup
            .unwrap_or_else(|| self.q.natural_sup(self.alpha, self.dimension));
        LevyNoiseSpec::new(alpha, self.dimension, self.spectral.clone(), self.q.clone(), q_sup)
    }
}

/// Linear part `A_t` of the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixConfig {
    /// Identity blocks below the diagonal.
    #[default]
    Nilpotent,
    /// Full constant matrix, row by row.
    Constant { rows: Vec<Vec<f64>> },
}

/// Nonlinear drift `F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftConfig {
    #[default]
    Zero,
    /// `F = e_i sgn(x_j)|x_j|^β` (levels 1-based).
    Peano { i: usize, j: usize, beta: f64 },
    /// `F_c(x) = amplitude · sin(sum of the coordinates of levels ≥ level(c))`.
    Sine { amplitude: f64 },
}

/// Chain structure, drift and diffusion coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "two")]
    pub levels: usize,
    /// Block sizes; every level has the noise dimension when absent.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    #[serde(default)]
    pub matrix: MatrixConfig,
    #[serde(default)]
    pub drift: DriftConfig,
    /// `σ = sigma · I`.
    #[serde(default = "unit")]
    pub sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 2,
            dims: None,
            matrix: MatrixConfig::Nilpotent,
            drift: DriftConfig::Zero,
            sigma: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn with_drift(levels: usize, drift: DriftConfig) -> Self {
        ModelConfig {
            levels,
            drift,
            ..Default::default()
        }
    }

    pub fn shape(&self, noise_dim: usize) -> Result<ChainShape> {
        let dims = match &self.dims {
            Some(d) => {
                if d.len() != self.levels {
                    return Err(LabError::config(format!(
                        "model.dims has {} entries but model.levels = {}",
                        d.len(),
                        self.levels
                    )));
                }
                d.clone()
            }
            None => vec![noise_dim; self.levels],
        };
        ChainShape::new(dims)
    }

    pub fn drift(&self, shape: &ChainShape) -> Result<DriftSpec> {
        match &self.drift {
            DriftConfig::Zero => Ok(DriftSpec::zero(shape.clone())),
            DriftConfig::Peano { i, j, beta } => DriftSpec::peano(shape.clone(), *i, *j, *beta),
            DriftConfig::Sine { amplitude } => {
                let amp = *amplitude;
                let levels: Vec<usize> = (0..shape.total()).map(|k| shape.level_of(k)).collect();
                DriftSpec::new(
                    shape.clone(),
                    move |_, x, out| {
                        for (c, o) in out.iter_mut().enumerate() {
                            let arg: f64 = x
                                .iter()
                                .zip(&levels)
                                .filter(|(_, l)| **l >= levels[c])
                                .map(|(v, _)| v)
                                .sum();
                            *o = amp * arg.sin();
                        }
                    },
                    vec![1.0; shape.levels()],
                    amp.abs(),
                    format!("sine(amplitude={amp})"),
                )
            }
        }
    }

    pub fn matrix(&self, shape: &ChainShape) -> Result<ChainMatrix> {
        match &self.matrix {
            MatrixConfig::Nilpotent => Ok(ChainMatrix::nilpotent(shape.clone())),
            MatrixConfig::Constant { rows } => {
                let n = shape.total();
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(LabError::config(format!("model.matrix.rows must be {n} x {n}")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                ChainMatrix::constant(shape.clone(), DMatrix::from_row_slice(n, n, &flat))
            }
        }
    }

    pub fn build(&self, noise: &NoiseConfig) -> Result<ChainModel> {
        let spec = noise.build()?;
        let shape = self.shape(noise.dimension)?;
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(LabError::config("model.sigma must be positive"));
        }
        let sigma = DMatrix::identity(noise.dimension, noise.dimension) * self.sigma;
        ChainModel::new(
            self.matrix(&shape)?,
            self.drift(&shape)?,
            Diffusion::constant(sigma)?,
            spec,
        )
    }

    /// Whether the proxy law is the exact law: constant `A`, no drift, constant `σ`.
    pub fn is_linear(&self) -> bool {
        self.drift == DriftConfig::Zero
    }
}

/// Euler simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Starting point; the origin when absent.
    pub start: Option<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    /// Overrides the fixed step `dt`.
    pub step: Option<StepPolicy>,
    pub small_jump_cutoff: f64,
    pub small_jump_policy: SmallJumpPolicy,
    pub record_stride: usize,
    pub antithetic: bool,
    pub state_bound: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            start: None,
            horizon: 1.0,
            dt: 1e-3,
            paths: 1000,
            step: None,
            small_jump_cutoff: 1e-2,
            small_jump_policy: SmallJumpPolicy::Drop,
            record_stride: 1,
            antithetic: false,
            state_bound: DEFAULT_STATE_BOUND,
        }
    }
}

impl SimulationConfig {
    pub fn plan(&self, model: ChainModel, seed: u64) -> Result<SimulationPlan> {
        let n = model.shape().total();
        let start = self.start.clone().unwrap_or_else(|| vec![0.0; n]);
        if start.len() != n {
            return Err(LabError::config(format!(
                "simulation.start has {} entries, the state has {n}",
                start.len()
            )));
        }
        let plan = SimulationPlan {
            model,
            t0: 0.0,
            initial: InitialCondition::Point { x: start },
            horizon: self.horizon,
            step: self.step.clone().unwrap_or(StepPolicy::Fixed { dt: self.dt }),
            small_jump_cutoff: self.small_jump_cutoff,
            small_jump_policy: self.small_jump_policy,
            paths: self.paths,
            seed,
            record: RecordGrid::Every {
                stride: self.record_stride,
            },
            antithetic: self.antithetic,
            state_bound: self.state_bound,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// Noise, chain and simulation settings shared by the path experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSetup {
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub simulation: SimulationConfig,
}

impl ChainSetup {
    pub fn model(&self) -> Result<ChainModel> {
        self.model.build(&self.noise)
    }

    pub fn plan(&self, seed: u64) -> Result<SimulationPlan> {
        self.simulation.plan(self.model()?, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_drift_respects_the_chain_dependency() {
        let m = ModelConfig::with_drift(3, DriftConfig::Sine { amplitude: 0.5 });
        let model = m.build(&NoiseConfig::stable(1.5)).unwrap();
        model.validate(1.0, 3).unwrap();
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let m: ModelConfig = toml::from_str("levels = 3\ndrift = { kind = \"peano\", i = 2, j = 3, beta = 0.5 }\n").unwrap();
        assert_eq!(m.sigma, 1.0);
        assert_eq!(m.drift, DriftConfig::Peano { i: 2, j: 3, beta: 0.5 });
        let err = toml::from_str::<NoiseConfig>("dimension = 1\n").unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        assert!(toml::from_str::<ModelConfig>("level = 3\n").is_err());
    }
}
