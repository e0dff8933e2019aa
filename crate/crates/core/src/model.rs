//! The chain model: linear part, nonlinear drift, diffusion coefficient and driving noise.

use nalgebra::DMatrix;
use rand::Rng;
use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::flows::DriftSpec;
use crate::levy_noise::LevyNoiseSpec;
use crate::rng::SeedTree;
use crate::scale_geometry::{ChainMatrix, ChainShape};

type SigmaFn = dyn Fn(f64, &[f64], &mut DMatrix<f64>) + Send + Sync;

/// Diffusion coefficient `σ(t, x) ∈ R^{d×d}` with ellipticity constant `η`.
#[derive(Clone)]
pub struct Diffusion {
    dim: usize,
    f: Arc<SigmaFn>,
    constant: Option<DMatrix<f64>>,
    ellipticity: f64,
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diffusion")
            .field("dim", &self.dim)
            .field("constant", &self.constant)
            .field("ellipticity", &self.ellipticity)
            .finish()
    }
}

impl Diffusion {
    pub fn identity(dim: usize) -> Self {
        Self::constant(DMatrix::identity(dim, dim)).expect("identity is elliptic")
    }

    /// Constant `σ`; `η` is derived from the extreme eigenvalues of the symmetric part.
    pub fn constant(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(LabError::config("diffusion matrix must be square"));
        }
        let dim = sigma.nrows();
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) {
            return Err(LabError::config("diffusion matrix is not uniformly elliptic"));
        }
        let ellipticity = hi.max(1.0 / lo);
        let stored = sigma.clone();
        Ok(Diffusion {
            dim,
            f: Arc::new(move |_, _, out: &mut DMatrix<f64>| out.copy_from(&stored)),
            constant: Some(sigma),
            ellipticity,
        })
    }

    /// State-dependent `σ(t, x)`; `f` writes the `d×d` matrix into `out`.
    pub fn new<F>(dim: usize, ellipticity: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut DMatrix<f64>) + Send + Sync + 'static,
    {
        if !(ellipticity >= 1.0) {
            return Err(LabError::config("ellipticity constant must be at least 1"));
        }
        Ok(Diffusion {
            dim,
            f: Arc::new(f),
            constant: None,
            ellipticity,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }

    pub fn as_constant(&self) -> Option<&DMatrix<f64>> {
        self.constant.as_ref()
    }

    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut DMatrix<f64>) {
        (self.f)(t, x, out)
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.eval_into(t, x, &mut out);
        out
    }

    /// Samples `η^{-1}|v|² ≤ σ v·v ≤ η|v|²` on random `(t, x, v)`.
    pub fn check_ellipticity(&self, state_dim: usize, horizon: f64, probes: usize, seed: u64) -> Result<()> {
        let mut rng = SeedTree::new(seed).named("ellipticity").stream(0);
        let mut sigma = DMatrix::zeros(self.dim, self.dim);
        for _ in 0..probes {
            let t = horizon * rng.random::<f64>();
            let x: Vec<f64> = (0..state_dim).map(|_| 10.0 * rng.random::<f64>() - 5.0).collect();
            self.eval_into(t, &x, &mut sigma);
            let v: Vec<f64> = (0..self.dim).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let norm2: f64 = v.iter().map(|a| a * a).sum();
            let mut quad = 0.0;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    quad += sigma[(i, j)] * v[i] * v[j];
                }
            }
            let eta = self.ellipticity;
            if quad < norm2 / eta - 1e-12 || quad > eta * norm2 + 1e-12 {
                return Err(LabError::config(format!(
                    "diffusion violates ellipticity {eta} at t={t}: sigma v.v = {quad}, |v|^2 = {norm2}"
                )));
            }
        }
        Ok(())
    }
}

/// `dX = (A_t X + F(t, X)) dt + B σ(t, X_-) dZ`.
#[derive(Clone, Debug)]
pub struct ChainModel {
    pub matrix: ChainMatrix,
    pub drift: DriftSpec,
    pub diffusion: Diffusion,
    pub noise: LevyNoiseSpec,
}

impl ChainModel {
    pub fn new(matrix: ChainMatrix, drift: DriftSpec, diffusion: Diffusion, noise: LevyNoiseSpec) -> Result<Self> {
        let shape = matrix.shape();
        if drift.shape() != shape {
            return Err(LabError::config("drift and chain matrix have different shapes"));
        }
        if noise.dimension() != shape.noise_dim() {
            return Err(LabError::config(format!(
                "noise dimension {} differs from the first block size {}",
                noise.dimension(),
                shape.noise_dim()
            )));
        }
        if diffusion.dim() != shape.noise_dim() {
            return Err(LabError::config("diffusion size differs from the noise dimension"));
        }
        if diffusion.as_constant().is_none() && !noise.supports_state_dependent_diffusion() {
            return Err(LabError::config(
                "state-dependent diffusion needs a noise law that admits it (see the noise spectral measure)",
            ));
        }
        Ok(ChainModel {
            matrix,
            drift,
            diffusion,
            noise,
        })
    }

    /// Noise-only chain: nilpotent `A`, no drift, `σ = I`.
    pub fn noise_only(shape: ChainShape, noise: LevyNoiseSpec) -> Result<Self> {
        let d = shape.noise_dim();
        Self::new(
            ChainMatrix::nilpotent(shape.clone()),
            DriftSpec::zero(shape),
            Diffusion::identity(d),
            noise,
        )
    }

    pub fn shape(&self) -> &ChainShape {
        self.matrix.shape()
    }

    pub fn alpha(&self) -> f64 {
        self.noise.alpha()
    }

    /// Structural checks: Hörmander blocks, drift dependency, ellipticity.
    pub fn validate(&self, horizon: f64, seed: u64) -> Result<()> {
        self.matrix
            .validate(horizon, crate::scale_geometry::DEFAULT_KAPPA, 16)?;
        self.drift.check_dependency(horizon, 8, seed)?;
        self.diffusion
            .check_ellipticity(self.shape().total(), horizon, 64, seed)
    }
}
