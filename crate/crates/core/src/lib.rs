//! Simulation and numerical analysis of degenerate chains driven by stable-like Lévy noise.

pub mod error;
pub mod experiments;
pub mod flows;
pub mod levy_noise;
pub mod model;
pub mod proxy_density;
pub mod ode;
pub mod scale_geometry;
pub mod sde_engine;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod stats;

pub use error::{LabError, Result};
