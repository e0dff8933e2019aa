//! Experiment drivers producing [`ExperimentReport`](crate::report::ExperimentReport)s.

mod config;
pub mod density;
pub mod flow;
pub mod krylov;
pub mod peano;
pub mod sample;
pub mod scaling;
pub mod simulate;
pub mod threshold;

pub use config::{ChainSetup, DriftConfig, MatrixConfig, ModelConfig, NoiseConfig, SimulationConfig};
pub use density::{density_experiment, DensityConfig};
pub use flow::{flow_diagnostics, FlowDiagnosticsConfig};
pub use krylov::{bump_norm, krylov_diagnostic, Integrability, KrylovConfig};
pub use peano::{peano_constants, peano_experiment, PeanoConfig, PeanoConstants};
pub use sample::{sample_experiment, SampleConfig};
pub use scaling::{level_exponent, scaling_experiment, ScalingConfig};
pub use simulate::simulate_experiment;
pub use threshold::{threshold, threshold_forms, threshold_sweep, wellposedness_validator, ThresholdForms, ThresholdSweepConfig};
