//! Driving noises: symmetric α-stable laws and their Q-modulated relatives.

mod qfamily;
mod sampling;
mod spec;
mod spectral;
mod symbol;

pub use qfamily::{QFamily, RadialQ, SphereProfile};
pub use sampling::{
    positive_stable, sample_q_modulated_increment, sample_stable_increment, small_jump_covariance,
    standard_stable, Jump, QModulatedSampler, SmallJumpPolicy, StableSampler,
};
pub use spec::{inversion_stable, stable_constant, LevyNoiseSpec, StabilityIndex, NONDEGENERACY_FLOOR};
pub use spectral::{isotropic_moment, probe_directions, SpectralAtom, SpectralMeasure, SphereRule};
pub use symbol::{
    base_symbol, levy_symbol, radial_symbol, BaseSymbol, DirectSymbol, StableSymbol, SymbolQuadrature,
    TabulatedSymbol,
};
