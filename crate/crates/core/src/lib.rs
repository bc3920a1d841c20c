//! Time-of-arrival and survival statistics for a particle hopping on a
//! one-dimensional lattice that is watched at one site by repeated
//! projective measurements.
//!
//! The exact dynamics lives in [`engine`] (O(N) per measurement in the
//! Hamiltonian eigenbasis) and [`fast_forward`] (closed-form powers of the
//! measured propagator). [`oracle`] is an independent dense cross-check,
//! [`perturb`] holds the small-τ closed forms, and [`stats`] turns survival
//! series into arrival-time observables.

pub mod engine;
pub mod error;
pub mod expm;
pub mod fast_forward;
pub mod lattice;
pub mod numeric;
pub mod oracle;
pub mod perturb;
pub mod quad;
pub mod spectral;
pub mod stats;

pub use engine::{
    evolve, simulate, simulate_state, InitialState, MeasurementSchedule, Propagation, Record,
    Recording, SurvivalSeries, TerminalReason, WaveState,
};
pub use error::{Error, Result};
pub use fast_forward::SpectralPropagator;
pub use lattice::{Boundary, LatticeSpec, Mode, Site};
pub use oracle::dense_oracle_evolve;
pub use perturb::{decay_rates, ring_plateau, survival_asymptotic, PerturbativePrediction};
pub use spectral::SpectralBasis;
pub use stats::{
    estimate_plateau, fit_late_exponential, fit_power_law, scaling_collapse, toa_distribution,
    FitWindow, PowerLawFit, ToaDistribution,
};
