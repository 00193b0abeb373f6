//! Hydrogen-isotope thermal desorption simulation and calibration.
//!
//! * [`kinetics`]: Arrhenius coefficients, temperature schedules, trap
//!   families and smooth spatial profiles.
//! * [`numerics`]: 1D finite-volume assembly and adaptive backward-Euler
//!   integration with Newton iteration.
//! * [`grain`]: tritium release from a spherical ceramic grain with
//!   trapping and defect annihilation.
//! * [`slab`]: dimensionless deuterium release from an oxide-coated,
//!   self-damaged tungsten slab with six trap families.
//! * [`calibration`]: RMSPE curve comparison and Gaussian-process
//!   Bayesian optimization with Expected Improvement.
//! * [`provenance`]: commit-level AI disclosure, issue linkage and
//!   session-log checks for pre-commit and CI use.

pub mod calibration;
pub mod config;
pub mod curve;
pub mod error;
pub mod grain;
pub mod kinetics;
pub mod numerics;
pub mod provenance;
pub mod slab;

pub use curve::{Normalization, ReleaseCurve};
pub use error::{Error, Result};
pub use kinetics::{ArrheniusRate, PlateauProfile, TemperatureSchedule, TrapFamily, BOLTZMANN_EV};
pub use numerics::{Geometry, Mesh1D, MeshRegion, StepController};
