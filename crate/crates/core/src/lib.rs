//! Pseudospectral simulation and identity audits for stochastic phase-field
//! models with singular diffusion `(1/phi) div(phi D grad c)` on the flat torus.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and
//! the command line live in the companion `phasefield-lab` crate.

#![no_std]

extern crate alloc;

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod fft;
pub mod field;
pub mod models;
pub mod noise;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{grad_cap, mean_integral, ScalarField, SpectralCoeffs, TorusGrid, VectorField};
pub use noise::{build_spectrum, NoiseLedger, NoiseSpec, Spectrum};
pub use spectral::Spectral;
