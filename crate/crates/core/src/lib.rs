//! Spectral laboratory for standing waves of the mixed-dispersion
//! fourth-order nonlinear Schrödinger equation
//!
//! ```text
//! i ψ_t - γ Δ²ψ + β Δψ + |ψ|^{2σ} ψ = 0,   ψ = e^{iαt} u(x),
//! γ Δ²u - β Δu + α u = |u|^{2σ} u.
//! ```
//!
//! Modules, bottom-up: [`spectral`] (grids, transforms, symbols),
//! [`functionals`] (energies and integral identities), [`solvers`]
//! (ground states and mass-constrained minimizers), [`linearization`]
//! (spectra of the linearized operators), [`evolution`] (split-step time
//! integration and orbital distance), [`analysis`] (decay, critical mass,
//! small-γ limit, shooting) and [`io`] (config, field files, CLI runs).

// `!(x > 0.0)` guards also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod evolution;
pub mod functionals;
pub mod io;
pub mod linearization;
pub mod solvers;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{make_grid, ComplexField, Field, Grid, Params, Sampled};
