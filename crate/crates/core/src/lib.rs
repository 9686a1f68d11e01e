//! Pseudo-spectral solver for the primitive equations with horizontal
//! viscosity and diffusivity on the z-extended periodic box, plus a
//! verification lab for anisotropic functional inequalities and runtime
//! monitors for a priori energy estimates.

pub mod error;
pub mod grid;
pub mod io;
pub mod lab;
pub mod monitors;
pub mod norms;
pub mod operators;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{
    dealiased_product, enforce_parity, forward, inverse, make_grid, sample, Grid, Parity,
    RealField, SpectralField,
};
