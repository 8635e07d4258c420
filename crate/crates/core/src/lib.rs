//! Numerical lab for the regularised Dean-Kawasaki equation.
//!
//! Langevin particle systems are smoothed with Gaussian or von Mises kernels,
//! the resulting fluctuation fields are compared with their Dean-Kawasaki
//! counterpart, and a spectral solver integrates the regularised SPDE on the
//! torus.

pub mod error;
pub mod fields;
pub mod gaussian;
pub mod io;
pub mod noise;
pub mod particles;
pub mod periodic_kernel;
pub mod quad;
pub mod rng;
pub mod spde;
pub mod stats;

pub use error::{DkError, Result};

/// Library version, recorded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
