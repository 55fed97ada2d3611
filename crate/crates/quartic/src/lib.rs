//! Numerics for the free and perturbed resolvents of `(-Δ)² + V` on R⁴:
//! Bessel functions, free kernels and their low-energy expansion,
//! radial/sector discretisation, Birman–Schwinger solves, threshold
//! classification and oscillatory spectral integrals.

pub mod dd;
pub mod error;
pub mod special_functions;
pub mod free_kernels;
pub mod discretization;
pub mod birman_schwinger;
pub mod threshold_classifier;
pub mod linalg;
pub mod oscillatory_quadrature;

pub use error::{QuarticError, Result};
