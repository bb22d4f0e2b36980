//! Numerical laboratory for block random band matrices on the torus
//! Z_{WL}^d: sampling, resolvents, G-loops and their hierarchy, block
//! propagators and evolution kernels, primitive K-loops, and a seeded
//! Monte-Carlo harness.

pub mod error;
pub mod flowlab;
pub mod harness;
pub mod lattice;
pub mod loops;
pub mod model;
pub mod primitive;
pub mod propagator;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};

/// Complex scalar used throughout (shared with `faer` and `rustfft`).
pub type C64 = num_complex::Complex64;
