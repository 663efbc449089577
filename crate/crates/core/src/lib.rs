//! Random Poincare maps of noisy ODEs with several stable periodic orbits.
//!
//! The crate builds the discrete-time Markov chain of successive section
//! crossings of an SDE, discretizes it into a row-(sub)stochastic kernel on a
//! grid, and implements the spectral and metastability calculus on top of it:
//! killed, trace and Doob-conditioned kernels, quasistationary distributions,
//! committor functions, the finite-rank approximation with its
//! block-triangularized spectrum, and a verification harness comparing direct
//! spectral computations with the committor/QSD formulas.

pub mod error;
pub mod floquet;
pub mod io;
mod linalg;
mod serde_util;
pub mod map;
pub mod markov;
pub mod metastable;
pub mod sde;
pub mod verify;

pub use error::{Error, Result};
pub use map::{build_kernel, sample_chain, DiscretizedKernel, Grid, SamplerConfig};
pub use markov::{
    committor, doob_transform, exit_law_from_qsd, expected_exit_time, expected_hitting_time,
    expected_return_time, kill, laplace_kernel, qsd, return_committor, spectral_decomposition,
    stationary_distribution, trace, QsdResult, SpectralDecomposition,
};
pub use sde::{
    detect_crossings, integrate_path, linear_decay_model, model_from_spec, path_action,
    radial_wells_model, reference_model, CatalogModel, Confinement, CrossingChain, Domain,
    ModelSpec, Path, SdeModel, Section,
};
