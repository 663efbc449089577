//! Markov-operator calculus on discretized kernels.

mod ops;
mod spectral;

pub use ops::{
    committor, doob_transform, exit_law_from_qsd, expected_exit_time, expected_hitting_time,
    expected_return_time, kill, laplace_kernel, qsd, return_committor, spectral_radius_nonneg,
    stationary_distribution, trace, QsdResult,
};
pub use spectral::{spectral_decomposition, SpectralDecomposition};
