//! Graph spectral tools for prediction analysis.
//!
//! A sampled, orthogonalized Nyström decomposition of the normalized graph
//! Laplacian gives an approximate eigenbasis; the graph Fourier transform
//! and band perturbations in [`gft`] work on top of it.

pub mod bound;
pub mod dense;
pub mod error;
pub mod gft;
pub mod io;
pub mod laplacian;
pub mod nystrom;

pub use bound::{bound_check, zeta, BoundReport};
pub use error::{Result, SpectralError};
pub use gft::{gft, inter_perturb, intra_perturb, Band, Direction};
pub use laplacian::NormalizedLaplacian;
pub use nystrom::{exact_basis, nystrom_eig, NystromConfig, PowerTarget, SpectralBasis, SpectrumEnd, EIGEN_FLOOR};
