//! Kernel independence criteria, variance-covariance regularization, and ICA.
//!
//! The crate is organized around a single dense-matrix currency
//! ([`Mat`], rows = samples, columns = features/channels) and four layers:
//!
//! - [`numerics`]: covariance, ZCA whitening, seeded RNG, SGD/Adam.
//! - [`kernel`]: HSIC and dHSIC estimators, median-heuristic bandwidths,
//!   permutation independence tests, and the projector/covariance identity
//!   checks ([`kernel::lemma`]).
//! - [`loss`]: the VCReg loss family (variance hinge + covariance penalty,
//!   invariance term, BarlowTwins cross-correlation) with analytic gradients.
//! - [`projector`] and [`ica`]: frozen random projectors with reverse-mode
//!   input gradients, and the linear / post-nonlinear ICA trainers built on
//!   top of them, plus FastICA and whitening baselines.
//!
//! CSV I/O and run manifests used by the `vcreg` binary live in [`io`] and
//! [`manifest`].

pub mod cli;
pub mod error;
pub mod ica;
pub mod io;
pub mod kernel;
pub mod loss;
pub mod manifest;
pub mod net;
pub mod numerics;
pub mod projector;

pub use error::Error;

/// Dense matrix of 64-bit floats; row = sample, column = feature.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense column vector of 64-bit floats.
pub type Vec64 = nalgebra::DVector<f64>;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
