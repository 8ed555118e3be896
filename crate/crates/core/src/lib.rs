//! Recovery of the hidden kernels of a planted one-hidden-layer
//! convolutional model with non-overlapping patches.
//!
//! The library is organized around the experiment pipeline:
//!
//! * [`activation`]: activation functions and their Gaussian moment
//!   functionals (closed forms cross-checked against quadrature),
//! * [`model`]: the planted convolutional model, ground-truth generation
//!   and dataset sampling,
//! * [`risk`]: empirical least-squares risk with analytic gradient and
//!   Hessian, plus Monte-Carlo population references and spectra,
//! * [`init_tensor`]: method-of-moments initialization (patch-averaged
//!   second/third moments, whitening, robust tensor power iteration),
//! * [`train`]: gradient descent with optional per-iteration resampling,
//! * [`cli`]: experiment configs, CSV/SVG emission and the subcommands
//!   behind the `cnn-recover` binary.
//!
//! All randomness flows through [`rng::SeedStream`], a labeled splittable
//! generator, so every experiment is reproducible byte-for-byte.

pub mod activation;
pub mod cli;
pub mod error;
pub mod init_tensor;
pub mod model;
pub mod parallel;
pub mod quadrature;
pub mod risk;
pub mod rng;
pub mod tensor3;
pub mod train;

pub use error::{Error, Result};
