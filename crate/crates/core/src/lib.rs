//! Riemannian sparse representation of polarimetric SAR covariance
//! matrices.
//!
//! The pipeline segments a covariance raster into superpixels, encodes each
//! superpixel's mean covariance as a sparse non-negative combination of HPD
//! dictionary atoms under the affine-invariant metric (an unfolded ISTA
//! network alternating coefficient steps with Riemannian conjugate-gradient
//! dictionary updates), broadcasts the codes back to pixels and classifies
//! them with a small three-convolution CNN.
//!
//! | module          | contents                                           |
//! |-----------------|----------------------------------------------------|
//! | [`hpd`]         | complex Hermitian kernel, spectral functions, AIRM  |
//! | [`polsar`]      | Wishart scene simulator, raster formats, Pauli RGB  |
//! | [`superpixel`]  | SLIC-style segmenter, label ingestion, means        |
//! | [`coding`]      | sparse coding objective, gradient, ISTA, SPG init   |
//! | [`dictlearn`]   | Riemannian CG dictionary update                     |
//! | [`network`]     | unfolded network and pixel projection               |
//! | [`cnn`]         | from-scratch CNN with analytic backprop and Adam    |
//! | [`metrics`]     | confusion matrix, OA/AA/Kappa/F1/MIoU               |
//! | [`pipeline`]    | configuration and end-to-end stage orchestration    |

pub mod cnn;
pub mod coding;
pub mod dictlearn;
pub mod hpd;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod polsar;
pub mod sampling;
pub mod superpixel;

mod binio;

pub use binio::FormatError;
