//! Nonparametric deconvolution of Wishart mixtures on the cone of 2×2
//! symmetric positive-definite matrices.
//!
//! The library provides the spherical-transform machinery for rank-two
//! positive-definite matrices (power and spherical functions, the closed-form
//! Wishart transform, empirical and numerical transforms, spectral-cutoff
//! inversion), the mixing-density estimator with unbiased-risk cutoff
//! selection, Wishart samplers and the simulation protocol behind the
//! reference experiments, and a small ingestion pipeline turning two-asset
//! daily closes into weekly covariance observations.

pub mod estimator;
pub mod finance;
pub mod quad;
pub mod sampling;
pub mod spd;
pub mod specfn;
pub mod transform;

pub use estimator::{DeconvolveOutput, DensityGrid, EstimatorConfig, GridSpec};
pub use sampling::{MixtureComponent, MixtureSpec, ProtocolConfig};
pub use spd::{EigenPair, PolarPoint, SpdMatrix, UpperTriangular};
pub use transform::{CutoffRegion, QuadratureSpec, SpectralPoint};
