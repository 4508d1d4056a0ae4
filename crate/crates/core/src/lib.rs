//! Locally differentially private density estimation with wavelets.
//!
//! Every data holder releases a vector of Laplace-perturbed wavelet
//! evaluations of their own datum; the analyst only ever sees these
//! releases. This crate holds the pure, allocation-only part of the
//! pipeline:
//!
//! * [`wavelet`]: compactly supported orthonormal bases (Haar and Daubechies
//!   2..=10) tabulated on a dyadic grid by the cascade algorithm.
//! * [`density`]: ground-truth densities with compact support, inverse-CDF
//!   sampling, quadrature wavelet coefficients and Besov sequence norms.
//! * [`privacy`]: the two Laplace release mechanisms and an exact log-ratio
//!   auditor for the privacy guarantee.
//! * [`estimator`]: the linear projection estimator and the adaptive
//!   hard-thresholded estimator, with their level-selection rules.
//! * [`risk`]: integrated `L^r` loss, theoretical rate exponents and
//!   log-log slope fitting.
//!
//! The crate is `no_std`; IO, parallel Monte Carlo and the command-line
//! front end live in the `ldpwave` companion crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod coeffs;
pub mod density;
pub mod error;
pub mod estimator;
mod filters;
pub mod privacy;
pub mod quadrature;
pub mod risk;
pub mod seed;
pub mod wavelet;

pub use coeffs::{CoefficientSet, LevelRange, SlotLayout};
pub use density::Density;
pub use error::{Error, Result};
pub use estimator::{DensityEstimate, EstimatorConfig, EstimatorMode};
pub use privacy::{Mechanism, MechanismConfig, MechanismVariant, PrivatizedRecord};
pub use risk::{PrivacyRegime, RateStudy, Regime, RiskReport};
pub use wavelet::{Family, WaveletBasis, WaveletKind};
