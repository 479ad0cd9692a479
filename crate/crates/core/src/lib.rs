//! Bayesian modal identification from multi-setup forced-vibration tests.
//!
//! The crate identifies natural frequencies, damping ratios, mode shapes and
//! modal participation factors — together with their posterior uncertainty —
//! from measured shaker-excitation tests in which different setups measure
//! different degrees of freedom.
//!
//! The pipeline, in data-flow order:
//!
//! 1. [`spectral`] — scaled FFTs, band selection, singular-value spectra and
//!    an H1 FRF estimate for exploratory use;
//! 2. [`initializer`] — peak picking, per-setup local mode shapes, global
//!    shape assembly and the starting parameter vector;
//! 3. [`estimator`] — the coordinate-descent maximizer of the band posterior
//!    (semi-analytical updates plus a Nelder–Mead step for frequency and
//!    damping);
//! 4. [`uncertainty`] — the Hessian of the negative log-likelihood and the
//!    constrained-Laplace posterior covariance with derived summaries;
//! 5. [`synthesis`] — synthetic test campaigns with known ground truth for
//!    validation studies.
//!
//! Shared domain types live in [`model`].

pub mod error;
pub mod estimator;
pub mod initializer;
pub mod model;
pub mod spectral;
pub mod synthesis;
pub mod uncertainty;

#[cfg(test)]
pub(crate) mod testkit;

pub use error::{Error, Result};
pub use estimator::{identify_band, DescentOptions, DescentTrace, Termination};
pub use uncertainty::{
    hessian, mac, nullspace_basis, posterior_covariance, summarize, HessianBlocks,
    PosteriorResult,
};
pub use model::{
    frf_value, nllf, predicted_fft, BandSpectra, CommutationMatrices, FrequencyBand,
    ModalParameterSet, ParameterLayout, ResponseKind, SetupRecord, SetupSpectra, TestPlan, C64,
};
