//! Error type shared by every module of the toolkit.

use thiserror::Error;

/// Errors raised by model construction, spectral processing, initialization,
/// estimation, and uncertainty quantification.
#[derive(Debug, Error)]
pub enum Error {
    /// The FRF denominator vanished: the evaluation frequency sits exactly at
    /// resonance (`beta = 1`) with zero damping.
    #[error("FRF is undefined at f = {f} Hz evaluated on bin frequency {f_k} Hz (resonance with zero damping)")]
    FrfSingular { f: f64, f_k: f64 },

    /// A domain-type invariant was violated (test plan, setup record, band,
    /// parameter set, ...). `what` names the offending type or argument.
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    /// A frequency band contains no FFT bins for one of the setups.
    #[error("band ({f_lo}, {f_hi}) Hz straddles no FFT bin of setup {setup} (grid spacing {df} Hz)")]
    BandTooNarrow {
        f_lo: f64,
        f_hi: f64,
        setup: usize,
        df: f64,
    },

    /// Too little data in the band to identify the requested model. `setup`
    /// is `None` when the global data count fails, `Some(r)` when setup `r`
    /// alone supplies fewer bins than its attributable unknown count.
    #[error("identification refused: {}, {have} available but {need} required", match .setup { Some(r) => format!("setup {r} has too few band bins"), None => "total band data below the unknown count".to_string() })]
    InsufficientData {
        setup: Option<usize>,
        have: usize,
        need: usize,
    },

    /// The band-averaged input cross-spectral matrix of a setup is singular,
    /// so the H1 FRF estimate is unavailable.
    #[error("input cross-spectrum is rank-deficient in setup {setup}; the FRF estimate needs all input channels excited in the band")]
    RankDeficientInput { setup: usize },

    /// Peak picking found fewer distinct spectral peaks than modes requested.
    #[error("found only {found} distinct SV-spectrum peaks in the band but {needed} modes requested; supply init_frequencies manually")]
    TooFewPeaks { found: usize, needed: usize },

    /// The setup-overlap graph induced by shared DOFs is disconnected, so the
    /// global mode shape cannot be assembled. Components list setup indices.
    #[error("mode-shape assembly impossible: setups form {} disconnected groups {components:?} with no shared DOFs between them", components.len())]
    DisconnectedSetups { components: Vec<Vec<usize>> },

    /// The linear system of the mode-shape update is singular (typically a
    /// DOF that no setup measures, or an MPF column collapsed to zero).
    #[error("mode-shape update system is singular: {detail}")]
    SingularShapeSystem { detail: String },

    /// The linear system of the MPF update for one shaker scheme is singular
    /// (shaker at a node, or a mode unexcited by that scheme).
    #[error("MPF update system is singular for shaker scheme {scheme} (shaker at a node or mode unexcited)")]
    SingularMpfSystem { scheme: usize },

    /// A mode-shape column has zero norm and cannot be renormalized.
    #[error("mode shape column {mode} has zero norm")]
    DegenerateMode { mode: usize },

    /// The projected Hessian is not positive definite, i.e. the supplied
    /// point is not a constrained local minimum of the NLLF.
    #[error("projected Hessian is not positive definite ({detail}); the descent has not converged to a minimum")]
    NotAMinimum { detail: String },

    /// A non-finite value appeared while assembling the named Hessian block.
    #[error("non-finite value in Hessian block {block}")]
    NumericFailure { block: &'static str },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::Invalid`].
    pub fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }
}
