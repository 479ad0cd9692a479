//! CLI error type mapping every failure onto the documented exit codes:
//! 0 success, 2 validation failure, 3 non-convergence, 4 numeric failure.

use std::fmt;

/// Top-level CLI failure, carrying the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad inputs: malformed manifests, missing files, inconsistent
    /// dimensions, unusable options. Exit code 2.
    Validation(String),
    /// The coordinate descent hit the iteration cap in at least one band.
    /// The report is still written; exit code 3.
    NonConvergence(String),
    /// The data defeated the numerics: singular update systems, indefinite
    /// projected Hessian, non-finite intermediates. Exit code 4.
    Numeric(String),
}

impl CliError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Prefixes the message with the band it occurred in.
    pub fn in_band(self, index: usize, f_lo: f64, f_hi: f64) -> CliError {
        let tag = format!("band {index} ({f_lo}\u{2013}{f_hi} Hz): ");
        match self {
            CliError::Validation(msg) => CliError::Validation(tag + &msg),
            CliError::NonConvergence(msg) => CliError::NonConvergence(tag + &msg),
            CliError::Numeric(msg) => CliError::Numeric(tag + &msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::NonConvergence(msg) => write!(f, "{msg}"),
            CliError::Numeric(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bayema::Error> for CliError {
    fn from(err: bayema::Error) -> Self {
        use bayema::Error as E;
        match err {
            // Input/configuration problems the user can fix.
            E::Invalid { .. }
            | E::BandTooNarrow { .. }
            | E::InsufficientData { .. }
            | E::RankDeficientInput { .. }
            | E::TooFewPeaks { .. }
            | E::DisconnectedSetups { .. } => CliError::Validation(err.to_string()),
            // Conditioning/indefiniteness problems in the data itself.
            E::FrfSingular { .. }
            | E::SingularShapeSystem { .. }
            | E::SingularMpfSystem { .. }
            | E::DegenerateMode { .. }
            | E::NotAMinimum { .. }
            | E::NumericFailure { .. } => CliError::Numeric(err.to_string()),
        }
    }
}

/// IO failures are validation failures (missing or unreadable files) from
/// the exit-code perspective; callers attach the path for context.
pub fn io_err(path: &std::path::Path, err: std::io::Error) -> CliError {
    CliError::Validation(format!("{}: {err}", path.display()))
}

/// JSON syntax/shape failures, with the offending path attached.
pub fn json_err(path: &std::path::Path, err: serde_json::Error) -> CliError {
    CliError::Validation(format!("{}: {err}", path.display()))
}
