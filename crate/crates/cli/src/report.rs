//! Identification report: the machine-readable result of a run.
//!
//! Reports are deterministic: identical inputs and options serialize to
//! byte-identical JSON, except for `created_unix`, which is wall-clock
//! metadata excluded from all digests (and pinned by the `SOURCE_DATE_EPOCH`
//! convention for reproducible pipelines). All floats are printed in
//! shortest round-trip form, so deserializing restores them bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bands::BandSpec;
use crate::error::{io_err, CliError};

/// Options echoed into the report for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Relative NLLF decrease threshold for convergence.
    pub tol: f64,
    /// Coordinate-descent iteration cap.
    pub max_iter: usize,
    /// Seed recorded for provenance; identification itself is deterministic.
    pub seed: u64,
}

/// Per-mode results within one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    /// MAP natural frequency in Hz.
    pub f: f64,
    /// MAP damping ratio.
    pub zeta: f64,
    /// Posterior coefficient of variation of `f`; absent when the band did
    /// not converge and no Gaussian approximation exists at the stop point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_f: Option<f64>,
    /// Posterior coefficient of variation of `ζ` (see `cov_f`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_zeta: Option<f64>,
    /// Shape uncertainty: root of the summed posterior shape variances
    /// (see `cov_f`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_shape: Option<f64>,
    /// MAP mode shape over all global DOFs (unit norm).
    pub shape: Vec<f64>,
    /// Modal assurance vs the band's reference shape, when one was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac_vs_reference: Option<f64>,
}

/// Results of one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    /// The band as configured.
    pub band: BandSpec,
    /// Whether coordinate descent met the tolerance within the cap.
    pub converged: bool,
    /// Iterations used.
    pub iterations: usize,
    /// Negative log-likelihood at the MAP point.
    pub nllf: f64,
    /// Per-mode MAP values and uncertainties, ascending in frequency.
    pub modes: Vec<ModeReport>,
    /// MAP modal participation factors, `[scheme][input][mode]`.
    pub mpf: Vec<Vec<Vec<f64>>>,
    /// Coefficients of variation aligned with `mpf`; entries listed in
    /// `mpf_absolute_std` hold absolute standard deviations instead.
    /// Absent when the band did not converge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_mpf: Option<Vec<Vec<Vec<f64>>>>,
    /// `(scheme, input, mode)` positions whose MAP MPF is exactly zero.
    pub mpf_absolute_std: Vec<(usize, usize, usize)>,
    /// MAP error PSD per setup.
    pub err_psd: Vec<f64>,
    /// Initializer warnings (weak rank separation and the like).
    pub warnings: Vec<String>,
}

/// Whole-run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    /// Version of the tool that wrote the report.
    pub tool_version: String,
    /// Wall-clock metadata; excluded from digests, see module docs.
    pub created_unix: u64,
    /// SHA-256 over manifest, data files (setup order) and bands file.
    pub input_digest: String,
    /// Options the run used.
    pub options: RunOptions,
    /// One entry per configured band, in configuration order.
    pub bands: Vec<BandReport>,
}

/// SHA-256 digest of the campaign inputs: the manifest file, every data
/// file in setup order, then the bands file.
pub fn input_digest(
    manifest_path: &Path,
    data_paths: &[std::path::PathBuf],
    bands_path: &Path,
) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    for path in std::iter::once(manifest_path)
        .chain(data_paths.iter().map(|p| p.as_path()))
        .chain(std::iter::once(bands_path))
    {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        hasher.update(&bytes);
    }
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

/// Current Unix time, honoring `SOURCE_DATE_EPOCH` when set so that
/// reproducibility harnesses get byte-identical files.
pub fn timestamp() -> u64 {
    if let Ok(epoch) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(v) = epoch.parse() {
            return v;
        }
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
