//! Band configuration: which frequency ranges to identify and with how many
//! modes, mirroring hand-picked brackets around the spectral peaks.

use std::fs;
use std::path::Path;

use bayema::FrequencyBand;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, CliError};

/// One identification band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    /// Lower edge in Hz (exclusive).
    pub f_lo: f64,
    /// Upper edge in Hz (exclusive).
    pub f_hi: f64,
    /// Number of modes to identify inside the band.
    pub n_modes: usize,
    /// Optional seed frequencies overriding automatic peak picking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_frequencies: Option<Vec<f64>>,
    /// Optional reference shapes (one per mode, each over all global DOFs)
    /// to score the identified shapes against via the modal assurance
    /// criterion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_shapes: Option<Vec<Vec<f64>>>,
}

impl BandSpec {
    /// Lowers to the core band type (reference shapes are CLI-side only).
    pub fn to_band(&self) -> FrequencyBand {
        FrequencyBand {
            f_lo: self.f_lo,
            f_hi: self.f_hi,
            n_modes: self.n_modes,
            init_frequencies: self.init_frequencies.clone(),
        }
    }
}

/// Top-level bands file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandsConfig {
    /// Bands to process, independently of each other.
    pub bands: Vec<BandSpec>,
}

/// Loads a bands file, rejecting an empty band list and structurally bad
/// reference shapes early (full band validation happens against the data).
pub fn load_bands(path: &Path, n_dofs: usize) -> Result<BandsConfig, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let cfg: BandsConfig = serde_json::from_slice(&bytes).map_err(|e| json_err(path, e))?;
    if cfg.bands.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: bands list is empty",
            path.display()
        )));
    }
    for (i, band) in cfg.bands.iter().enumerate() {
        if let Some(refs) = &band.reference_shapes {
            if refs.len() != band.n_modes {
                return Err(CliError::Validation(format!(
                    "{}: band {i} declares {} modes but {} reference shapes",
                    path.display(),
                    band.n_modes,
                    refs.len()
                )));
            }
            for (j, shape) in refs.iter().enumerate() {
                if shape.len() != n_dofs {
                    return Err(CliError::Validation(format!(
                        "{}: band {i} reference shape {j} has {} entries for {} DOFs",
                        path.display(),
                        shape.len(),
                        n_dofs
                    )));
                }
            }
        }
    }
    Ok(cfg)
}
