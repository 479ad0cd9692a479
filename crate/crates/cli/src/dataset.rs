//! Dataset manifest and per-setup data file handling.
//!
//! A campaign on disk is a JSON manifest plus one numeric table per setup.
//! Data files hold one row per sample with the input (shaker) channels
//! first, then the response channels in the manifest's `sensor_dofs` order.
//! Two layouts are accepted: tab-separated text (`tsv`, `#` comments
//! allowed) and raw little-endian 64-bit floats in row-major order
//! (`f64le`).

use std::fs;
use std::path::{Path, PathBuf};

use bayema::{ResponseKind, SetupRecord, TestPlan};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, CliError};

/// Acceleration/velocity/displacement units this tool recognizes. Units are
/// metadata: values are passed through unscaled, but an undeclared or
/// unknown unit is rejected so downstream consumers can trust the field.
pub const ACCEPTED_UNITS: &[&str] = &["g", "m/s^2", "mm/s^2", "m/s", "mm/s", "m", "mm"];

/// On-disk layout of the per-setup data files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Tab-separated decimal text, one sample per line, `#` comments.
    Tsv,
    /// Raw little-endian IEEE-754 doubles, row-major.
    F64le,
}

/// One setup's entry in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupEntry {
    /// Data file path, relative to the manifest's directory.
    pub data_file: String,
    /// Global DOF index of each response column, in column order.
    pub sensor_dofs: Vec<usize>,
    /// Shaker scheme driving this setup.
    pub shaker_scheme: usize,
}

/// Campaign description: the test plan plus where the numbers live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Human-readable campaign name.
    pub name: String,
    /// Sampling interval in seconds, common to all setups.
    pub dt: f64,
    /// Physical kind of the response channels.
    pub response_kind: ResponseKind,
    /// Unit of both input and response channels (see [`ACCEPTED_UNITS`]).
    pub units: String,
    /// Total number of distinct measured DOFs.
    pub n_dofs: usize,
    /// Number of input (shaker) channels per setup.
    pub n_inputs: usize,
    /// Data file layout.
    pub format: DataFormat,
    /// Per-setup entries, in setup order.
    pub setups: Vec<SetupEntry>,
    /// Unix timestamp of generation; metadata only, excluded from digests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

impl DatasetManifest {
    /// Builds the [`TestPlan`] described by this manifest.
    pub fn to_plan(&self) -> Result<TestPlan, CliError> {
        TestPlan::new(
            self.n_dofs,
            self.n_inputs,
            self.setups.iter().map(|s| s.sensor_dofs.clone()).collect(),
            self.setups.iter().map(|s| s.shaker_scheme).collect(),
        )
        .map_err(CliError::from)
    }

    /// Absolute paths of the data files, in setup order.
    pub fn data_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        self.setups.iter().map(|s| dir.join(&s.data_file)).collect()
    }
}

/// Loads and validates a campaign from a manifest path.
///
/// Every structural invariant is checked here with the file (and for text
/// data, the line) in the message; a disconnected setup-overlap graph is
/// only a warning at this stage — single-component coverage is not needed
/// until the initializer assembles global shapes.
pub fn load_dataset(
    manifest_path: &Path,
) -> Result<(DatasetManifest, TestPlan, Vec<SetupRecord>), CliError> {
    let bytes = fs::read(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&bytes).map_err(|e| json_err(manifest_path, e))?;

    if !(manifest.dt > 0.0 && manifest.dt.is_finite()) {
        return Err(CliError::Validation(format!(
            "{}: dt must be positive and finite, got {}",
            manifest_path.display(),
            manifest.dt
        )));
    }
    if !ACCEPTED_UNITS.contains(&manifest.units.as_str()) {
        return Err(CliError::Validation(format!(
            "{}: unknown unit {:?}; accepted units: {}",
            manifest_path.display(),
            manifest.units,
            ACCEPTED_UNITS.join(", ")
        )));
    }
    let plan = manifest.to_plan()?;

    let components = bayema::initializer::overlap_components(&plan);
    if components.len() > 1 {
        eprintln!(
            "warning: setups fall into {} disconnected groups ({:?}); \
             global mode shapes cannot be assembled across them",
            components.len(),
            components
        );
    }

    let mut records = Vec::with_capacity(manifest.setups.len());
    for (r, (entry, path)) in manifest
        .setups
        .iter()
        .zip(manifest.data_paths(manifest_path))
        .enumerate()
    {
        let cols = manifest.n_inputs + entry.sensor_dofs.len();
        let table = match manifest.format {
            DataFormat::Tsv => read_tsv(&path, cols)?,
            DataFormat::F64le => read_f64le(&path, cols)?,
        };
        let n = table.nrows();
        let input = table.columns(0, manifest.n_inputs).into_owned();
        let output = table.columns(manifest.n_inputs, entry.sensor_dofs.len()).into_owned();
        let record = SetupRecord {
            setup_index: r,
            dt: manifest.dt,
            input,
            output,
            response_kind: manifest.response_kind,
        };
        record.validate(&plan).map_err(|e| {
            CliError::Validation(format!("{}: {e}", path.display()))
        })?;
        debug_assert_eq!(record.n_samples(), n);
        records.push(record);
    }
    Ok((manifest, plan, records))
}

/// Parses a whitespace-delimited text table with exactly `cols` columns.
fn read_tsv(path: &Path, cols: usize) -> Result<DMatrix<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != cols {
            return Err(CliError::Validation(format!(
                "{}:{}: expected {} columns, found {}",
                path.display(),
                lineno + 1,
                cols,
                fields.len()
            )));
        }
        for field in fields {
            let v: f64 = field.parse().map_err(|e| {
                CliError::Validation(format!(
                    "{}:{}: bad number {field:?}: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Validation(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Reads a raw little-endian f64 table with exactly `cols` columns.
fn read_f64le(path: &Path, cols: usize) -> Result<DMatrix<f64>, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let row_bytes = 8 * cols;
    if bytes.is_empty() || bytes.len() % row_bytes != 0 {
        return Err(CliError::Validation(format!(
            "{}: {} bytes is not a whole number of {}-column f64 rows",
            path.display(),
            bytes.len(),
            cols
        )));
    }
    let rows = bytes.len() / row_bytes;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Writes one setup's samples in the requested format. Text output prints
/// every value with Rust's shortest round-trip representation, so re-reading
/// reproduces the doubles bit for bit.
pub fn write_data_file(
    path: &Path,
    record: &SetupRecord,
    format: DataFormat,
) -> Result<(), CliError> {
    let n = record.n_samples();
    let d_s = record.input.ncols();
    let d_r = record.output.ncols();
    match format {
        DataFormat::Tsv => {
            let mut text = String::new();
            text.push_str("# one row per sample: ");
            text.push_str(&format!("{d_s} input column(s), then {d_r} response column(s)\n"));
            for i in 0..n {
                for c in 0..d_s {
                    if c > 0 {
                        text.push('\t');
                    }
                    text.push_str(&record.input[(i, c)].to_string());
                }
                for c in 0..d_r {
                    text.push('\t');
                    text.push_str(&record.output[(i, c)].to_string());
                }
                text.push('\n');
            }
            fs::write(path, text).map_err(|e| io_err(path, e))
        }
        DataFormat::F64le => {
            let mut bytes = Vec::with_capacity(8 * n * (d_s + d_r));
            for i in 0..n {
                for c in 0..d_s {
                    bytes.extend_from_slice(&record.input[(i, c)].to_le_bytes());
                }
                for c in 0..d_r {
                    bytes.extend_from_slice(&record.output[(i, c)].to_le_bytes());
                }
            }
            fs::write(path, bytes).map_err(|e| io_err(path, e))
        }
    }
}
