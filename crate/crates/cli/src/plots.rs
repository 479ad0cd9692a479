//! Plot data files: plain numeric tables any plotting tool can ingest.
//!
//! Three families are written per run: singular-value spectra and root input
//! PSDs (one file per setup, full frequency grid) and identified mode shapes
//! (one file per band, keyed by global DOF). Values print in Rust's shortest
//! round-trip form, so parsing a file back reproduces every double bit for
//! bit — the same numbers the report holds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bayema::spectral::{scaled_fft, SvSpectrum};
use bayema::SetupRecord;

use crate::error::{io_err, CliError};
use crate::report::IdentificationReport;

/// Writes all plot files for one run into `dir` (created if absent).
pub fn export_plots(
    dir: &Path,
    records: &[SetupRecord],
    svs: &[SvSpectrum],
    report: &IdentificationReport,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (r, (record, sv)) in records.iter().zip(svs).enumerate() {
        write_sv_spectrum(&dir.join(format!("sv_setup{r:02}.tsv")), sv)?;
        write_input_psd(&dir.join(format!("input_psd_setup{r:02}.tsv")), record)?;
    }
    for (b, band) in report.bands.iter().enumerate() {
        write_shapes(&dir.join(format!("shapes_band{b:02}.tsv")), band)?;
    }
    Ok(())
}

/// Per-setup singular-value spectrum: frequency column plus one column per
/// singular value, descending within each row.
fn write_sv_spectrum(path: &Path, sv: &SvSpectrum) -> Result<(), CliError> {
    let d_r = sv.singular_values.ncols();
    let mut text = String::from("# freq_hz");
    for j in 1..=d_r {
        let _ = write!(text, "\tsv{j}");
    }
    text.push('\n');
    for (k, &f) in sv.freqs.iter().enumerate() {
        let _ = write!(text, "{f}");
        for j in 0..d_r {
            let _ = write!(text, "\t{}", sv.singular_values[(k, j)]);
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Per-setup root PSD of the measured input channels over the one-sided
/// grid: `sqrt(2)·|X̂_k|` per bin, the amplitude a flat-root-PSD drive was
/// specified in.
fn write_input_psd(path: &Path, record: &SetupRecord) -> Result<(), CliError> {
    let fft = scaled_fft(&record.input, record.dt)?;
    let n = fft.nrows();
    let d_s = fft.ncols();
    let df = 1.0 / (n as f64 * record.dt);
    let mut text = String::from("# freq_hz");
    for c in 1..=d_s {
        let _ = write!(text, "\troot_psd_in{c}");
    }
    text.push('\n');
    for k in 0..=n / 2 {
        let _ = write!(text, "{}", k as f64 * df);
        for c in 0..d_s {
            let _ = write!(text, "\t{}", std::f64::consts::SQRT_2 * fft[(k, c)].norm());
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Per-band MAP mode shapes, one row per global DOF — identical numbers to
/// the report's `shape` arrays, arranged for plotting.
fn write_shapes(path: &Path, band: &crate::report::BandReport) -> Result<(), CliError> {
    let mut text = String::from("# dof");
    for i in 1..=band.modes.len() {
        let _ = write!(text, "\tmode{i}");
    }
    text.push('\n');
    let n_dofs = band.modes.first().map_or(0, |m| m.shape.len());
    for a in 0..n_dofs {
        let _ = write!(text, "{a}");
        for mode in &band.modes {
            let _ = write!(text, "\t{}", mode.shape[a]);
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// Parses a plot table back into rows of doubles, skipping the header.
    fn parse(path: &Path) -> Vec<Vec<f64>> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect())
            .collect()
    }

    #[test]
    fn sv_table_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let sv = SvSpectrum {
            freqs: vec![0.0, 0.1, 0.2],
            singular_values: DMatrix::from_row_slice(
                3,
                2,
                &[1.0 / 3.0, 1e-17, 2.0 / 7.0, 3e-300, 0.625, 0.0],
            ),
        };
        let path = dir.path().join("sv.tsv");
        write_sv_spectrum(&path, &sv).unwrap();
        let rows = parse(&path);
        assert_eq!(rows.len(), 3);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row[0].to_bits(), sv.freqs[k].to_bits());
            assert_eq!(row[1].to_bits(), sv.singular_values[(k, 0)].to_bits());
            assert_eq!(row[2].to_bits(), sv.singular_values[(k, 1)].to_bits());
        }
    }

    #[test]
    fn input_psd_has_one_sided_grid_and_parseval_scale() {
        // A pure cosine at bin 2 of an 8-sample record: the scaled FFT puts
        // `sqrt(dt/N)·(N/2)·A` at bins ±2, so the one-sided root PSD reads
        // `sqrt(2)·sqrt(N·dt)·A/2` there and ~0 elsewhere.
        let n = 8;
        let dt = 0.5;
        let amp = 0.75;
        let mut input = DMatrix::zeros(n, 1);
        for j in 0..n {
            input[(j, 0)] = amp * (2.0 * std::f64::consts::PI * 2.0 * j as f64 / n as f64).cos();
        }
        let record = SetupRecord {
            setup_index: 0,
            dt,
            input,
            output: DMatrix::zeros(n, 1),
            response_kind: bayema::ResponseKind::Acceleration,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("psd.tsv");
        write_input_psd(&path, &record).unwrap();
        let rows = parse(&path);
        assert_eq!(rows.len(), n / 2 + 1);
        let df = 1.0 / (n as f64 * dt);
        let expect = std::f64::consts::SQRT_2 * (n as f64 * dt).sqrt() * amp / 2.0;
        for (k, row) in rows.iter().enumerate() {
            assert!((row[0] - k as f64 * df).abs() < 1e-15);
            if k == 2 {
                assert!((row[1] - expect).abs() < 1e-12 * expect, "{} vs {expect}", row[1]);
            } else {
                assert!(row[1].abs() < 1e-12, "bin {k} leaked {}", row[1]);
            }
        }
    }

    #[test]
    fn shape_table_matches_report_columns() {
        use crate::bands::BandSpec;
        use crate::report::{BandReport, ModeReport};
        let band = BandReport {
            band: BandSpec {
                f_lo: 1.0,
                f_hi: 2.0,
                n_modes: 2,
                init_frequencies: None,
                reference_shapes: None,
            },
            converged: true,
            iterations: 3,
            nllf: 0.0,
            modes: vec![
                ModeReport {
                    f: 1.2,
                    zeta: 0.02,
                    cov_f: None,
                    cov_zeta: None,
                    cov_shape: None,
                    shape: vec![0.6, -0.8, 1.0 / 3.0],
                    mac_vs_reference: None,
                },
                ModeReport {
                    f: 1.7,
                    zeta: 0.01,
                    cov_f: None,
                    cov_zeta: None,
                    cov_shape: None,
                    shape: vec![0.1, 0.2, -0.3],
                    mac_vs_reference: None,
                },
            ],
            mpf: vec![],
            cov_mpf: None,
            mpf_absolute_std: vec![],
            err_psd: vec![],
            warnings: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shapes.tsv");
        write_shapes(&path, &band).unwrap();
        let rows = parse(&path);
        assert_eq!(rows.len(), 3);
        for (a, row) in rows.iter().enumerate() {
            assert_eq!(row[0], a as f64);
            assert_eq!(row[1].to_bits(), band.modes[0].shape[a].to_bits());
            assert_eq!(row[2].to_bits(), band.modes[1].shape[a].to_bits());
        }
    }
}
