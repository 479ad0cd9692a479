//! The `identify` subcommand: measured campaign in, MAP modal parameters
//! with posterior uncertainties out.
//!
//! Bands are statistically independent given the data, so they are processed
//! on separate threads; all file output happens on the coordinating thread
//! afterwards, in band order. A band that stops on the iteration cap still
//! produces a report entry (`converged: false`, posterior fields absent) and
//! turns the whole run into exit code 3 — but only after the report has been
//! written.

use std::path::PathBuf;

use bayema::initializer::init_theta;
use bayema::spectral::{
    extract_band, frf_estimate, scaled_fft, sv_spectrum, SvSpectrum, DEFAULT_SMOOTHING_WINDOW,
};
use bayema::{
    hessian, identify_band, mac, nullspace_basis, posterior_covariance, summarize,
    DescentOptions, ModalParameterSet, PosteriorResult, SetupRecord, Termination, TestPlan,
};
use nalgebra::DVector;

use crate::bands::{load_bands, BandSpec};
use crate::dataset::load_dataset;
use crate::error::CliError;
use crate::plots::export_plots;
use crate::report::{
    input_digest, timestamp, BandReport, IdentificationReport, ModeReport, RunOptions,
};

/// Arguments of `bayema identify`.
#[derive(Debug, clap::Args)]
pub struct IdentifyArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Bands configuration (JSON).
    #[arg(long)]
    pub bands: PathBuf,
    /// Report output path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for plot data files (written only when given).
    #[arg(long)]
    pub plots: Option<PathBuf>,
    /// Convergence threshold on the relative NLLF decrease per iteration.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Coordinate-descent iteration cap per band.
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Seed echoed into the report; identification itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Runs the subcommand.
pub fn run(args: &IdentifyArgs) -> Result<(), CliError> {
    let opts = DescentOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ..DescentOptions::default()
    };
    opts.validate()?;

    let (manifest, plan, records) = load_dataset(&args.dataset)?;
    let cfg = load_bands(&args.bands, manifest.n_dofs)?;
    let digest = input_digest(&args.dataset, &manifest.data_paths(&args.dataset), &args.bands)?;

    // Full-grid singular-value spectra, shared by peak picking in every band
    // (and by the plot writer).
    let mut svs = Vec::with_capacity(records.len());
    for record in &records {
        let fft = scaled_fft(&record.output, record.dt)?;
        svs.push(sv_spectrum(&fft, record.dt, DEFAULT_SMOOTHING_WINDOW)?);
    }

    let band_results: Vec<Result<BandReport, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .bands
            .iter()
            .enumerate()
            .map(|(index, spec)| {
                let (plan, records, svs, opts) = (&plan, &records, &svs, &opts);
                scope.spawn(move || {
                    process_band(spec, plan, records, svs, opts)
                        .map_err(|e| e.in_band(index, spec.f_lo, spec.f_hi))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("band worker panicked")).collect()
    });
    let mut bands = Vec::with_capacity(band_results.len());
    for result in band_results {
        bands.push(result?);
    }

    let stalled: Vec<usize> = bands
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.converged)
        .map(|(i, _)| i)
        .collect();

    let report = IdentificationReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: timestamp(),
        input_digest: digest,
        options: RunOptions { tol: args.tol, max_iter: args.max_iter, seed: args.seed },
        bands,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Numeric(format!("report serialization: {e}")))?;
    std::fs::write(&args.out, json + "\n").map_err(|e| crate::error::io_err(&args.out, e))?;

    if let Some(dir) = &args.plots {
        export_plots(dir, &records, &svs, &report)?;
    }

    for (i, band) in report.bands.iter().enumerate() {
        println!(
            "band {i} ({}\u{2013}{} Hz): {} mode(s), {} after {} iteration(s)",
            band.band.f_lo,
            band.band.f_hi,
            band.modes.len(),
            if band.converged { "converged" } else { "hit the cap" },
            band.iterations
        );
    }
    println!("report written to {}", args.out.display());

    if stalled.is_empty() {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "band(s) {stalled:?} hit the iteration cap ({}); report written to {}",
            args.max_iter,
            args.out.display()
        )))
    }
}

/// Identifies one band: spectra → initializer → descent → posterior.
fn process_band(
    spec: &BandSpec,
    plan: &TestPlan,
    records: &[SetupRecord],
    svs: &[SvSpectrum],
    opts: &DescentOptions,
) -> Result<BandReport, CliError> {
    let band = spec.to_band();
    let spectra = extract_band(records, plan, &band)?;
    let mut frfs = Vec::with_capacity(spectra.setups.len());
    for sp in &spectra.setups {
        frfs.push(frf_estimate(sp, DEFAULT_SMOOTHING_WINDOW)?);
    }
    let (theta0, warnings) = init_theta(plan, &spectra, svs, &frfs)?;
    let (theta_hat, trace) = identify_band(&spectra, plan, &theta0, opts)?;
    let converged = trace.termination == Termination::Converged;
    let nllf_value = trace.nllf_after_refresh;
    let iterations = trace.iterations;

    // The Laplace posterior only exists at a genuine minimum. At a capped
    // stop point an indefinite projected Hessian is expected, so the failure
    // downgrades to "no posterior"; at a converged point it is a real
    // numeric problem and aborts the run.
    let posterior = match laplace_posterior(&theta_hat, &spectra, plan, nllf_value, &trace) {
        Ok(post) => Some(post),
        Err(err) if converged => return Err(err),
        Err(_) => None,
    };

    Ok(band_report(spec, &theta_hat, posterior.as_ref(), converged, iterations, nllf_value, warnings)?)
}

/// Hessian → constraint nullspace → PCM → per-parameter summaries.
fn laplace_posterior(
    theta_hat: &ModalParameterSet,
    spectra: &bayema::BandSpectra,
    plan: &TestPlan,
    nllf_value: f64,
    trace: &bayema::DescentTrace,
) -> Result<PosteriorResult, CliError> {
    let hess = hessian(theta_hat, spectra, plan)?;
    let basis = nullspace_basis(theta_hat)?;
    let pcm = posterior_covariance(&hess, &basis)?;
    Ok(summarize(theta_hat.clone(), pcm, nllf_value, trace.clone())?)
}

/// Assembles the report entry for one band.
fn band_report(
    spec: &BandSpec,
    theta_hat: &ModalParameterSet,
    posterior: Option<&PosteriorResult>,
    converged: bool,
    iterations: usize,
    nllf_value: f64,
    warnings: Vec<String>,
) -> Result<BandReport, CliError> {
    let m = theta_hat.n_modes();
    let mut modes = Vec::with_capacity(m);
    for i in 0..m {
        let shape: Vec<f64> = theta_hat.mode_shapes.column(i).iter().copied().collect();
        let mac_vs_reference = match &spec.reference_shapes {
            Some(refs) => {
                let shape_vec = DVector::from_column_slice(&shape);
                let reference = DVector::from_column_slice(&refs[i]);
                Some(mac(&shape_vec, &reference)?)
            }
            None => None,
        };
        modes.push(ModeReport {
            f: theta_hat.freqs[i],
            zeta: theta_hat.dampings[i],
            cov_f: posterior.map(|p| p.cov_f[i]),
            cov_zeta: posterior.map(|p| p.cov_zeta[i]),
            cov_shape: posterior.map(|p| p.cov_shape[i]),
            shape,
            mac_vs_reference,
        });
    }

    let nested = |mats: &[nalgebra::DMatrix<f64>]| -> Vec<Vec<Vec<f64>>> {
        mats.iter()
            .map(|lam| {
                (0..lam.nrows())
                    .map(|c| (0..lam.ncols()).map(|i| lam[(c, i)]).collect())
                    .collect()
            })
            .collect()
    };

    Ok(BandReport {
        band: spec.clone(),
        converged,
        iterations,
        nllf: nllf_value,
        modes,
        mpf: nested(&theta_hat.mpf),
        cov_mpf: posterior.map(|p| nested(&p.cov_mpf)),
        mpf_absolute_std: posterior.map(|p| p.mpf_absolute_std.clone()).unwrap_or_default(),
        err_psd: theta_hat.err_psd.clone(),
        warnings,
    })
}
