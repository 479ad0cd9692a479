//! The `synthesize` subcommand: writes a complete synthetic campaign —
//! manifest, per-setup data files, a ready-to-use bands file and the ground
//! truth — from a named preset.
//!
//! The bands file carries the true mode shapes of each band's modes as
//! `reference_shapes`, so a subsequent `identify` run scores its results
//! against them without any extra bookkeeping. Noise levels are given in
//! µg/√Hz to match how sensor data sheets state them; data values stay in g.

use std::fs;
use std::path::{Path, PathBuf};

use bayema::synthesis::{add_noise, preset, simulate_setup, Scenario};
use serde::Serialize;

use crate::bands::{BandSpec, BandsConfig};
use crate::dataset::{write_data_file, DataFormat, DatasetManifest, SetupEntry};
use crate::error::{io_err, CliError};
use crate::report::timestamp;

/// Arguments of `bayema synthesize`.
#[derive(Debug, clap::Args)]
pub struct SynthesizeArgs {
    /// Preset campaign: bridge18m or building6story.
    #[arg(long)]
    pub preset: String,
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed; drives and noise derive per-setup seeds from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input-channel noise root PSD in µg/√Hz.
    #[arg(long, default_value_t = 0.0)]
    pub input_noise: f64,
    /// Output-channel noise root PSD in µg/√Hz (preset default when omitted).
    #[arg(long)]
    pub output_noise: Option<f64>,
    /// Shaker drive level override, root PSD in g/√Hz.
    #[arg(long)]
    pub level: Option<f64>,
    /// Driven duration override in seconds.
    #[arg(long)]
    pub drive_secs: Option<f64>,
    /// Data file layout.
    #[arg(long, value_enum, default_value_t = DataFormat::Tsv)]
    pub format: DataFormat,
}

/// Ground-truth sidecar written next to the data, for validation studies.
#[derive(Debug, Serialize)]
struct TruthFile {
    /// Preset the campaign came from.
    preset: String,
    /// True natural frequencies in Hz.
    freqs: Vec<f64>,
    /// True damping ratios.
    dampings: Vec<f64>,
    /// True mode shapes, one unit-norm vector per mode over all DOFs.
    shapes: Vec<Vec<f64>>,
    /// True modal participation factors, `[scheme][input][mode]`.
    mpf: Vec<Vec<Vec<f64>>>,
    /// Output noise root PSD actually applied, in g/√Hz.
    output_noise_root_psd: f64,
    /// Input noise root PSD actually applied, in g/√Hz.
    input_noise_root_psd: f64,
    /// Base seed the campaign was generated from.
    seed: u64,
    /// Modeling notes inherited from the preset.
    notes: Vec<String>,
}

/// Runs the subcommand.
pub fn run(args: &SynthesizeArgs) -> Result<(), CliError> {
    let mut scenario = preset(&args.preset)?;
    scenario.reseed(args.seed);
    if let Some(level) = args.level {
        if !(level > 0.0 && level.is_finite()) {
            return Err(CliError::Validation(format!(
                "--level must be positive and finite, got {level}"
            )));
        }
        scenario.set_level(level);
    }
    if let Some(drive) = args.drive_secs {
        if !(drive > 0.0 && drive.is_finite()) {
            return Err(CliError::Validation(format!(
                "--drive-secs must be positive and finite, got {drive}"
            )));
        }
        scenario.set_drive_secs(drive);
    }
    if !(args.input_noise >= 0.0) || args.output_noise.is_some_and(|v| !(v >= 0.0)) {
        return Err(CliError::Validation("noise levels must be nonnegative".to_string()));
    }
    let output_noise = args
        .output_noise
        .map(|v| v * 1e-6)
        .unwrap_or(scenario.output_noise_root_psd);
    let input_noise = args.input_noise * 1e-6;

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    let mut entries = Vec::with_capacity(scenario.plan.n_setups());
    for r in 0..scenario.plan.n_setups() {
        let clean = simulate_setup(&scenario.model, &scenario.plan, r, &scenario.excitations[r])?;
        // Noise seeds sit between the per-setup drive seeds (base + 1000r),
        // which themselves shift by one per input channel.
        let noisy = add_noise(
            &clean,
            output_noise,
            input_noise,
            args.seed.wrapping_add(1000 * r as u64 + 500),
        )?;
        let ext = match args.format {
            DataFormat::Tsv => "tsv",
            DataFormat::F64le => "f64le",
        };
        let file = format!("setup{r:02}.{ext}");
        write_data_file(&args.out.join(&file), &noisy, args.format)?;
        entries.push(SetupEntry {
            data_file: file,
            sensor_dofs: scenario.plan.sensor_selection[r].clone(),
            shaker_scheme: scenario.plan.shaker_scheme_of_setup[r],
        });
    }

    let manifest = DatasetManifest {
        name: scenario.name.clone(),
        dt: scenario.excitations[0].dt,
        response_kind: scenario.model.response_kind,
        units: "g".to_string(),
        n_dofs: scenario.plan.n_dofs,
        n_inputs: scenario.plan.n_inputs,
        format: args.format,
        setups: entries,
        created_unix: Some(timestamp()),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    write_json(&args.out.join("bands.json"), &bands_with_references(&scenario))?;

    let truth = TruthFile {
        preset: scenario.name.clone(),
        freqs: scenario.model.freqs.clone(),
        dampings: scenario.model.dampings.clone(),
        shapes: (0..scenario.model.n_modes())
            .map(|i| scenario.model.mode_shapes.column(i).iter().copied().collect())
            .collect(),
        mpf: scenario
            .model
            .mpf
            .iter()
            .map(|lam| {
                (0..lam.nrows())
                    .map(|c| (0..lam.ncols()).map(|i| lam[(c, i)]).collect())
                    .collect()
            })
            .collect(),
        output_noise_root_psd: output_noise,
        input_noise_root_psd: input_noise,
        seed: args.seed,
        notes: scenario.notes.clone(),
    };
    write_json(&args.out.join("truth.json"), &truth)?;

    println!(
        "wrote {} setups of '{}' to {}",
        scenario.plan.n_setups(),
        scenario.name,
        args.out.display()
    );
    Ok(())
}

/// The preset's suggested bands, annotated with the true shapes of the modes
/// each band contains so `identify` can report MAC scores against them.
fn bands_with_references(scenario: &Scenario) -> BandsConfig {
    let bands = scenario
        .default_bands
        .iter()
        .map(|band| {
            let members: Vec<usize> = (0..scenario.model.n_modes())
                .filter(|&i| {
                    scenario.model.freqs[i] > band.f_lo && scenario.model.freqs[i] < band.f_hi
                })
                .collect();
            let reference_shapes = (members.len() == band.n_modes).then(|| {
                members
                    .iter()
                    .map(|&i| scenario.model.mode_shapes.column(i).iter().copied().collect())
                    .collect()
            });
            BandSpec {
                f_lo: band.f_lo,
                f_hi: band.f_hi,
                n_modes: band.n_modes,
                init_frequencies: band.init_frequencies.clone(),
                reference_shapes,
            }
        })
        .collect();
    BandsConfig { bands }
}

/// Serializes a value as pretty JSON with a trailing newline.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    fs::write(path, json + "\n").map_err(|e| io_err(path, e))
}
