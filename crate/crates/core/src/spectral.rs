//! Scaled FFTs, band selection, singular-value spectra and FRF estimates.
//!
//! Everything downstream of raw time histories starts here: the scaled FFT
//!
//! ```text
//! X_k = sqrt(Δt/N) · Σ_n x_n · exp(−i·2π·n·k/N)
//! ```
//!
//! whose squared magnitude is a two-sided sample PSD, the strict-interior
//! band-bin selection, the singular-value spectra used for picking modes,
//! and an H1 FRF estimate used to seed mode shapes.

use nalgebra::DMatrix;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::{BandSpectra, FrequencyBand, SetupRecord, SetupSpectra, TestPlan, C64};

/// Default PSD/FRF smoothing window in bins (rectangular, centered).
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;

/// Singular values of the smoothed sample PSD matrix on a one-sided
/// frequency grid; the standard display for picking structural modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SvSpectrum {
    /// Frequencies in Hz, `k/(N·Δt)` for `k = 0..=N/2`.
    pub freqs: Vec<f64>,
    /// `n_freqs × d_r`, singular values sorted descending within each row.
    pub singular_values: DMatrix<f64>,
}

/// H1 FRF estimate of one setup over a band: per-bin `d_r × d_s` matrices
/// plus the band-averaged matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrfEstimate {
    /// FFT bin indices the estimate is evaluated at (the band bins).
    pub bin_indices: Vec<usize>,
    /// Bin frequencies in Hz, aligned with `bin_indices`.
    pub freqs: Vec<f64>,
    /// One `d_r × d_s` FRF matrix per band bin.
    pub per_bin: Vec<DMatrix<C64>>,
    /// The estimate formed from sums over the whole band.
    pub band_average: DMatrix<C64>,
}

/// Two-sided scaled FFT of every channel: `X_k = sqrt(Δt/N)·Σ_n x_n·e^(−i2πnk/N)`,
/// returned as an `N × n_channels` complex matrix over all `N` bins.
///
/// Satisfies Parseval's identity `Σ_k |X_k|² = Δt·Σ_n |x_n|²` per channel.
pub fn scaled_fft(samples: &DMatrix<f64>, dt: f64) -> Result<DMatrix<C64>> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::invalid("scaled_fft", "need at least 2 samples"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("scaled_fft", format!("dt must be positive, got {dt}")));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let scale = (dt / n as f64).sqrt();
    let mut out = DMatrix::zeros(n, samples.ncols());
    let mut buf: Vec<C64> = Vec::with_capacity(n);
    for j in 0..samples.ncols() {
        buf.clear();
        buf.extend(samples.column(j).iter().map(|&x| C64::new(x, 0.0)));
        fft.process(&mut buf);
        for (k, v) in buf.iter().enumerate() {
            out[(k, j)] = v * scale;
        }
    }
    Ok(out)
}

/// All FFT bins strictly inside the band: indices `k` with
/// `f_lo < k/(N·Δt) < f_hi`, ascending, paired with the exact `f_k` values.
/// DC and Nyquist are excluded automatically because band edges are strictly
/// inside `(0, Nyquist)`.
pub fn band_bins(band: &FrequencyBand, record: &SetupRecord) -> Result<(Vec<usize>, Vec<f64>)> {
    band.validate(record.nyquist())?;
    let n = record.n_samples();
    let df = 1.0 / (n as f64 * record.dt);
    let mut bins = Vec::new();
    let mut freqs = Vec::new();
    // Smallest candidate k with k·df > f_lo; walk up until k·df ≥ f_hi.
    let mut k = (band.f_lo / df).floor() as usize;
    loop {
        let f = k as f64 * df;
        if f >= band.f_hi {
            break;
        }
        if f > band.f_lo {
            bins.push(k);
            freqs.push(f);
        }
        k += 1;
    }
    if bins.is_empty() {
        return Err(Error::BandTooNarrow {
            f_lo: band.f_lo,
            f_hi: band.f_hi,
            setup: record.setup_index,
            df,
        });
    }
    Ok((bins, freqs))
}

/// Builds the band-limited spectra of every setup from raw records: scaled
/// FFTs of inputs and outputs restricted to the band bins, with the
/// identifiability guards applied.
///
/// `records[r]` must describe setup `r`. The guards refuse bands where a
/// setup's bin count is below the scalar unknowns attributable to it
/// (`2m + d_r·m + d_s·m + 1`) or where the total complex data count falls
/// below the full parameter count.
pub fn extract_band(
    records: &[SetupRecord],
    plan: &TestPlan,
    band: &FrequencyBand,
) -> Result<BandSpectra> {
    if records.len() != plan.n_setups() {
        return Err(Error::invalid(
            "extract_band",
            format!("{} records for {} setups", records.len(), plan.n_setups()),
        ));
    }
    let m = band.n_modes;
    let mut setups = Vec::with_capacity(records.len());
    let mut total_complex = 0usize;
    for (r, rec) in records.iter().enumerate() {
        rec.validate(plan)?;
        if rec.setup_index != r {
            return Err(Error::invalid(
                "extract_band",
                format!("record {r} carries setup index {}", rec.setup_index),
            ));
        }
        let (bins, freqs) = band_bins(band, rec)?;
        let need = 2 * m + plan.d_r(r) * m + plan.n_inputs * m + 1;
        if bins.len() < need {
            return Err(Error::InsufficientData {
                setup: Some(r),
                have: bins.len(),
                need,
            });
        }
        let y_full = scaled_fft(&rec.output, rec.dt)?;
        let u_full = scaled_fft(&rec.input, rec.dt)?;
        let d_r = plan.d_r(r);
        let mut y = DMatrix::zeros(bins.len(), d_r);
        let mut u = DMatrix::zeros(bins.len(), plan.n_inputs);
        for (row, &k) in bins.iter().enumerate() {
            for ch in 0..d_r {
                y[(row, ch)] = y_full[(k, ch)];
            }
            for ch in 0..plan.n_inputs {
                u[(row, ch)] = u_full[(k, ch)];
            }
        }
        total_complex += d_r * bins.len();
        setups.push(SetupSpectra {
            setup_index: r,
            bin_indices: bins,
            freqs,
            y,
            u,
            q: rec.response_kind.q(),
        });
    }
    let layout_n_theta = 2 * m
        + plan.n_dofs * m
        + plan.n_schemes() * plan.n_inputs * m
        + plan.n_setups();
    if total_complex < layout_n_theta {
        return Err(Error::InsufficientData {
            setup: None,
            have: total_complex,
            need: layout_n_theta,
        });
    }
    Ok(BandSpectra { band: band.clone(), setups })
}

/// Singular-value spectrum of the smoothed sample PSD matrix.
///
/// `fft` is the full scaled FFT of a setup's responses (`N × d_r`); at each
/// one-sided display bin the sample PSD matrix is the average of
/// `Ŷ_jŶ_j*` over a centered rectangular `window` (truncated at the record
/// edges), and its singular values are reported in descending order.
pub fn sv_spectrum(fft: &DMatrix<C64>, dt: f64, window: usize) -> Result<SvSpectrum> {
    if window == 0 {
        return Err(Error::invalid("sv_spectrum", "window must be at least 1"));
    }
    let n = fft.nrows();
    if n < 2 {
        return Err(Error::invalid("sv_spectrum", "need at least 2 bins"));
    }
    let d = fft.ncols();
    let n_display = n / 2 + 1;
    let df = 1.0 / (n as f64 * dt);
    let half = window / 2;
    let mut freqs = Vec::with_capacity(n_display);
    let mut sv = DMatrix::zeros(n_display, d);
    let mut psd = DMatrix::<C64>::zeros(d, d);
    for k in 0..n_display {
        freqs.push(k as f64 * df);
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(n - 1);
        psd.fill(C64::new(0.0, 0.0));
        for j in lo..=hi {
            // psd += Ŷ_j Ŷ_j*
            for a in 0..d {
                for b in 0..d {
                    psd[(a, b)] += fft[(j, a)] * fft[(j, b)].conj();
                }
            }
        }
        let count = (hi - lo + 1) as f64;
        psd /= C64::new(count, 0.0);
        let mut s: Vec<f64> = psd.clone().svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (c, v) in s.into_iter().enumerate() {
            sv[(k, c)] = v;
        }
    }
    Ok(SvSpectrum { freqs, singular_values: sv })
}

/// H1 FRF estimate of one setup across its band bins:
/// `Ĥ_k = (Σ_w Ŷ_jÜ_j*)·(Σ_w Ü_jÜ_j*)⁻¹` with a centered rectangular
/// `window` (truncated at the band edges), plus the same estimate formed
/// from whole-band sums.
pub fn frf_estimate(sp: &SetupSpectra, window: usize) -> Result<FrfEstimate> {
    if window == 0 {
        return Err(Error::invalid("frf_estimate", "window must be at least 1"));
    }
    let n_bins = sp.n_bins();
    if n_bins == 0 {
        return Err(Error::invalid("frf_estimate", "no band bins"));
    }
    let d_r = sp.y.ncols();
    let d_s = sp.u.ncols();
    let half = window / 2;
    let solve = |lo: usize, hi: usize| -> Result<DMatrix<C64>> {
        let mut syu = DMatrix::<C64>::zeros(d_r, d_s);
        let mut suu = DMatrix::<C64>::zeros(d_s, d_s);
        for j in lo..=hi {
            for a in 0..d_r {
                for b in 0..d_s {
                    syu[(a, b)] += sp.y[(j, a)] * sp.u[(j, b)].conj();
                }
            }
            for a in 0..d_s {
                for b in 0..d_s {
                    suu[(a, b)] += sp.u[(j, a)] * sp.u[(j, b)].conj();
                }
            }
        }
        let svd = suu.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin <= smax * 1e-12 {
            return Err(Error::RankDeficientInput { setup: sp.setup_index });
        }
        let inv = svd.pseudo_inverse(0.0).map_err(|_| Error::RankDeficientInput {
            setup: sp.setup_index,
        })?;
        Ok(syu * inv)
    };
    let mut per_bin = Vec::with_capacity(n_bins);
    for k in 0..n_bins {
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(n_bins - 1);
        per_bin.push(solve(lo, hi)?);
    }
    let band_average = solve(0, n_bins - 1)?;
    Ok(FrfEstimate {
        bin_indices: sp.bin_indices.clone(),
        freqs: sp.freqs.clone(),
        per_bin,
        band_average,
    })
}
