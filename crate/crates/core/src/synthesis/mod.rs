//! Synthetic multi-setup forced-vibration campaigns with known ground truth.
//!
//! Responses are generated by modal superposition: each mode obeys the SDOF
//! equation
//!
//! ```text
//! η̈_i + 2ζ_iω_i·η̇_i + ω_i²·η_i = λ_iᵀ·ü(t),
//! ```
//!
//! integrated by the exact discrete transition for piecewise-linear input,
//! so the synthetic data carries no integration bias at ordinary sampling
//! rates. The shaker drive is synthesized in the frequency domain with a
//! flat root PSD and uniformly random phases; sensor noise is Gaussian white
//! with a chosen root PSD. Identical seeds reproduce campaigns bit for bit.

mod presets;

pub use presets::{preset, Scenario};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::{ResponseKind, SetupRecord, TestPlan, C64};

/// Ground-truth modal model of a synthetic structure: a [`crate::model::ModalParameterSet`]
/// minus the error PSDs, over the full measured DOF set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModalModel {
    /// Natural frequencies in Hz.
    pub freqs: Vec<f64>,
    /// Damping ratios.
    pub dampings: Vec<f64>,
    /// Unit-norm mode shapes over all `d` DOFs, `d × m`.
    pub mode_shapes: DMatrix<f64>,
    /// Modal participation factors, one `d_s × m` matrix per shaker scheme.
    pub mpf: Vec<DMatrix<f64>>,
    /// Physical kind of the simulated responses.
    pub response_kind: ResponseKind,
}

impl TrueModalModel {
    /// Number of modes.
    pub fn n_modes(&self) -> usize {
        self.freqs.len()
    }

    /// Checks dimensions, damping range and unit column norms.
    pub fn validate(&self) -> Result<()> {
        let m = self.n_modes();
        if m == 0 {
            return Err(Error::invalid("TrueModalModel", "no modes"));
        }
        if self.dampings.len() != m || self.mode_shapes.ncols() != m {
            return Err(Error::invalid("TrueModalModel", "mode count mismatch"));
        }
        for lam in &self.mpf {
            if lam.ncols() != m {
                return Err(Error::invalid("TrueModalModel", "MPF column count != m"));
            }
        }
        for i in 0..m {
            if !(self.freqs[i] > 0.0) {
                return Err(Error::invalid("TrueModalModel", "frequencies must be positive"));
            }
            if !(self.dampings[i] > 0.0 && self.dampings[i] < 1.0) {
                return Err(Error::invalid("TrueModalModel", "damping outside (0, 1)"));
            }
            let norm = self.mode_shapes.column(i).norm();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(
                    "TrueModalModel",
                    format!("mode {i} shape norm {norm} is not 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Shaker drive description: flat root PSD over a band, with pre-roll and
/// post-roll quiet segments around the driven portion.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSpec {
    /// Band `(f_lo, f_hi)` in Hz carrying the flat root PSD.
    pub band: (f64, f64),
    /// Root PSD level in g/√Hz (one-sided convention).
    pub level: f64,
    /// Quiet seconds before the drive starts.
    pub pre_roll: f64,
    /// Driven seconds.
    pub drive: f64,
    /// Quiet seconds after the drive stops.
    pub post_roll: f64,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Seed for the random phases.
    pub seed: u64,
}

impl ExcitationSpec {
    /// Total sample count `(pre + drive + post) / dt`, rounding each segment.
    pub fn n_samples(&self) -> usize {
        self.n_pre() + self.n_drive() + self.n_post()
    }

    fn n_pre(&self) -> usize {
        (self.pre_roll / self.dt).round() as usize
    }

    fn n_drive(&self) -> usize {
        (self.drive / self.dt).round() as usize
    }

    fn n_post(&self) -> usize {
        (self.post_roll / self.dt).round() as usize
    }

    /// Checks the spec invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("ExcitationSpec", "dt must be positive"));
        }
        if self.pre_roll < 0.0 || self.drive < 0.0 || self.post_roll < 0.0 {
            return Err(Error::invalid("ExcitationSpec", "durations must be nonnegative"));
        }
        if !(self.level >= 0.0) {
            return Err(Error::invalid("ExcitationSpec", "level must be nonnegative"));
        }
        let nyquist = 0.5 / self.dt;
        if !(self.band.0 >= 0.0 && self.band.0 < self.band.1 && self.band.1 < nyquist) {
            return Err(Error::invalid(
                "ExcitationSpec",
                format!(
                    "band ({}, {}) must satisfy 0 ≤ f_lo < f_hi < Nyquist {}",
                    self.band.0, self.band.1, nyquist
                ),
            ));
        }
        Ok(())
    }
}

/// Synthesizes one drive channel: zeros during the rolls, and in the driven
/// segment a frequency-domain construction with constant DFT magnitude over
/// the band (so the two-sided sample PSD is exactly `level²/2` in-band and
/// zero outside) and independent uniform phases.
pub fn flat_psd_excitation(spec: &ExcitationSpec) -> Result<DVector<f64>> {
    spec.validate()?;
    let n_total = spec.n_samples();
    let n_drive = spec.n_drive();
    let mut out = DVector::zeros(n_total);
    if n_drive == 0 || spec.level == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // |X_k| = sqrt(Δt/N)·|DFT_k| must equal level/sqrt(2) (two-sided PSD
    // level²/2), so the DFT magnitude is level·sqrt(N/(2Δt)).
    let mag = spec.level * (n_drive as f64 / (2.0 * spec.dt)).sqrt();
    let mut buf = vec![C64::new(0.0, 0.0); n_drive];
    for k in 1..=(n_drive / 2) {
        let f = k as f64 / (n_drive as f64 * spec.dt);
        if f < spec.band.0 || f > spec.band.1 {
            continue;
        }
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let coeff = C64::new(phase.cos(), phase.sin()) * mag;
        buf[k] = coeff;
        // Hermitian mirror keeps the series real; band < Nyquist guarantees
        // k and N−k are distinct.
        buf[n_drive - k] = coeff.conj();
    }
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(n_drive);
    fft.process(&mut buf);
    let n_pre = spec.n_pre();
    for (j, v) in buf.iter().enumerate() {
        out[n_pre + j] = v.re / n_drive as f64;
    }
    Ok(out)
}

/// Exact discrete transition of one SDOF oscillator under piecewise-linear
/// input: precomputed matrices for the step
/// `z_{n+1} = A·z_n + c1·g_{n+1} + c0·g_n` with state `z = [η, η̇]`.
struct SdofStepper {
    a11: f64,
    a12: f64,
    a21: f64,
    a22: f64,
    c0: [f64; 2],
    c1: [f64; 2],
    two_zeta_omega: f64,
    omega_sq: f64,
}

impl SdofStepper {
    fn new(f: f64, zeta: f64, dt: f64) -> Self {
        let omega = std::f64::consts::TAU * f;
        let omega_d = omega * (1.0 - zeta * zeta).sqrt();
        let e = (-zeta * omega * dt).exp();
        let (s, c) = (omega_d * dt).sin_cos();
        let a11 = e * (c + zeta * omega * s / omega_d);
        let a12 = e * s / omega_d;
        let a21 = -omega * omega * a12;
        let a22 = e * (c - zeta * omega * s / omega_d);
        let w2 = omega * omega;
        // Second columns of M1 = Ac⁻¹(A−I) and M2 = Ac⁻¹(Δ·A − M1), with
        // Ac = [[0, 1], [−ω², −2ζω]] and Ac⁻¹ = (1/ω²)·[[−2ζω, −1], [ω², 0]].
        let m1_1 = (-2.0 * zeta * omega * a12 - (a22 - 1.0)) / w2;
        let m1_2 = a12;
        let t1 = dt * a12 - m1_1;
        let t2 = dt * a22 - m1_2;
        let m2_1 = (-2.0 * zeta * omega * t1 - t2) / w2;
        let m2_2 = t1;
        SdofStepper {
            a11,
            a12,
            a21,
            a22,
            c0: [m2_1 / dt, m2_2 / dt],
            c1: [m1_1 - m2_1 / dt, m1_2 - m2_2 / dt],
            two_zeta_omega: 2.0 * zeta * omega,
            omega_sq: w2,
        }
    }

    /// Marches the oscillator over the whole forcing series `g`, returning
    /// the response sampled as acceleration, velocity or displacement.
    fn march(&self, g: &[f64], kind: ResponseKind) -> Vec<f64> {
        let n = g.len();
        let mut out = vec![0.0; n];
        let (mut eta, mut eta_dot) = (0.0_f64, 0.0_f64);
        for j in 0..n {
            out[j] = match kind {
                ResponseKind::Acceleration => {
                    g[j] - self.two_zeta_omega * eta_dot - self.omega_sq * eta
                }
                ResponseKind::Velocity => eta_dot,
                ResponseKind::Displacement => eta,
            };
            if j + 1 < n {
                let (g0, g1) = (g[j], g[j + 1]);
                let new_eta = self.a11 * eta
                    + self.a12 * eta_dot
                    + self.c1[0] * g1
                    + self.c0[0] * g0;
                let new_dot = self.a21 * eta
                    + self.a22 * eta_dot
                    + self.c1[1] * g1
                    + self.c0[1] * g0;
                eta = new_eta;
                eta_dot = new_dot;
            }
        }
        out
    }
}

/// Simulates setup `r` for a given input time history (`n × d_s`): modal
/// superposition with exact SDOF integration, outputs restricted to the
/// setup's measured DOFs, input stored verbatim. Noise-free.
pub fn simulate_with_input(
    model: &TrueModalModel,
    plan: &TestPlan,
    r: usize,
    input: &DMatrix<f64>,
    dt: f64,
) -> Result<SetupRecord> {
    model.validate()?;
    plan.validate()?;
    if r >= plan.n_setups() {
        return Err(Error::invalid("simulate_with_input", format!("setup {r} out of range")));
    }
    if input.ncols() != plan.n_inputs {
        return Err(Error::invalid(
            "simulate_with_input",
            format!("{} input columns, plan expects {}", input.ncols(), plan.n_inputs),
        ));
    }
    if model.mpf.len() != plan.n_schemes() {
        return Err(Error::invalid(
            "simulate_with_input",
            "model scheme count does not match plan",
        ));
    }
    let n = input.nrows();
    let sel = &plan.sensor_selection[r];
    let lam = &model.mpf[plan.shaker_scheme_of_setup[r]];
    let mut output = DMatrix::zeros(n, sel.len());
    let mut g = vec![0.0; n];
    for i in 0..model.n_modes() {
        for (j, gj) in g.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..plan.n_inputs {
                acc += lam[(c, i)] * input[(j, c)];
            }
            *gj = acc;
        }
        let stepper = SdofStepper::new(model.freqs[i], model.dampings[i], dt);
        let eta = stepper.march(&g, model.response_kind);
        for (ch, &dof) in sel.iter().enumerate() {
            let phi = model.mode_shapes[(dof, i)];
            if phi == 0.0 {
                continue;
            }
            for j in 0..n {
                output[(j, ch)] += phi * eta[j];
            }
        }
    }
    Ok(SetupRecord {
        setup_index: r,
        dt,
        input: input.clone(),
        output,
        response_kind: model.response_kind,
    })
}

/// Simulates setup `r` under a flat-root-PSD shaker drive described by
/// `spec` (noise-free; add sensor noise with [`add_noise`]). With several
/// input channels each gets an independent phase realization.
pub fn simulate_setup(
    model: &TrueModalModel,
    plan: &TestPlan,
    r: usize,
    spec: &ExcitationSpec,
) -> Result<SetupRecord> {
    let n = spec.n_samples();
    let mut input = DMatrix::zeros(n, plan.n_inputs);
    for c in 0..plan.n_inputs {
        let chan_spec = ExcitationSpec {
            seed: spec.seed.wrapping_add(c as u64),
            ..spec.clone()
        };
        input.set_column(c, &flat_psd_excitation(&chan_spec)?);
    }
    simulate_with_input(model, plan, r, &input, spec.dt)
}

/// Adds Gaussian white measurement noise with the stated flat root PSDs
/// (g/√Hz) to every output channel and, when nonzero, every input channel.
/// Per the two-sided convention the per-sample variance is `level²/(2Δt)`.
pub fn add_noise(
    record: &SetupRecord,
    output_root_psd: f64,
    input_root_psd: f64,
    seed: u64,
) -> Result<SetupRecord> {
    if output_root_psd < 0.0 || input_root_psd < 0.0 {
        return Err(Error::invalid("add_noise", "noise levels must be nonnegative"));
    }
    let mut noisy = record.clone();
    if output_root_psd == 0.0 && input_root_psd == 0.0 {
        return Ok(noisy);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma_out = output_root_psd / (2.0 * record.dt).sqrt();
    if sigma_out > 0.0 {
        for ch in 0..noisy.output.ncols() {
            for j in 0..noisy.output.nrows() {
                let e: f64 = rng.sample(StandardNormal);
                noisy.output[(j, ch)] += sigma_out * e;
            }
        }
    }
    let sigma_in = input_root_psd / (2.0 * record.dt).sqrt();
    if sigma_in > 0.0 {
        for ch in 0..noisy.input.ncols() {
            for j in 0..noisy.input.nrows() {
                let e: f64 = rng.sample(StandardNormal);
                noisy.input[(j, ch)] += sigma_in * e;
            }
        }
    }
    Ok(noisy)
}
