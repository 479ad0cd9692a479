//! Domain types and the frequency-domain forward model.
//!
//! The probabilistic model treats the scaled FFT of each setup's measured
//! response as complex Gaussian with mean
//!
//! ```text
//! Y_k^(r) = S^(r) · Φ · H_k^(r) · Λ^(s(r))ᵀ · Ü_k^(r)
//! ```
//!
//! and isotropic error PSD `S_e^(r)`. Here `S^(r)` selects the measured DOFs,
//! `Φ` holds the unit-norm global mode shapes, `H_k` is the diagonal matrix of
//! modal FRF values at bin `k`, `Λ^(s)` holds the modal participation factors
//! of shaker scheme `s`, and `Ü_k` is the scaled FFT of the measured input.
//!
//! This module owns the shared domain types, the FRF, the forward model, the
//! negative log-likelihood (NLLF), the unit-norm shape constraints, and the
//! commutation matrices used by the Hessian assembly.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = Complex<f64>;

/// Physical kind of the response channels; fixes the FRF integration order
/// `q` (0 for acceleration, 1 for velocity, 2 for displacement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Acceleration,
    Velocity,
    Displacement,
}

impl ResponseKind {
    /// FRF integration order for this response kind.
    pub fn q(self) -> u32 {
        match self {
            ResponseKind::Acceleration => 0,
            ResponseKind::Velocity => 1,
            ResponseKind::Displacement => 2,
        }
    }
}

/// Global description of a multi-setup test campaign: which DOFs each setup
/// measures and which shaker scheme excites it.
///
/// Setup `r` measures `sensor_selection[r]` (an ordered list of global DOF
/// indices, encoding the selection matrix `S^(r)`), and is excited by scheme
/// `shaker_scheme_of_setup[r]`. The inverse map (all setups sharing scheme
/// `s`) is available through [`TestPlan::setups_of_scheme`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    /// Number of distinct measured DOFs `d` (the union over all setups).
    pub n_dofs: usize,
    /// Number of input (shaker) channels `d_s`, common to all schemes.
    pub n_inputs: usize,
    /// Per setup: ordered global DOF indices measured by that setup.
    pub sensor_selection: Vec<Vec<usize>>,
    /// Per setup: index of the shaker scheme driving it.
    pub shaker_scheme_of_setup: Vec<usize>,
}

impl TestPlan {
    /// Builds a plan and checks every invariant.
    pub fn new(
        n_dofs: usize,
        n_inputs: usize,
        sensor_selection: Vec<Vec<usize>>,
        shaker_scheme_of_setup: Vec<usize>,
    ) -> Result<Self> {
        let plan = TestPlan {
            n_dofs,
            n_inputs,
            sensor_selection,
            shaker_scheme_of_setup,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Number of setups `n_r`.
    pub fn n_setups(&self) -> usize {
        self.sensor_selection.len()
    }

    /// Number of shaker schemes `n_s` (scheme indices are `0..n_s`).
    pub fn n_schemes(&self) -> usize {
        self.shaker_scheme_of_setup
            .iter()
            .max()
            .map_or(0, |&s| s + 1)
    }

    /// Number of channels `d_r` measured in setup `r`.
    pub fn d_r(&self, r: usize) -> usize {
        self.sensor_selection[r].len()
    }

    /// All setups excited by scheme `s` (the inverse of
    /// `shaker_scheme_of_setup`), in ascending setup order.
    pub fn setups_of_scheme(&self, s: usize) -> Vec<usize> {
        self.shaker_scheme_of_setup
            .iter()
            .enumerate()
            .filter(|&(_, &sch)| sch == s)
            .map(|(r, _)| r)
            .collect()
    }

    /// Checks all plan invariants.
    pub fn validate(&self) -> Result<()> {
        let n_r = self.sensor_selection.len();
        if n_r == 0 {
            return Err(Error::invalid("TestPlan", "no setups"));
        }
        if self.n_dofs == 0 || self.n_inputs == 0 {
            return Err(Error::invalid("TestPlan", "n_dofs and n_inputs must be positive"));
        }
        if self.shaker_scheme_of_setup.len() != n_r {
            return Err(Error::invalid(
                "TestPlan",
                format!(
                    "{} scheme assignments for {} setups",
                    self.shaker_scheme_of_setup.len(),
                    n_r
                ),
            ));
        }
        let mut covered = vec![false; self.n_dofs];
        for (r, sel) in self.sensor_selection.iter().enumerate() {
            if sel.is_empty() {
                return Err(Error::invalid("TestPlan", format!("setup {r} measures no DOFs")));
            }
            let mut seen = vec![false; self.n_dofs];
            for &dof in sel {
                if dof >= self.n_dofs {
                    return Err(Error::invalid(
                        "TestPlan",
                        format!("setup {r} references DOF {dof} out of 0..{}", self.n_dofs),
                    ));
                }
                if seen[dof] {
                    return Err(Error::invalid(
                        "TestPlan",
                        format!("setup {r} measures DOF {dof} twice"),
                    ));
                }
                seen[dof] = true;
                covered[dof] = true;
            }
        }
        if let Some(dof) = covered.iter().position(|&c| !c) {
            return Err(Error::invalid(
                "TestPlan",
                format!("global DOF {dof} is measured by no setup"),
            ));
        }
        let n_s = self.n_schemes();
        if n_s > n_r {
            return Err(Error::invalid(
                "TestPlan",
                format!("{n_s} shaker schemes exceed {n_r} setups"),
            ));
        }
        for s in 0..n_s {
            if self.setups_of_scheme(s).is_empty() {
                return Err(Error::invalid(
                    "TestPlan",
                    format!("shaker scheme {s} drives no setup (scheme indices must be contiguous)"),
                ));
            }
        }
        Ok(())
    }
}

/// Raw measured time histories of one setup.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupRecord {
    /// Index of this setup within the owning [`TestPlan`].
    pub setup_index: usize,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Shaker accelerations, `n_samples × d_s`.
    pub input: DMatrix<f64>,
    /// Measured responses, `n_samples × d_r`.
    pub output: DMatrix<f64>,
    /// Physical kind of the response channels.
    pub response_kind: ResponseKind,
}

impl SetupRecord {
    /// Number of samples per channel.
    pub fn n_samples(&self) -> usize {
        self.output.nrows()
    }

    /// Nyquist frequency in Hz.
    pub fn nyquist(&self) -> f64 {
        0.5 / self.dt
    }

    /// Checks record invariants against the owning plan.
    pub fn validate(&self, plan: &TestPlan) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("SetupRecord", "dt must be positive"));
        }
        if self.input.nrows() != self.output.nrows() {
            return Err(Error::invalid(
                "SetupRecord",
                format!(
                    "input has {} rows but output has {}",
                    self.input.nrows(),
                    self.output.nrows()
                ),
            ));
        }
        if self.input.nrows() < 2 {
            return Err(Error::invalid("SetupRecord", "fewer than 2 samples"));
        }
        if self.setup_index >= plan.n_setups() {
            return Err(Error::invalid(
                "SetupRecord",
                format!("setup index {} out of range", self.setup_index),
            ));
        }
        if self.input.ncols() != plan.n_inputs {
            return Err(Error::invalid(
                "SetupRecord",
                format!(
                    "{} input columns, plan expects {}",
                    self.input.ncols(),
                    plan.n_inputs
                ),
            ));
        }
        let d_r = plan.d_r(self.setup_index);
        if self.output.ncols() != d_r {
            return Err(Error::invalid(
                "SetupRecord",
                format!(
                    "{} output columns, plan expects {} for setup {}",
                    self.output.ncols(),
                    d_r,
                    self.setup_index
                ),
            ));
        }
        Ok(())
    }
}

/// A frequency band selected for identification, with the number of modes it
/// contains and optional user-supplied frequency seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    /// Lower band edge in Hz (exclusive).
    pub f_lo: f64,
    /// Upper band edge in Hz (exclusive).
    pub f_hi: f64,
    /// Number of modes `m` modeled inside the band.
    pub n_modes: usize,
    /// Optional seed frequencies; when present they override peak picking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_frequencies: Option<Vec<f64>>,
}

impl FrequencyBand {
    /// Checks band invariants. `nyquist` is the smallest Nyquist frequency
    /// over the setups the band will be applied to.
    pub fn validate(&self, nyquist: f64) -> Result<()> {
        if !(self.f_lo > 0.0 && self.f_lo < self.f_hi && self.f_hi < nyquist) {
            return Err(Error::invalid(
                "FrequencyBand",
                format!(
                    "need 0 < f_lo < f_hi < Nyquist, got ({}, {}) with Nyquist {}",
                    self.f_lo, self.f_hi, nyquist
                ),
            ));
        }
        if self.n_modes == 0 {
            return Err(Error::invalid("FrequencyBand", "n_modes must be at least 1"));
        }
        if let Some(seeds) = &self.init_frequencies {
            if seeds.len() != self.n_modes {
                return Err(Error::invalid(
                    "FrequencyBand",
                    format!("{} seeds for {} modes", seeds.len(), self.n_modes),
                ));
            }
            let inside = seeds.iter().all(|&f| f > self.f_lo && f < self.f_hi);
            let increasing = seeds.windows(2).all(|w| w[0] < w[1]);
            if !inside || !increasing {
                return Err(Error::invalid(
                    "FrequencyBand",
                    "init_frequencies must be strictly increasing and strictly inside the band",
                ));
            }
        }
        Ok(())
    }
}

/// Scaled-FFT ordinates of one setup restricted to a band.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupSpectra {
    /// Index of this setup within the owning [`TestPlan`].
    pub setup_index: usize,
    /// FFT bin indices `k` inside the band, ascending.
    pub bin_indices: Vec<usize>,
    /// Bin frequencies `f_k = k / (N · dt)` in Hz, aligned with `bin_indices`.
    pub freqs: Vec<f64>,
    /// Response ordinates, `n_bins × d_r`.
    pub y: DMatrix<C64>,
    /// Input ordinates, `n_bins × d_s`.
    pub u: DMatrix<C64>,
    /// FRF integration order `q` inherited from the record's response kind.
    pub q: u32,
}

impl SetupSpectra {
    /// Number of band bins `N_f` for this setup.
    pub fn n_bins(&self) -> usize {
        self.bin_indices.len()
    }
}

/// Band-limited spectra of every setup, the data the likelihood sees.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpectra {
    /// The band these spectra were extracted for.
    pub band: FrequencyBand,
    /// Per-setup ordinates, indexed by setup.
    pub setups: Vec<SetupSpectra>,
}

impl BandSpectra {
    /// Total complex data count `Σ_r d_r · N_f^(r)`.
    pub fn total_data_count(&self, plan: &TestPlan) -> usize {
        self.setups
            .iter()
            .map(|s| plan.d_r(s.setup_index) * s.n_bins())
            .sum()
    }
}

/// The full unknown parameter vector θ of one band: `m` frequencies and
/// damping ratios, the `d × m` mode-shape matrix, one `d_s × m` MPF matrix
/// per shaker scheme, and one error PSD per setup.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalParameterSet {
    /// Natural frequencies in Hz.
    pub freqs: Vec<f64>,
    /// Damping ratios (dimensionless, in `(0, 1)`).
    pub dampings: Vec<f64>,
    /// Mode shapes, `d × m`, unit-norm columns.
    pub mode_shapes: DMatrix<f64>,
    /// Modal participation factors, one `d_s × m` matrix per shaker scheme.
    pub mpf: Vec<DMatrix<f64>>,
    /// Prediction-error PSD per setup (positive).
    pub err_psd: Vec<f64>,
}

impl ModalParameterSet {
    /// Number of modes.
    pub fn n_modes(&self) -> usize {
        self.freqs.len()
    }

    /// Number of measured DOFs `d`.
    pub fn n_dofs(&self) -> usize {
        self.mode_shapes.nrows()
    }

    /// The layout describing how this set flattens into a vector.
    pub fn layout(&self) -> ParameterLayout {
        ParameterLayout {
            m: self.n_modes(),
            d: self.n_dofs(),
            d_s: self.mpf.first().map_or(0, |l| l.nrows()),
            n_s: self.mpf.len(),
            n_r: self.err_psd.len(),
        }
    }

    /// Checks the parameter-set invariants: unit-norm canonical-sign shape
    /// columns, damping in `(0, 1)`, frequencies inside `band` when given,
    /// positive error PSDs, consistent dimensions.
    pub fn validate(&self, band: Option<&FrequencyBand>) -> Result<()> {
        let m = self.n_modes();
        if m == 0 {
            return Err(Error::invalid("ModalParameterSet", "no modes"));
        }
        if self.dampings.len() != m || self.mode_shapes.ncols() != m {
            return Err(Error::invalid(
                "ModalParameterSet",
                "freqs, dampings and mode_shapes disagree on the mode count",
            ));
        }
        for lam in &self.mpf {
            if lam.ncols() != m {
                return Err(Error::invalid("ModalParameterSet", "MPF column count != m"));
            }
        }
        for (i, (&f, &z)) in self.freqs.iter().zip(&self.dampings).enumerate() {
            if !(f > 0.0) {
                return Err(Error::invalid(
                    "ModalParameterSet",
                    format!("mode {i} frequency must be positive"),
                ));
            }
            if !(z > 0.0 && z < 1.0) {
                return Err(Error::invalid(
                    "ModalParameterSet",
                    format!("mode {i} damping {z} outside (0, 1)"),
                ));
            }
            if let Some(b) = band {
                if !(f > b.f_lo && f < b.f_hi) {
                    return Err(Error::invalid(
                        "ModalParameterSet",
                        format!("mode {i} frequency {f} Hz outside band ({}, {})", b.f_lo, b.f_hi),
                    ));
                }
            }
        }
        for (r, &se) in self.err_psd.iter().enumerate() {
            if !(se > 0.0) {
                return Err(Error::invalid(
                    "ModalParameterSet",
                    format!("setup {r} error PSD must be positive"),
                ));
            }
        }
        for i in 0..m {
            let col = self.mode_shapes.column(i);
            let norm = col.norm();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(
                    "ModalParameterSet",
                    format!("mode {i} shape norm {norm} is not 1"),
                ));
            }
            // Canonical sign: the largest-magnitude entry must be positive.
            let (j, _) = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap();
            if col[j] < 0.0 {
                return Err(Error::invalid(
                    "ModalParameterSet",
                    format!("mode {i} shape is not sign-canonical"),
                ));
            }
        }
        Ok(())
    }

    /// Reorders the modes so the frequencies ascend, permuting dampings,
    /// shape columns and MPF columns in step. Mode order is a gauge freedom
    /// of the likelihood, so the forward model is unchanged.
    pub fn sort_modes_by_frequency(&mut self) {
        let m = self.n_modes();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.sort_by(|&a, &b| self.freqs[a].partial_cmp(&self.freqs[b]).unwrap());
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return;
        }
        self.freqs = perm.iter().map(|&p| self.freqs[p]).collect();
        self.dampings = perm.iter().map(|&p| self.dampings[p]).collect();
        let shapes = self.mode_shapes.clone();
        for (i, &p) in perm.iter().enumerate() {
            self.mode_shapes.set_column(i, &shapes.column(p));
        }
        for lam in &mut self.mpf {
            let old = lam.clone();
            for (i, &p) in perm.iter().enumerate() {
                lam.set_column(i, &old.column(p));
            }
        }
    }

    /// Flips the sign of every shape column whose largest-magnitude entry is
    /// negative, flipping the matching MPF columns so the forward model is
    /// unchanged.
    pub fn canonicalize_signs(&mut self) {
        for i in 0..self.n_modes() {
            let col = self.mode_shapes.column(i);
            let (j, _) = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap();
            if self.mode_shapes[(j, i)] < 0.0 {
                for a in 0..self.mode_shapes.nrows() {
                    self.mode_shapes[(a, i)] = -self.mode_shapes[(a, i)];
                }
                for lam in &mut self.mpf {
                    for c in 0..lam.nrows() {
                        lam[(c, i)] = -lam[(c, i)];
                    }
                }
            }
        }
    }
}

/// Canonical flattening of θ into a single vector:
/// `[f_1, ζ_1, …, f_m, ζ_m | vec(Φ) | vec(Λ^(0)) … vec(Λ^(n_s-1)) | S_e^(0) … S_e^(n_r-1)]`
/// with all matrices stacked column-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    /// Modes in the band.
    pub m: usize,
    /// Measured DOFs.
    pub d: usize,
    /// Input channels.
    pub d_s: usize,
    /// Shaker schemes.
    pub n_s: usize,
    /// Setups.
    pub n_r: usize,
}

impl ParameterLayout {
    /// Total parameter count `n_θ = 2m + dm + n_s·d_s·m + n_r`.
    pub fn n_theta(&self) -> usize {
        2 * self.m + self.d * self.m + self.n_s * self.d_s * self.m + self.n_r
    }

    /// Index of `f_i` in the flattened vector.
    pub fn freq_index(&self, i: usize) -> usize {
        2 * i
    }

    /// Index of `ζ_i` in the flattened vector.
    pub fn damping_index(&self, i: usize) -> usize {
        2 * i + 1
    }

    /// Offset of the `vec(Φ)` block.
    pub fn phi_offset(&self) -> usize {
        2 * self.m
    }

    /// Index of `Φ[a, b]` (DOF `a`, mode `b`).
    pub fn phi_index(&self, a: usize, b: usize) -> usize {
        self.phi_offset() + b * self.d + a
    }

    /// Offset of the `vec(Λ^(s))` block.
    pub fn lambda_offset(&self, s: usize) -> usize {
        2 * self.m + self.d * self.m + s * self.d_s * self.m
    }

    /// Index of `Λ^(s)[c, i]` (input `c`, mode `i`).
    pub fn lambda_index(&self, s: usize, c: usize, i: usize) -> usize {
        self.lambda_offset(s) + i * self.d_s + c
    }

    /// Index of `S_e^(r)`.
    pub fn se_index(&self, r: usize) -> usize {
        2 * self.m + self.d * self.m + self.n_s * self.d_s * self.m + r
    }

    /// Flattens a parameter set into the canonical vector.
    pub fn flatten(&self, theta: &ModalParameterSet) -> DVector<f64> {
        let mut v = DVector::zeros(self.n_theta());
        for i in 0..self.m {
            v[self.freq_index(i)] = theta.freqs[i];
            v[self.damping_index(i)] = theta.dampings[i];
        }
        for b in 0..self.m {
            for a in 0..self.d {
                v[self.phi_index(a, b)] = theta.mode_shapes[(a, b)];
            }
        }
        for s in 0..self.n_s {
            for i in 0..self.m {
                for c in 0..self.d_s {
                    v[self.lambda_index(s, c, i)] = theta.mpf[s][(c, i)];
                }
            }
        }
        for r in 0..self.n_r {
            v[self.se_index(r)] = theta.err_psd[r];
        }
        v
    }

    /// Rebuilds a parameter set from a flattened vector (inverse of
    /// [`ParameterLayout::flatten`]).
    pub fn unflatten(&self, v: &DVector<f64>) -> ModalParameterSet {
        assert_eq!(v.len(), self.n_theta(), "flattened vector length mismatch");
        let mut theta = ModalParameterSet {
            freqs: vec![0.0; self.m],
            dampings: vec![0.0; self.m],
            mode_shapes: DMatrix::zeros(self.d, self.m),
            mpf: vec![DMatrix::zeros(self.d_s, self.m); self.n_s],
            err_psd: vec![0.0; self.n_r],
        };
        for i in 0..self.m {
            theta.freqs[i] = v[self.freq_index(i)];
            theta.dampings[i] = v[self.damping_index(i)];
        }
        for b in 0..self.m {
            for a in 0..self.d {
                theta.mode_shapes[(a, b)] = v[self.phi_index(a, b)];
            }
        }
        for s in 0..self.n_s {
            for i in 0..self.m {
                for c in 0..self.d_s {
                    theta.mpf[s][(c, i)] = v[self.lambda_index(s, c, i)];
                }
            }
        }
        for r in 0..self.n_r {
            theta.err_psd[r] = v[self.se_index(r)];
        }
        theta
    }
}

/// The zero/one bookkeeping matrices that relate `vec` of a diagonal or
/// transposed matrix to `vec` of the original:
/// `vec(H) = L_d · diag(H)` for diagonal `H`, `vec(Φᵀ) = K_md · vec(Φ)`, and
/// `vec(Λᵀ) = K_ml · vec(Λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutationMatrices {
    /// `m² × m`, columns are `e_i ⊗ e_i`.
    pub l_d: DMatrix<f64>,
    /// `dm × dm` vec-transpose permutation for `d × m` matrices.
    pub k_md: DMatrix<f64>,
    /// `d_s·m × d_s·m` vec-transpose permutation for `d_s × m` matrices.
    pub k_ml: DMatrix<f64>,
}

impl CommutationMatrices {
    /// Builds the matrices for mode count `m`, DOF count `d`, inputs `d_s`.
    pub fn new(m: usize, d: usize, d_s: usize) -> Self {
        let mut l_d = DMatrix::zeros(m * m, m);
        for i in 0..m {
            l_d[(i * m + i, i)] = 1.0;
        }
        CommutationMatrices {
            l_d,
            k_md: Self::vec_transpose(d, m),
            k_ml: Self::vec_transpose(d_s, m),
        }
    }

    /// Permutation `K` with `vec(Aᵀ) = K · vec(A)` for `rows × cols` matrices:
    /// entry `A[a, b]` sits at `b·rows + a` in `vec(A)` and at `a·cols + b`
    /// in `vec(Aᵀ)`.
    fn vec_transpose(rows: usize, cols: usize) -> DMatrix<f64> {
        let n = rows * cols;
        let mut k = DMatrix::zeros(n, n);
        for a in 0..rows {
            for b in 0..cols {
                k[(a * cols + b, b * rows + a)] = 1.0;
            }
        }
        k
    }
}

/// Modal frequency response function
///
/// ```text
/// h = (2πi·f_k)^(−q) / [(1 − β²) − i·2ζβ],   β = f / f_k,
/// ```
///
/// relating the input acceleration to the modal response at bin frequency
/// `f_k` for a mode with natural frequency `f` and damping ratio `zeta`.
///
/// Negative `zeta` is admitted (it produces the complex conjugate for
/// `q = 0`, which conjugate-symmetry checks rely on); `|zeta| >= 1`,
/// non-positive frequencies and non-finite arguments are rejected.
pub fn frf_value(f: f64, zeta: f64, f_k: f64, q: u32) -> Result<C64> {
    if !(f > 0.0 && f.is_finite()) || !(f_k > 0.0 && f_k.is_finite()) {
        return Err(Error::invalid(
            "frf_value",
            format!("frequencies must be positive and finite, got f = {f}, f_k = {f_k}"),
        ));
    }
    if !(zeta.abs() < 1.0) {
        return Err(Error::invalid(
            "frf_value",
            format!("|zeta| must be below 1, got {zeta}"),
        ));
    }
    let beta = f / f_k;
    let denom = C64::new(1.0 - beta * beta, -2.0 * zeta * beta);
    let mut h = C64::new(1.0, 0.0) / denom;
    if q > 0 {
        // (2πi·f_k)^(−q): i^(−1) = −i, i^(−2) = −1.
        let base = C64::new(0.0, 2.0 * std::f64::consts::PI * f_k);
        h /= base.powu(q);
    }
    if !h.re.is_finite() || !h.im.is_finite() {
        return Err(Error::FrfSingular { f, f_k });
    }
    Ok(h)
}

/// Predicted response ordinates `Y_k = S^(r)·Φ·H_k·Λ^(s(r))ᵀ·Ü_k` for every
/// band bin of setup `r`, as an `n_bins × d_r` matrix. Shared workhorse for
/// [`predicted_fft`], the NLLF and the coordinate-descent updates.
pub fn predicted_block(
    theta: &ModalParameterSet,
    plan: &TestPlan,
    sp: &SetupSpectra,
    r: usize,
) -> Result<DMatrix<C64>> {
    let m = theta.n_modes();
    let sel = &plan.sensor_selection[r];
    let lam = &theta.mpf[plan.shaker_scheme_of_setup[r]];
    let n_bins = sp.n_bins();
    let mut y = DMatrix::zeros(n_bins, sel.len());
    for k in 0..n_bins {
        for i in 0..m {
            let h = frf_value(theta.freqs[i], theta.dampings[i], sp.freqs[k], sp.q)?;
            // v_i = λ_iᵀ Ü_k
            let mut v = C64::new(0.0, 0.0);
            for c in 0..lam.nrows() {
                v += lam[(c, i)] * sp.u[(k, c)];
            }
            let w = h * v;
            for (ch, &dof) in sel.iter().enumerate() {
                y[(k, ch)] += theta.mode_shapes[(dof, i)] * w;
            }
        }
    }
    Ok(y)
}

/// Predicted response FFT at band bin `k` (an index into
/// `spectra.setups[r].bin_indices`) of setup `r`.
pub fn predicted_fft(
    theta: &ModalParameterSet,
    plan: &TestPlan,
    spectra: &BandSpectra,
    r: usize,
    k: usize,
) -> Result<DVector<C64>> {
    let sp = &spectra.setups[r];
    if k >= sp.n_bins() {
        return Err(Error::invalid(
            "predicted_fft",
            format!("bin index {k} out of range for setup {r} ({} band bins)", sp.n_bins()),
        ));
    }
    let m = theta.n_modes();
    let sel = &plan.sensor_selection[r];
    let lam = &theta.mpf[plan.shaker_scheme_of_setup[r]];
    let mut y = DVector::zeros(sel.len());
    for i in 0..m {
        let h = frf_value(theta.freqs[i], theta.dampings[i], sp.freqs[k], sp.q)?;
        let mut v = C64::new(0.0, 0.0);
        for c in 0..lam.nrows() {
            v += lam[(c, i)] * sp.u[(k, c)];
        }
        let w = h * v;
        for (ch, &dof) in sel.iter().enumerate() {
            y[ch] += theta.mode_shapes[(dof, i)] * w;
        }
    }
    Ok(y)
}

/// Sum of squared residual magnitudes `Σ_k ‖Ŷ_k − Y_k‖²` for setup `r`.
pub fn residual_sumsq(
    theta: &ModalParameterSet,
    plan: &TestPlan,
    sp: &SetupSpectra,
    r: usize,
) -> Result<f64> {
    let pred = predicted_block(theta, plan, sp, r)?;
    let mut total = 0.0;
    for k in 0..sp.y.nrows() {
        for ch in 0..sp.y.ncols() {
            total += (sp.y[(k, ch)] - pred[(k, ch)]).norm_sqr();
        }
    }
    Ok(total)
}

/// Negative log-likelihood of the band data:
///
/// ```text
/// L(θ) = Σ_r d_r·N_f^(r)·ln π + Σ_r d_r·N_f^(r)·ln S_e^(r)
///      + Σ_r S_e^(r)⁻¹ Σ_k ‖Ŷ_k^(r) − Y_k^(r)‖².
/// ```
pub fn nllf(theta: &ModalParameterSet, plan: &TestPlan, spectra: &BandSpectra) -> Result<f64> {
    let mut total = 0.0;
    for sp in &spectra.setups {
        let r = sp.setup_index;
        let se = theta.err_psd[r];
        if !(se > 0.0) {
            return Err(Error::invalid(
                "nllf",
                format!("setup {r} error PSD must be positive, got {se}"),
            ));
        }
        let d_r = plan.d_r(r) as f64;
        let n_f = sp.n_bins() as f64;
        total += d_r * n_f * (std::f64::consts::PI.ln() + se.ln());
        total += residual_sumsq(theta, plan, sp, r)? / se;
    }
    Ok(total)
}

/// Unit-norm constraint values `G_i = φ_iᵀφ_i − 1`, one per mode.
pub fn constraint_values(theta: &ModalParameterSet) -> DVector<f64> {
    let m = theta.n_modes();
    let mut g = DVector::zeros(m);
    for i in 0..m {
        g[i] = theta.mode_shapes.column(i).norm_squared() - 1.0;
    }
    g
}

/// Jacobian of the constraints over the flattened parameter vector: row `i`
/// holds `2·φ_iᵀ` in the slots of `φ_i` and zero elsewhere (`m × n_θ`).
pub fn constraint_jacobian(theta: &ModalParameterSet) -> DMatrix<f64> {
    let layout = theta.layout();
    let mut jac = DMatrix::zeros(layout.m, layout.n_theta());
    for i in 0..layout.m {
        for a in 0..layout.d {
            jac[(i, layout.phi_index(a, i))] = 2.0 * theta.mode_shapes[(a, i)];
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn frf_resonance_is_imaginary() {
        // At β = 1 the FRF reduces to i/(2ζ): with ζ = 0.02 that is 25i.
        let h = frf_value(1.0, 0.02, 1.0, 0).unwrap();
        assert!((h - c(0.0, 25.0)).norm() < 1e-12, "h = {h}");
    }

    #[test]
    fn frf_static_limit_is_one() {
        // β → 0: the acceleration FRF tends to 1 + 0i.
        let h = frf_value(1.0, 0.02, 1e9, 0).unwrap();
        assert!((h - c(1.0, 0.0)).norm() < 1e-8, "h = {h}");
    }

    #[test]
    fn frf_matches_direct_evaluation() {
        // Independently computed by direct evaluation of the closed form
        // (see the frozen oracle value): f = 1.22, ζ = 0.02, f_k = 1.00.
        let h = frf_value(1.22, 0.02, 1.00, 0).unwrap();
        let expect = c(-2.027262614355211, 0.20256022846137248);
        assert!((h - expect).norm() < 1e-14, "h = {h}");
    }

    #[test]
    fn frf_integration_orders() {
        // q = 1 and q = 2 divide by (2πi·f_k) once and twice.
        let h0 = frf_value(1.22, 0.02, 1.0, 0).unwrap();
        let h1 = frf_value(1.22, 0.02, 1.0, 1).unwrap();
        let h2 = frf_value(1.22, 0.02, 1.0, 2).unwrap();
        let base = c(0.0, 2.0 * std::f64::consts::PI);
        assert!((h1 - h0 / base).norm() < 1e-14);
        assert!((h2 - h0 / (base * base)).norm() < 1e-14);
        // Frozen oracle cross-check for q = 1.
        assert!((h1 - c(0.03223846163345106, 0.3226488660200306)).norm() < 1e-14);
    }

    #[test]
    fn frf_rejects_zero_damping_at_resonance() {
        match frf_value(1.0, 0.0, 1.0, 0) {
            Err(Error::FrfSingular { .. }) => {}
            other => panic!("expected FrfSingular, got {other:?}"),
        }
    }

    #[test]
    fn layout_roundtrip_is_bit_exact() {
        let layout = ParameterLayout { m: 2, d: 3, d_s: 1, n_s: 2, n_r: 3 };
        assert_eq!(layout.n_theta(), 2 * 2 + 3 * 2 + 2 * 1 * 2 + 3);
        let theta = ModalParameterSet {
            freqs: vec![1.25, 1.5],
            dampings: vec![0.02, 0.013],
            mode_shapes: DMatrix::from_column_slice(3, 2, &[0.6, 0.64, 0.48, -0.1, 0.7, -0.2]),
            mpf: vec![
                DMatrix::from_column_slice(1, 2, &[0.004, -0.002]),
                DMatrix::from_column_slice(1, 2, &[0.001, 0.003]),
            ],
            err_psd: vec![1e-10, 2e-10, 3e-10],
        };
        let v = layout.flatten(&theta);
        let back = layout.unflatten(&v);
        assert_eq!(theta, back);
        // Spot-check the block order: θ_m first, then Φ column-major.
        assert_eq!(v[0], 1.25);
        assert_eq!(v[1], 0.02);
        assert_eq!(v[layout.phi_index(1, 0)], 0.64);
        assert_eq!(v[layout.lambda_index(1, 0, 1)], 0.003);
        assert_eq!(v[layout.se_index(2)], 3e-10);
    }

    #[test]
    fn commutation_identities() {
        let cm = CommutationMatrices::new(3, 4, 2);
        // L_dᵀ L_d = I_m.
        let ltl = cm.l_d.transpose() * &cm.l_d;
        assert_eq!(ltl, DMatrix::identity(3, 3));
        // vec(H) = L_d·diag for diagonal H.
        let diag = DVector::from_vec(vec![2.0, -1.0, 0.5]);
        let vec_h = &cm.l_d * &diag;
        let h = DMatrix::from_diagonal(&diag);
        let vec_direct = DVector::from_column_slice(h.as_slice());
        assert_eq!(vec_h, vec_direct);
        // K_md moves vec(Φ) to vec(Φᵀ); applying the transpose twice returns
        // the original.
        let phi = DMatrix::from_fn(4, 3, |a, b| (a * 3 + b) as f64 + 0.25);
        let vec_phi = DVector::from_column_slice(phi.as_slice());
        let vec_phit = DVector::from_column_slice(phi.transpose().as_slice());
        assert_eq!(&cm.k_md * &vec_phi, vec_phit);
        assert_eq!(cm.k_md.transpose() * (&cm.k_md * &vec_phi), vec_phi);
        // Permutation matrices: every row and column has exactly one 1.
        for j in 0..cm.k_ml.ncols() {
            assert_eq!(cm.k_ml.column(j).sum(), 1.0);
            assert_eq!(cm.k_ml.row(j).sum(), 1.0);
        }
    }

    fn small_instance() -> (ModalParameterSet, TestPlan, BandSpectra) {
        // d = 3 global DOFs, setup 0 measures {0, 2}, setup 1 covers the
        // remaining DOF 1; one scheme, m = 2 modes, one input channel, one
        // band bin at 1.25 Hz per setup. Setup 1 carries zero input so it
        // contributes only its log term to the NLLF.
        let plan = TestPlan::new(3, 1, vec![vec![0, 2], vec![1]], vec![0, 0]).unwrap();
        let theta = ModalParameterSet {
            freqs: vec![1.22, 1.40],
            dampings: vec![0.02, 0.015],
            mode_shapes: DMatrix::from_column_slice(3, 2, &[0.6, 0.64, 0.48, -0.1, 0.7, -0.2]),
            mpf: vec![DMatrix::from_column_slice(1, 2, &[0.004, -0.002])],
            err_psd: vec![1.0, 1.0],
        };
        let band = FrequencyBand { f_lo: 1.0, f_hi: 1.6, n_modes: 2, init_frequencies: None };
        let sp0 = SetupSpectra {
            setup_index: 0,
            bin_indices: vec![5],
            freqs: vec![1.25],
            y: DMatrix::zeros(1, 2),
            u: DMatrix::from_element(1, 1, c(0.3, -0.8)),
            q: 0,
        };
        let sp1 = SetupSpectra {
            setup_index: 1,
            bin_indices: vec![5],
            freqs: vec![1.25],
            y: DMatrix::zeros(1, 1),
            u: DMatrix::zeros(1, 1),
            q: 0,
        };
        (theta, plan, BandSpectra { band, setups: vec![sp0, sp1] })
    }

    #[test]
    fn predicted_fft_matches_mode_by_mode_oracle() {
        // Frozen oracle: mode-by-mode superposition Σ_i (Sφ_i)·h_i·(λ_iᵀÜ)
        // evaluated independently for this exact instance.
        let (theta, plan, spectra) = small_instance();
        let y = predicted_fft(&theta, &plan, &spectra, 0, 0).unwrap();
        let expect = [
            c(0.028765163888053474, -0.016033625533072238),
            c(0.022831935169225145, -0.012048383981391311),
        ];
        for (got, want) in y.iter().zip(expect.iter()) {
            assert!((got - want).norm() < 1e-15, "got {got}, want {want}");
        }
    }

    #[test]
    fn predicted_fft_zero_mpf_gives_zero() {
        let (mut theta, plan, spectra) = small_instance();
        theta.mpf[0].fill(0.0);
        let y = predicted_fft(&theta, &plan, &spectra, 0, 0).unwrap();
        assert!(y.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn predicted_fft_rank_one_at_resonance() {
        // Single mode evaluated at its resonance bin: the output is the
        // selected shape scaled by i·(λᵀÜ)/(2ζ).
        let plan = TestPlan::new(3, 1, vec![vec![0, 1, 2]], vec![0]).unwrap();
        let phi = DVector::from_vec(vec![0.6, 0.64, 0.48]).normalize();
        let theta = ModalParameterSet {
            freqs: vec![1.22],
            dampings: vec![0.02],
            mode_shapes: DMatrix::from_column_slice(3, 1, phi.as_slice()),
            mpf: vec![DMatrix::from_element(1, 1, 0.0035)],
            err_psd: vec![1.0],
        };
        let band = FrequencyBand { f_lo: 1.0, f_hi: 1.6, n_modes: 1, init_frequencies: None };
        let u = c(0.4, 0.9);
        let sp = SetupSpectra {
            setup_index: 0,
            bin_indices: vec![7],
            freqs: vec![1.22],
            y: DMatrix::zeros(1, 3),
            u: DMatrix::from_element(1, 1, u),
            q: 0,
        };
        let spectra = BandSpectra { band, setups: vec![sp] };
        let y = predicted_fft(&theta, &plan, &spectra, 0, 0).unwrap();
        let scale = c(0.0, 1.0) * 0.0035 * u / c(2.0 * 0.02, 0.0);
        for a in 0..3 {
            assert!((y[a] - phi[a] * scale).norm() < 1e-12);
        }
    }

    #[test]
    fn nllf_zero_residual_reduces_to_log_terms() {
        let (theta, plan, mut spectra) = small_instance();
        // Make the data equal the prediction: residuals vanish. Setup 0 has
        // d_r·N_f = 2, setup 1 has 1, and both error PSDs are 1.
        let pred = predicted_block(&theta, &plan, &spectra.setups[0], 0).unwrap();
        spectra.setups[0].y = pred;
        let l = nllf(&theta, &plan, &spectra).unwrap();
        let expect = 3.0 * std::f64::consts::PI.ln();
        assert!((l - expect).abs() < 1e-12, "l = {l}, expect = {expect}");
    }

    #[test]
    fn nllf_scalar_instance_matches_hand_expansion() {
        // One setup, one bin, one channel, residual a = 0.7 − 0.4i, S_e = 1:
        // L = ln π + |a|². Frozen oracle value.
        let plan = TestPlan::new(1, 1, vec![vec![0]], vec![0]).unwrap();
        let theta = ModalParameterSet {
            freqs: vec![1.0],
            dampings: vec![0.02],
            mode_shapes: DMatrix::from_element(1, 1, 1.0),
            mpf: vec![DMatrix::from_element(1, 1, 0.0)],
            err_psd: vec![1.0],
        };
        let band = FrequencyBand { f_lo: 0.5, f_hi: 1.5, n_modes: 1, init_frequencies: None };
        let sp = SetupSpectra {
            setup_index: 0,
            bin_indices: vec![1],
            freqs: vec![1.0],
            y: DMatrix::from_element(1, 1, c(0.7, -0.4)),
            u: DMatrix::from_element(1, 1, c(0.0, 0.0)),
            q: 0,
        };
        let spectra = BandSpectra { band, setups: vec![sp] };
        let l = nllf(&theta, &plan, &spectra).unwrap();
        assert!((l - 1.7947298858494001).abs() < 1e-14, "l = {l}");
    }

    #[test]
    fn constraints_and_jacobian() {
        let (mut theta, _, _) = small_instance();
        // Unit-norm columns → G = 0.
        for i in 0..2 {
            let n = theta.mode_shapes.column(i).norm();
            for a in 0..3 {
                theta.mode_shapes[(a, i)] /= n;
            }
        }
        let g = constraint_values(&theta);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        // φ_0 = 2·unit vector → G_0 = 3.
        for a in 0..3 {
            theta.mode_shapes[(a, 0)] *= 2.0;
        }
        let g = constraint_values(&theta);
        assert!((g[0] - 3.0).abs() < 1e-12);
        // Jacobian rows hold 2φ_iᵀ in the φ_i slots, zero elsewhere.
        let layout = theta.layout();
        let jac = constraint_jacobian(&theta);
        assert_eq!(jac.nrows(), 2);
        assert_eq!(jac.ncols(), layout.n_theta());
        for i in 0..2 {
            for a in 0..3 {
                let expect = 2.0 * theta.mode_shapes[(a, i)];
                assert_eq!(jac[(i, layout.phi_index(a, i))], expect);
                let other = layout.phi_index(a, 1 - i);
                assert_eq!(jac[(i, other)], 0.0);
            }
            assert_eq!(jac[(i, layout.freq_index(i))], 0.0);
        }
    }

    #[test]
    fn plan_validation_catches_bad_inputs() {
        // DOF 1 never measured.
        assert!(TestPlan::new(2, 1, vec![vec![0]], vec![0]).is_err());
        // Scheme indices must be contiguous.
        assert!(TestPlan::new(1, 1, vec![vec![0], vec![0]], vec![0, 2]).is_err());
        // More schemes than setups is impossible by construction of the map,
        // but duplicated DOFs inside one setup are caught.
        assert!(TestPlan::new(2, 1, vec![vec![0, 0], vec![1]], vec![0, 0]).is_err());
        // A valid plan passes and derives the inverse map.
        let plan = TestPlan::new(2, 1, vec![vec![0], vec![1], vec![0, 1]], vec![0, 1, 0]).unwrap();
        assert_eq!(plan.setups_of_scheme(0), vec![0, 2]);
        assert_eq!(plan.setups_of_scheme(1), vec![1]);
        assert_eq!(plan.n_schemes(), 2);
    }

    #[test]
    fn sign_canonicalization_flips_shape_and_mpf_together() {
        let (mut theta, _, _) = small_instance();
        // Column 1 has largest-magnitude entry 0.7 (positive) — flip it to
        // make the column non-canonical.
        for a in 0..3 {
            theta.mode_shapes[(a, 1)] = -theta.mode_shapes[(a, 1)];
        }
        let before = theta.mpf[0][(0, 1)];
        theta.canonicalize_signs();
        assert!(theta.mode_shapes[(1, 1)] > 0.0);
        assert_eq!(theta.mpf[0][(0, 1)], -before);
    }

    #[test]
    fn mode_sort_permutes_every_per_mode_quantity_together() {
        let (mut theta, plan, spectra) = small_instance();
        // Swap the two modes by hand: the NLLF must not see the difference,
        // and sorting must restore the original labelling exactly.
        let sorted = theta.clone();
        let l_sorted = nllf(&sorted, &plan, &spectra).unwrap();
        theta.freqs.swap(0, 1);
        theta.dampings.swap(0, 1);
        theta.mode_shapes.swap_columns(0, 1);
        for lam in &mut theta.mpf {
            lam.swap_columns(0, 1);
        }
        let l_swapped = nllf(&theta, &plan, &spectra).unwrap();
        assert!(
            (l_swapped - l_sorted).abs() <= 1e-14 * l_sorted.abs(),
            "NLLF must be permutation-invariant: {l_swapped} vs {l_sorted}"
        );
        theta.sort_modes_by_frequency();
        assert_eq!(theta, sorted);
    }
}
