//! Posterior uncertainty of the identified modal parameters.
//!
//! Around the MAP point the posterior is approximated by a Gaussian whose
//! covariance is the inverse of the NLLF Hessian restricted to the tangent
//! space of the mode-shape norm constraints `G_i(θ) = φ_iᵀφ_i − 1 = 0`:
//!
//! ```text
//! PCM = V (Vᵀ H V)⁻¹ Vᵀ,
//! ```
//!
//! where the columns of `V` span the nullspace of the constraint Jacobian.
//! The constrained directions carry no posterior mass — the norm of each
//! shape is fixed by convention, not informed by data — so the PCM is rank
//! `n_θ − m` with `PCM·∇Gᵀ = 0`.
//!
//! The module provides the scalar FRF derivatives ([`frf_derivatives`]), the
//! analytical Hessian assembly ([`hessian`]), the constraint nullspace basis
//! ([`nullspace_basis`]), the projected inverse ([`posterior_covariance`]),
//! and reporting helpers ([`summarize`], [`mac`]).

mod hessian;

pub use hessian::{hessian, BlockId, HessianBlocks};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::DescentTrace;
use crate::model::{ModalParameterSet, C64};

/// Value and first/second partial derivatives of the modal FRF
/// `h(f, ζ; f_k) = (2πi·f_k)^(−q) / [(1 − β²) − 2iζβ]`, `β = f/f_k`,
/// with respect to the natural frequency `f` and damping ratio `ζ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrfDerivatives {
    /// `h`
    pub h: C64,
    /// `∂h/∂f`
    pub h_f: C64,
    /// `∂h/∂ζ`
    pub h_z: C64,
    /// `∂²h/∂f²`
    pub h_ff: C64,
    /// `∂²h/∂ζ²`
    pub h_zz: C64,
    /// `∂²h/∂f∂ζ` (= `∂²h/∂ζ∂f`)
    pub h_fz: C64,
}

/// Closed-form FRF derivatives at bin frequency `f_k`.
///
/// Writing `g = (1 − β²) − 2iζβ` so that the `q = 0` FRF is `h₀ = 1/g`,
/// repeated differentiation of `h₀` through `g` gives
///
/// ```text
/// ∂h₀/∂f  = 2h₀²(β + iζ)/f_k,
/// ∂h₀/∂ζ  = 2iβh₀²,
/// ∂²h₀/∂f²  = 2h₀³(3β² + 1 − 4ζ² + 6iζβ)/f_k²,
/// ∂²h₀/∂ζ²  = −8β²h₀³,
/// ∂²h₀/∂f∂ζ = 2ih₀³(3β² + 1 + 2iζβ)/f_k,
/// ```
/// and the integration prefactor `(2πi·f_k)^(−q)` is independent of `(f, ζ)`,
/// so it multiplies all six quantities unchanged.
pub fn frf_derivatives(f: f64, zeta: f64, f_k: f64, q: u32) -> Result<FrfDerivatives> {
    if !(f > 0.0 && f.is_finite()) || !(f_k > 0.0 && f_k.is_finite()) {
        return Err(Error::invalid(
            "frf_derivatives",
            format!("frequencies must be positive and finite, got f = {f}, f_k = {f_k}"),
        ));
    }
    if !(zeta.abs() < 1.0) {
        return Err(Error::invalid(
            "frf_derivatives",
            format!("|zeta| must be below 1, got {zeta}"),
        ));
    }
    let beta = f / f_k;
    let g = C64::new(1.0 - beta * beta, -2.0 * zeta * beta);
    let h = C64::new(1.0, 0.0) / g;
    let h2 = h * h;
    let h3 = h2 * h;
    let i = C64::new(0.0, 1.0);
    let b_iz = C64::new(beta, zeta);
    let mut d = FrfDerivatives {
        h,
        h_f: 2.0 * h2 * b_iz / f_k,
        h_z: 2.0 * i * beta * h2,
        h_ff: 2.0 * h3 * C64::new(3.0 * beta * beta + 1.0 - 4.0 * zeta * zeta, 6.0 * zeta * beta)
            / (f_k * f_k),
        h_zz: -8.0 * beta * beta * h3,
        h_fz: 2.0 * i * h3 * C64::new(3.0 * beta * beta + 1.0, 2.0 * zeta * beta) / f_k,
    };
    if q > 0 {
        let pref = C64::new(0.0, 2.0 * std::f64::consts::PI * f_k).powu(q);
        d.h /= pref;
        d.h_f /= pref;
        d.h_z /= pref;
        d.h_ff /= pref;
        d.h_zz /= pref;
        d.h_fz /= pref;
    }
    for z in [d.h, d.h_f, d.h_z, d.h_ff, d.h_zz, d.h_fz] {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::FrfSingular { f, f_k });
        }
    }
    Ok(d)
}

/// Orthonormal basis of the nullspace of the constraint Jacobian `∇G` at
/// `theta`, as an `n_θ × (n_θ − m)` matrix.
///
/// Each constraint gradient lives entirely in the `d` coordinates of its own
/// mode shape, so the basis splits per mode: the `d − 1` trailing columns of
/// the Householder reflection mapping `e_1` onto `±φ_i/‖φ_i‖` span the
/// orthogonal complement of `φ_i` within its slot, and every remaining
/// coordinate (frequencies, dampings, MPFs, error PSDs) contributes an
/// identity column. Column order: modal block, per-mode shape complements,
/// MPF blocks, error PSDs.
pub fn nullspace_basis(theta: &ModalParameterSet) -> Result<DMatrix<f64>> {
    let layout = theta.layout();
    let (m, d) = (layout.m, layout.d);
    let n = layout.n_theta();
    let mut basis = DMatrix::<f64>::zeros(n, n - m);
    let mut col = 0;

    for i in 0..2 * m {
        basis[(i, col)] = 1.0;
        col += 1;
    }

    for b in 0..m {
        let phi = theta.mode_shapes.column(b);
        let norm = phi.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateMode { mode: b });
        }
        // Householder vector v = u + sign(u_1)·e_1 with u = φ/‖φ‖; the
        // reflector Q = I − 2vvᵀ/‖v‖² maps e_1 to ∓u, so its remaining
        // columns are an orthonormal basis of the complement of φ.
        let mut v = DVector::<f64>::zeros(d);
        for a in 0..d {
            v[a] = phi[a] / norm;
        }
        let s = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += s;
        let vnorm2 = v.norm_squared();
        for j in 1..d {
            for a in 0..d {
                let q_aj = f64::from(a == j) - 2.0 * v[a] * v[j] / vnorm2;
                basis[(layout.phi_index(a, b), col)] = q_aj;
            }
            col += 1;
        }
    }

    for i in layout.lambda_offset(0)..n {
        basis[(i, col)] = 1.0;
        col += 1;
    }
    debug_assert_eq!(col, n - m);
    Ok(basis)
}

/// Posterior covariance matrix `V(VᵀHV)⁻¹Vᵀ` from the NLLF Hessian and a
/// constraint-nullspace basis.
///
/// Fails with [`Error::NotAMinimum`] when the projected Hessian is not
/// positive definite — the expansion point is then a saddle or the band is
/// unidentifiable, and no Gaussian approximation exists.
pub fn posterior_covariance(hess: &HessianBlocks, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = hess.layout.n_theta();
    let m = hess.layout.m;
    if basis.nrows() != n || basis.ncols() != n - m {
        return Err(Error::invalid(
            "posterior_covariance",
            format!(
                "basis must be {} × {}, got {} × {}",
                n,
                n - m,
                basis.nrows(),
                basis.ncols()
            ),
        ));
    }
    let mut projected = basis.transpose() * &hess.matrix * basis;
    // The assembly fills both triangles from the same real expressions, but
    // the two matrix products above can leave last-ulp asymmetry.
    let pt = projected.transpose();
    projected = 0.5 * (projected + pt);
    let chol = nalgebra::Cholesky::new(projected).ok_or_else(|| Error::NotAMinimum {
        detail: "projected Hessian is not positive definite".to_string(),
    })?;
    let pcm = basis * chol.inverse() * basis.transpose();
    let pt = pcm.transpose();
    Ok(0.5 * (pcm + pt))
}

/// Modal assurance between two real shape vectors as the absolute cosine
/// `|aᵀb| / (‖a‖·‖b‖)`, so identical shapes score 1 regardless of sign and
/// orthogonal shapes score 0.
pub fn mac(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(
            "mac",
            format!("shape lengths differ: {} vs {}", a.len(), b.len()),
        ));
    }
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0) || !(nb > 0.0) {
        return Err(Error::invalid(
            "mac",
            "shape vectors must be nonzero".to_string(),
        ));
    }
    Ok((a.dot(b) / (na * nb)).abs())
}

/// Squared-cosine variant of [`mac`], for comparison with tools that report
/// the conventional quadratic form `(aᵀb)² / (aᵀa·bᵀb)`.
pub fn mac_squared(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    mac(a, b).map(|v| v * v)
}

/// Posterior summary of one identified band.
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    /// The MAP parameter set the covariance was expanded around.
    pub theta_hat: ModalParameterSet,
    /// Full posterior covariance matrix over the canonical layout.
    pub pcm: DMatrix<f64>,
    /// Per-mode coefficient of variation of the natural frequency.
    pub cov_f: Vec<f64>,
    /// Per-mode coefficient of variation of the damping ratio.
    pub cov_zeta: Vec<f64>,
    /// Per-mode shape uncertainty: square root of the trace of the shape's
    /// covariance sub-block (the shapes have unit norm, so this is already
    /// a coefficient of variation).
    pub cov_shape: Vec<f64>,
    /// Per-scheme, per-entry coefficient of variation of the MPFs, aligned
    /// with `theta_hat.mpf`.
    pub cov_mpf: Vec<DMatrix<f64>>,
    /// `(scheme, input, mode)` positions where the MAP MPF is zero and the
    /// matching `cov_mpf` entry therefore holds an absolute posterior
    /// standard deviation instead of a ratio.
    pub mpf_absolute_std: Vec<(usize, usize, usize)>,
    /// NLLF value at the MAP point.
    pub nllf_value: f64,
    /// Coordinate-descent convergence record.
    pub trace: DescentTrace,
}

/// Condenses a PCM into per-parameter coefficients of variation.
///
/// Variances are read off the PCM diagonal (tiny negative values from
/// roundoff are clamped to zero before the square root). A MAP MPF entry of
/// exactly zero has no meaningful ratio; its slot gets the absolute standard
/// deviation and is listed in `mpf_absolute_std`.
pub fn summarize(
    theta_hat: ModalParameterSet,
    pcm: DMatrix<f64>,
    nllf_value: f64,
    trace: DescentTrace,
) -> Result<PosteriorResult> {
    let layout = theta_hat.layout();
    let n = layout.n_theta();
    if pcm.nrows() != n || pcm.ncols() != n {
        return Err(Error::invalid(
            "summarize",
            format!("PCM must be {n} × {n}, got {} × {}", pcm.nrows(), pcm.ncols()),
        ));
    }
    let std_at = |idx: usize| pcm[(idx, idx)].max(0.0).sqrt();

    let mut cov_f = Vec::with_capacity(layout.m);
    let mut cov_zeta = Vec::with_capacity(layout.m);
    let mut cov_shape = Vec::with_capacity(layout.m);
    for i in 0..layout.m {
        cov_f.push(std_at(layout.freq_index(i)) / theta_hat.freqs[i]);
        cov_zeta.push(std_at(layout.damping_index(i)) / theta_hat.dampings[i]);
        let var: f64 = (0..layout.d)
            .map(|a| pcm[(layout.phi_index(a, i), layout.phi_index(a, i))].max(0.0))
            .sum();
        cov_shape.push(var.sqrt());
    }

    let mut cov_mpf = Vec::with_capacity(layout.n_s);
    let mut mpf_absolute_std = Vec::new();
    for s in 0..layout.n_s {
        let mut cv = DMatrix::<f64>::zeros(layout.d_s, layout.m);
        for i in 0..layout.m {
            for cch in 0..layout.d_s {
                let std = std_at(layout.lambda_index(s, cch, i));
                let map = theta_hat.mpf[s][(cch, i)];
                if map.abs() < f64::MIN_POSITIVE {
                    mpf_absolute_std.push((s, cch, i));
                    cv[(cch, i)] = std;
                } else {
                    cv[(cch, i)] = std / map.abs();
                }
            }
        }
        cov_mpf.push(cv);
    }

    Ok(PosteriorResult {
        theta_hat,
        pcm,
        cov_f,
        cov_zeta,
        cov_shape,
        cov_mpf,
        mpf_absolute_std,
        nllf_value,
        trace,
    })
}
