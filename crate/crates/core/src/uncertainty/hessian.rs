//! Analytical Hessian of the negative log-likelihood at a parameter point.
//!
//! The NLLF is a sum of per-setup Gaussian terms
//!
//! ```text
//! L = Σ_r [ d_r·N_f·ln π + d_r·N_f·ln S_e^(r) + S_e^(r)⁻¹ Σ_k ‖E_k‖² ],
//! E_k = Ŷ_k − Y_k(θ),   Y_k = S^(r)·Φ·H_k·Λ^(s(r))ᵀ·Ü_k,
//! ```
//!
//! so every second derivative with respect to the structural parameters
//! (frequencies, dampings, shapes, MPFs) takes the Gauss–Newton-plus-curvature
//! form
//!
//! ```text
//! ∂²L/∂x∂y = Σ_r 2·S_e⁻¹ Σ_k Re{ (∂Y_k/∂y)ᴴ(∂Y_k/∂x) − (∂²Y_k/∂x∂y)ᴴ E_k },
//! ```
//!
//! where `Y_k` is linear in Φ and Λ separately (their pure second derivatives
//! vanish) and enters the modal parameters only through the scalar FRFs, whose
//! closed-form derivatives come from [`frf_derivatives`]. The `S_e` rows add
//!
//! ```text
//! ∂²L/∂S_e² = −d_r·N_f·S_e⁻² + 2·S_e⁻³ Σ_k ‖E_k‖²,
//! ∂²L/∂S_e∂x = 2·S_e⁻² Re Σ_k E_kᴴ (∂Y_k/∂x).
//! ```
//!
//! Because each setup touches only its own scheme's MPF slots and its own
//! error PSD, cross-blocks between distinct schemes and distinct setups are
//! structurally zero.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{BandSpectra, ModalParameterSet, ParameterLayout, TestPlan, C64};
use crate::uncertainty::frf_derivatives;

/// Named regions of the flattened parameter vector, used to address
/// sub-blocks of the Hessian and the posterior covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    /// The `2m` frequency/damping coordinates.
    Modal,
    /// The `d·m` mode-shape coordinates.
    Shapes,
    /// The `d_s·m` MPF coordinates of scheme `s`.
    Mpf(usize),
    /// The single error-PSD coordinate of setup `r`.
    ErrPsd(usize),
}

/// Symmetric second-derivative matrix of the NLLF over the canonical
/// [`ParameterLayout`], with named block access.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    /// Layout mapping parameters to rows/columns.
    pub layout: ParameterLayout,
    /// Full `n_θ × n_θ` matrix.
    pub matrix: DMatrix<f64>,
}

impl HessianBlocks {
    /// Column/row range covered by a named block.
    pub fn range(&self, id: BlockId) -> std::ops::Range<usize> {
        let l = &self.layout;
        match id {
            BlockId::Modal => 0..2 * l.m,
            BlockId::Shapes => l.phi_offset()..l.phi_offset() + l.d * l.m,
            BlockId::Mpf(s) => {
                let lo = l.lambda_offset(s);
                lo..lo + l.d_s * l.m
            }
            BlockId::ErrPsd(r) => l.se_index(r)..l.se_index(r) + 1,
        }
    }

    /// Copy of the `(row, col)` named sub-block.
    pub fn block(&self, row: BlockId, col: BlockId) -> DMatrix<f64> {
        let rr = self.range(row);
        let cc = self.range(col);
        self.matrix
            .view((rr.start, cc.start), (rr.len(), cc.len()))
            .into_owned()
    }
}

/// Region name for diagnostics, given a flattened parameter index.
fn region_name(layout: &ParameterLayout, idx: usize) -> &'static str {
    if idx < layout.phi_offset() {
        "modal (f, zeta)"
    } else if idx < layout.lambda_offset(0) {
        "mode shapes"
    } else if idx < layout.se_index(0) {
        "modal participation factors"
    } else {
        "error PSD"
    }
}

/// Assembles the full NLLF Hessian at `theta`.
///
/// `theta` is typically (but not necessarily) the MAP point; the closed forms
/// hold at any admissible parameter value, which is what lets finite-difference
/// probes validate the assembly away from the optimum.
pub fn hessian(
    theta: &ModalParameterSet,
    spectra: &BandSpectra,
    plan: &TestPlan,
) -> Result<HessianBlocks> {
    crate::estimator::check_shapes(theta, plan, spectra)?;
    let layout = theta.layout();
    let n = layout.n_theta();
    let m = layout.m;
    let mut hm = DMatrix::<f64>::zeros(n, n);

    for sp in &spectra.setups {
        let r = sp.setup_index;
        let s = plan.shaker_scheme_of_setup[r];
        let sel = &plan.sensor_selection[r];
        let d_r = sel.len();
        let n_f = sp.n_bins();
        let lam = &theta.mpf[s];
        let d_s = lam.nrows();
        let se = theta.err_psd[r];
        if !(se > 0.0) {
            return Err(Error::invalid(
                "hessian",
                format!("setup {r} error PSD must be positive, got {se}"),
            ));
        }
        let inv_se = 1.0 / se;
        let two_inv_se = 2.0 * inv_se;

        // P = S^(r)·Φ (d_r × m, real) and its Gram matrix G = PᵀP.
        let mut p = DMatrix::<f64>::zeros(d_r, m);
        for (ch, &dof) in sel.iter().enumerate() {
            for j in 0..m {
                p[(ch, j)] = theta.mode_shapes[(dof, j)];
            }
        }
        let gram = p.transpose() * &p;

        // Running sums for the S_e row of this setup.
        let mut sum_e2 = 0.0;
        let mut se_modal = vec![0.0; 2 * m];
        let mut se_phi = DMatrix::<f64>::zeros(d_r, m);
        let mut se_lam = DMatrix::<f64>::zeros(d_s, m);

        // Per-bin work vectors.
        let mut v = vec![C64::new(0.0, 0.0); m]; // λ_jᵀ·Ü_k
        let mut w = vec![C64::new(0.0, 0.0); m]; // h_j·v_j
        let mut e = vec![C64::new(0.0, 0.0); d_r]; // residual E_k
        let mut ep = vec![C64::new(0.0, 0.0); m]; // p_jᵀ·E_k

        for k in 0..n_f {
            let f_k = sp.freqs[k];
            let derivs: Vec<_> = (0..m)
                .map(|j| frf_derivatives(theta.freqs[j], theta.dampings[j], f_k, sp.q))
                .collect::<Result<_>>()?;
            let h: Vec<C64> = derivs.iter().map(|d| d.h).collect();
            // First derivative of h_j with respect to coordinate α (0 = f, 1 = ζ).
            let d1 = |j: usize, alpha: usize| {
                if alpha == 0 {
                    derivs[j].h_f
                } else {
                    derivs[j].h_z
                }
            };
            let d2 = |j: usize, alpha: usize, beta: usize| match (alpha, beta) {
                (0, 0) => derivs[j].h_ff,
                (1, 1) => derivs[j].h_zz,
                _ => derivs[j].h_fz,
            };

            for j in 0..m {
                v[j] = (0..d_s).map(|c| lam[(c, j)] * sp.u[(k, c)]).sum();
                w[j] = h[j] * v[j];
            }
            for ch in 0..d_r {
                let mut y_pred = C64::new(0.0, 0.0);
                for j in 0..m {
                    y_pred += p[(ch, j)] * w[j];
                }
                e[ch] = sp.y[(k, ch)] - y_pred;
            }
            for j in 0..m {
                ep[j] = (0..d_r).map(|ch| p[(ch, j)] * e[ch]).sum();
            }
            sum_e2 += e.iter().map(|z| z.norm_sqr()).sum::<f64>();

            // --- modal × modal -------------------------------------------
            for j in 0..m {
                for alpha in 0..2 {
                    let xi = 2 * j + alpha;
                    let jx = d1(j, alpha) * v[j];
                    for l in 0..m {
                        for beta in 0..2 {
                            let yi = 2 * l + beta;
                            let jy = d1(l, beta) * v[l];
                            let mut val = (jx * jy.conj()).re * gram[(l, j)];
                            if j == l {
                                val -= ((d2(j, alpha, beta) * v[j]).conj() * ep[j]).re;
                            }
                            hm[(xi, yi)] += two_inv_se * val;
                        }
                    }
                    se_modal[xi] += (jx * ep[j].conj()).re;
                }
            }

            // --- shapes × shapes (diagonal in the DOF index) -------------
            for (ch, &dof) in sel.iter().enumerate() {
                for b in 0..m {
                    let xi = layout.phi_index(dof, b);
                    for b2 in 0..m {
                        let yi = layout.phi_index(dof, b2);
                        hm[(xi, yi)] += two_inv_se * (w[b] * w[b2].conj()).re;
                    }
                    se_phi[(ch, b)] += (e[ch].conj() * w[b]).re;
                }
            }

            // --- MPFs × MPFs (own scheme only) ----------------------------
            for dmode in 0..m {
                for c in 0..d_s {
                    let xi = layout.lambda_index(s, c, dmode);
                    let jx = h[dmode] * sp.u[(k, c)];
                    for d2m in 0..m {
                        for c2 in 0..d_s {
                            let yi = layout.lambda_index(s, c2, d2m);
                            let jy = h[d2m] * sp.u[(k, c2)];
                            hm[(xi, yi)] += two_inv_se * gram[(d2m, dmode)] * (jx * jy.conj()).re;
                        }
                    }
                    se_lam[(c, dmode)] += (ep[dmode].conj() * jx).re;
                }
            }

            // --- shapes × MPFs --------------------------------------------
            for (ch, &dof) in sel.iter().enumerate() {
                for b in 0..m {
                    let xi = layout.phi_index(dof, b);
                    for dmode in 0..m {
                        for c in 0..d_s {
                            let yi = layout.lambda_index(s, c, dmode);
                            let jy = h[dmode] * sp.u[(k, c)];
                            let mut val = (jy.conj() * w[b]).re * p[(ch, dmode)];
                            if b == dmode {
                                val -= ((h[b] * sp.u[(k, c)]).conj() * e[ch]).re;
                            }
                            hm[(xi, yi)] += two_inv_se * val;
                            hm[(yi, xi)] += two_inv_se * val;
                        }
                    }
                }
            }

            // --- shapes × modal -------------------------------------------
            for (ch, &dof) in sel.iter().enumerate() {
                for b in 0..m {
                    let xi = layout.phi_index(dof, b);
                    for j in 0..m {
                        for alpha in 0..2 {
                            let yi = 2 * j + alpha;
                            let jy = d1(j, alpha) * v[j];
                            let mut val = (jy.conj() * w[b]).re * p[(ch, j)];
                            if b == j {
                                val -= (jy.conj() * e[ch]).re;
                            }
                            hm[(xi, yi)] += two_inv_se * val;
                            hm[(yi, xi)] += two_inv_se * val;
                        }
                    }
                }
            }

            // --- MPFs × modal ---------------------------------------------
            for dmode in 0..m {
                for c in 0..d_s {
                    let xi = layout.lambda_index(s, c, dmode);
                    let jx = h[dmode] * sp.u[(k, c)];
                    for j in 0..m {
                        for alpha in 0..2 {
                            let yi = 2 * j + alpha;
                            let jy = d1(j, alpha) * v[j];
                            let mut val = gram[(j, dmode)] * (jy.conj() * jx).re;
                            if dmode == j {
                                val -= ((d1(j, alpha) * sp.u[(k, c)]).conj() * ep[j]).re;
                            }
                            hm[(xi, yi)] += two_inv_se * val;
                            hm[(yi, xi)] += two_inv_se * val;
                        }
                    }
                }
            }
        }

        // --- S_e row/column of this setup ---------------------------------
        let sei = layout.se_index(r);
        hm[(sei, sei)] +=
            -(d_r as f64) * (n_f as f64) * inv_se * inv_se + 2.0 * inv_se.powi(3) * sum_e2;
        let cross = 2.0 * inv_se * inv_se;
        for j in 0..m {
            for alpha in 0..2 {
                let xi = 2 * j + alpha;
                hm[(sei, xi)] += cross * se_modal[xi];
                hm[(xi, sei)] += cross * se_modal[xi];
            }
        }
        for (ch, &dof) in sel.iter().enumerate() {
            for b in 0..m {
                let xi = layout.phi_index(dof, b);
                hm[(sei, xi)] += cross * se_phi[(ch, b)];
                hm[(xi, sei)] += cross * se_phi[(ch, b)];
            }
        }
        for dmode in 0..m {
            for c in 0..d_s {
                let xi = layout.lambda_index(s, c, dmode);
                hm[(sei, xi)] += cross * se_lam[(c, dmode)];
                hm[(xi, sei)] += cross * se_lam[(c, dmode)];
            }
        }
    }

    for i in 0..n {
        for j in 0..n {
            if !hm[(i, j)].is_finite() {
                return Err(Error::NumericFailure {
                    block: region_name(&layout, i.max(j)),
                });
            }
        }
    }
    Ok(HessianBlocks { layout, matrix: hm })
}
