//! Initial guess construction for the coordinate descent.
//!
//! The starting point θ₀ is assembled in four steps, each cheap and
//! deterministic:
//!
//! 1. [`pick_peaks`] — mode frequencies from local maxima of the largest
//!    singular value of the smoothed PSD matrix, pooled over all setups
//!    (user-supplied seeds override);
//! 2. [`local_mode_shapes`] — per setup, the SVD of the H1 FRF estimate at
//!    the bin nearest each seed: the leading left singular vector is the
//!    local (per-setup) mode shape, the leading right singular vector seeds
//!    the participation factors through the rank-one resonance relation
//!    `Ĥ(f_i) ≈ (S^(r)·φ_i)·h_i·λ_iᵀ` with `|h_i| = 1/(2ζ₀)`;
//! 3. [`assemble_global`] — local shapes merged into one global shape per
//!    mode by least-squares scale matching on shared DOFs;
//! 4. [`theta_from_parts`] — damping fixed at [`INIT_DAMPING`], MPF seeds
//!    aligned with the assembled shapes and averaged per shaker scheme, and
//!    error PSDs set to their exact conditional minimizers.
//!
//! All choices that the problem does not pin down (spanning order, peak
//! pooling) are made deterministically so identical inputs give identical
//! starting points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::update_se;
use crate::model::{BandSpectra, FrequencyBand, ModalParameterSet, TestPlan, C64};
use crate::spectral::{FrfEstimate, SvSpectrum};

/// Damping ratio every mode starts from.
pub const INIT_DAMPING: f64 = 0.01;

/// Singular-value ratio `σ₁/σ₂` below which the rank-one resonance
/// approximation is considered shaky (closely spaced modes) and a warning is
/// recorded.
pub const RANK_SEPARATION_THRESHOLD: f64 = 1e3;

/// Local (single-setup) estimate of one mode at its resonance bin.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMode {
    /// Unit-norm estimate of `S^(r)·φ_i` over the setup's channels.
    pub shape: DVector<f64>,
    /// MPF seed for `λ_i`, with magnitude `σ₁·2ζ₀` and sign paired with
    /// `shape` (flipping both leaves the rank-one product unchanged).
    pub mpf_seed: DVector<f64>,
    /// Separation `σ₁/σ₂` of the FRF SVD (`+∞` when there is no second
    /// singular value).
    pub sigma_ratio: f64,
}

/// Per-setup, per-mode local estimates plus any rank-separation warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalShapeSet {
    /// `per_setup[r][i]` is mode `i` as seen by setup `r`.
    pub per_setup: Vec<Vec<LocalMode>>,
    /// Human-readable notes (low singular-value separation).
    pub warnings: Vec<String>,
}

/// Picks `band.n_modes` seed frequencies from the per-setup SV spectra.
///
/// Local maxima of the largest singular value strictly inside the band are
/// pooled over all setups, clustered within two frequency bins (using the
/// coarsest grid spacing), and the `m` most prominent clusters win; each
/// seed is its cluster's centroid frequency. Ranking uses topographic
/// prominence — the drop from a maximum to the highest saddle separating it
/// from higher in-band terrain — rather than raw height, because a noise
/// wiggle on the flank of a strong resonance sits high in absolute terms but
/// barely rises above its local baseline, while a genuinely smaller peak
/// elsewhere in the band rises from the floor. User-supplied
/// `init_frequencies` bypass the search and are returned verbatim.
///
/// Errors with [`Error::TooFewPeaks`] when fewer than `m` distinct clusters
/// exist — the caller should then supply seeds manually.
pub fn pick_peaks(sv: &[SvSpectrum], band: &FrequencyBand) -> Result<Vec<f64>> {
    let m = band.n_modes;
    if m == 0 {
        return Err(Error::invalid("pick_peaks", "band requests zero modes"));
    }
    if let Some(seeds) = &band.init_frequencies {
        if seeds.len() != m {
            return Err(Error::invalid(
                "pick_peaks",
                format!("{} init_frequencies supplied for {m} modes", seeds.len()),
            ));
        }
        for pair in seeds.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::invalid("pick_peaks", "init_frequencies must be ascending"));
            }
        }
        for &f in seeds {
            if !(f > band.f_lo && f < band.f_hi) {
                return Err(Error::invalid(
                    "pick_peaks",
                    format!("seed {f} Hz outside band ({}, {})", band.f_lo, band.f_hi),
                ));
            }
        }
        return Ok(seeds.clone());
    }
    if sv.is_empty() {
        return Err(Error::invalid("pick_peaks", "no SV spectra supplied"));
    }

    struct Peak {
        f: f64,
        prominence: f64,
    }
    let mut peaks: Vec<Peak> = Vec::new();
    let mut max_df = 0.0f64;
    for spectrum in sv {
        if spectrum.freqs.len() < 3 {
            return Err(Error::invalid("pick_peaks", "SV spectrum needs at least 3 bins"));
        }
        max_df = max_df.max(spectrum.freqs[1] - spectrum.freqs[0]);
        // In-band bins form one contiguous index range on the ascending grid.
        let Some(lo) = spectrum.freqs.iter().position(|&f| f > band.f_lo && f < band.f_hi)
        else {
            continue;
        };
        let hi = spectrum.freqs.iter().rposition(|&f| f > band.f_lo && f < band.f_hi).unwrap();
        let value = |k: usize| spectrum.singular_values[(k, 0)];
        for k in lo.max(1)..=hi.min(spectrum.freqs.len() - 2) {
            let v = value(k);
            // Strict rise then non-strict fall picks the left edge of flat
            // peaks exactly once.
            if !(v > value(k - 1) && v >= value(k + 1)) {
                continue;
            }
            // One-sided walk: the lowest value crossed before reaching
            // strictly higher terrain, and whether such terrain exists on
            // this side of the band. Equal values (plateaus) are walked over.
            let walk = |mut j: isize, step: isize| -> (f64, bool) {
                let mut floor = v;
                while j >= lo as isize && j <= hi as isize {
                    let w = value(j as usize);
                    if w > v {
                        return (floor, true);
                    }
                    floor = floor.min(w);
                    j += step;
                }
                (floor, false)
            };
            let (left_floor, left_higher) = walk(k as isize - 1, -1);
            let (right_floor, right_higher) = walk(k as isize + 1, 1);
            let prominence = match (left_higher, right_higher) {
                // The key saddle is the one needing the least descent.
                (true, true) => v - left_floor.max(right_floor),
                (true, false) => v - left_floor,
                (false, true) => v - right_floor,
                // Band-dominant peak: prominence is its rise above the floor.
                (false, false) => v - left_floor.min(right_floor),
            };
            peaks.push(Peak { f: spectrum.freqs[k], prominence });
        }
    }
    peaks.sort_by(|a, b| a.f.partial_cmp(&b.f).unwrap());

    struct Cluster {
        sum_f: f64,
        n: usize,
        max_prominence: f64,
    }
    let tol = 2.0 * max_df;
    let mut clusters: Vec<Cluster> = Vec::new();
    for p in peaks {
        match clusters.last_mut() {
            Some(c) if (p.f - c.sum_f / c.n as f64).abs() <= tol => {
                c.sum_f += p.f;
                c.n += 1;
                c.max_prominence = c.max_prominence.max(p.prominence);
            }
            _ => clusters.push(Cluster { sum_f: p.f, n: 1, max_prominence: p.prominence }),
        }
    }
    if clusters.len() < m {
        return Err(Error::TooFewPeaks { found: clusters.len(), needed: m });
    }
    clusters.sort_by(|a, b| b.max_prominence.partial_cmp(&a.max_prominence).unwrap());
    let mut seeds: Vec<f64> = clusters[..m].iter().map(|c| c.sum_f / c.n as f64).collect();
    seeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(seeds)
}

/// Rotation that cancels the resonance FRF phase `i^(1−q)` so the MPF seed
/// comes out real (the de-rotated right singular vector).
fn resonance_derotation(q: u32) -> C64 {
    match q % 4 {
        0 => C64::new(0.0, 1.0),
        1 => C64::new(1.0, 0.0),
        2 => C64::new(0.0, -1.0),
        _ => C64::new(-1.0, 0.0),
    }
}

/// Phase angle ψ maximizing `‖Re(e^(−iψ)·v)‖`; the maximum is at least
/// `‖v‖/√2`, so the real part is never degenerate.
fn dephase_angle(v: &DVector<C64>) -> f64 {
    let sum_sq: C64 = v.iter().map(|z| z * z).sum();
    0.5 * sum_sq.arg()
}

/// Extracts the per-setup local mode shapes and MPF seeds from the FRF
/// estimates at the bins nearest the seed frequencies.
///
/// For each setup `r` and seed `f_i`, the leading singular triplet
/// `(σ₁, u, v)` of the per-bin FRF matrix gives the local shape (de-phased
/// `u`, unit norm, sign-canonical) and the MPF seed (de-rotated `v`, scaled
/// by `σ₁·2ζ₀`, sign paired with the shape). `qs[r]` is the response-kind
/// exponent of setup `r`, used only to de-rotate the seed phase.
///
/// A singular-value separation `σ₁/σ₂` below [`RANK_SEPARATION_THRESHOLD`]
/// is not an error but is recorded as a warning: the rank-one resonance
/// picture degrades when modes overlap.
pub fn local_mode_shapes(
    frfs: &[FrfEstimate],
    f_seeds: &[f64],
    qs: &[u32],
) -> Result<LocalShapeSet> {
    if frfs.len() != qs.len() {
        return Err(Error::invalid(
            "local_mode_shapes",
            format!("{} FRF estimates but {} response-kind exponents", frfs.len(), qs.len()),
        ));
    }
    if f_seeds.is_empty() {
        return Err(Error::invalid("local_mode_shapes", "no seed frequencies"));
    }
    let mut per_setup = Vec::with_capacity(frfs.len());
    let mut warnings = Vec::new();
    for (r, frf) in frfs.iter().enumerate() {
        if frf.per_bin.is_empty() {
            return Err(Error::invalid(
                "local_mode_shapes",
                format!("FRF estimate of setup {r} has no bins"),
            ));
        }
        let rot_q = resonance_derotation(qs[r]);
        let mut modes = Vec::with_capacity(f_seeds.len());
        for (i, &fs) in f_seeds.iter().enumerate() {
            let k = frf
                .freqs
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - fs).abs().partial_cmp(&(b.1 - fs).abs()).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            let mat = frf.per_bin[k].clone();
            let svd = mat.svd(true, true);
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| {
                svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap()
            });
            let jmax = order[0];
            let sigma1 = svd.singular_values[jmax];
            if !(sigma1 > 0.0 && sigma1.is_finite()) {
                return Err(Error::invalid(
                    "local_mode_shapes",
                    format!("FRF of setup {r} is zero at the bin nearest seed {fs} Hz"),
                ));
            }
            let sigma_ratio = order
                .get(1)
                .map(|&j2| {
                    let s2 = svd.singular_values[j2];
                    if s2 > 0.0 {
                        sigma1 / s2
                    } else {
                        f64::INFINITY
                    }
                })
                .unwrap_or(f64::INFINITY);
            if sigma_ratio < RANK_SEPARATION_THRESHOLD {
                warnings.push(format!(
                    "setup {r}, mode {i} ({fs:.4} Hz): SV separation σ1/σ2 = {sigma_ratio:.1} \
                     below {RANK_SEPARATION_THRESHOLD:.0}; rank-one shape seed may mix \
                     closely spaced modes"
                ));
            }
            let u_mat = svd.u.as_ref().expect("left singular vectors requested");
            let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
            let u: DVector<C64> = u_mat.column(jmax).into_owned();
            // Column jmax of V is the adjoint of row jmax of Vᴴ.
            let v: DVector<C64> = v_t.row(jmax).transpose().map(|z| z.conj());

            let rot_u = C64::from_polar(1.0, -dephase_angle(&u));
            let mut shape: DVector<f64> = u.map(|z| (z * rot_u).re);
            let shape_norm = shape.norm();
            shape /= shape_norm; // ≥ ‖u‖/√2, never zero

            // The pair rotation keeps u·σ·vᴴ invariant; the extra i^(1−q)
            // cancels the resonance FRF phase so v lands on the real axis.
            let v_pair: DVector<C64> = v.map(|z| z * rot_u * rot_q);
            let mut dir: DVector<f64> = v_pair.map(|z| z.re);
            let dir_norm = dir.norm();
            if dir_norm > 1e-9 * v_pair.norm() {
                dir /= dir_norm;
            } else {
                // Relative phase far from the rank-one model (heavy noise):
                // fall back to de-phasing v on its own. Magnitude is still
                // right; the sign pairing is then arbitrary, which the first
                // MPF descent update repairs anyway.
                let rot_v = C64::from_polar(1.0, -dephase_angle(&v));
                dir = v.map(|z| (z * rot_v).re);
                dir /= dir.norm();
            }
            let mut mpf_seed = dir * (sigma1 * 2.0 * INIT_DAMPING);

            // Canonical sign on the pair.
            let (amax, _) = shape
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap();
            if shape[amax] < 0.0 {
                shape = -shape;
                mpf_seed = -mpf_seed;
            }
            modes.push(LocalMode { shape, mpf_seed, sigma_ratio });
        }
        per_setup.push(modes);
    }
    Ok(LocalShapeSet { per_setup, warnings })
}

/// Connected components of the setup-overlap graph (edge when two setups
/// share at least one DOF), each component ascending, components ordered by
/// their smallest member. A campaign with more than one component cannot be
/// assembled into global shapes; callers may check this early to warn before
/// any heavy computation.
pub fn overlap_components(plan: &TestPlan) -> Vec<Vec<usize>> {
    let n_r = plan.n_setups();
    let shares = |a: usize, b: usize| -> bool {
        plan.sensor_selection[a]
            .iter()
            .any(|dof| plan.sensor_selection[b].contains(dof))
    };
    let mut assigned = vec![false; n_r];
    let mut components = Vec::new();
    for start in 0..n_r {
        if assigned[start] {
            continue;
        }
        let mut queue = vec![start];
        assigned[start] = true;
        let mut comp = Vec::new();
        while let Some(r) = queue.pop() {
            comp.push(r);
            for other in 0..n_r {
                if !assigned[other] && shares(r, other) {
                    assigned[other] = true;
                    queue.push(other);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// Deterministic spanning order for assembly: start from setup 0, then
/// repeatedly take the unvisited setup sharing the most DOFs with everything
/// assembled so far, ties broken by the smaller setup index.
fn spanning_order(plan: &TestPlan) -> Vec<usize> {
    let n_r = plan.n_setups();
    let mut covered = vec![false; plan.n_dofs];
    let mut visited = vec![false; n_r];
    let mut order = Vec::with_capacity(n_r);
    order.push(0);
    visited[0] = true;
    for &dof in &plan.sensor_selection[0] {
        covered[dof] = true;
    }
    while order.len() < n_r {
        let mut best: Option<(usize, usize)> = None; // (overlap, setup)
        for (r, &seen) in visited.iter().enumerate() {
            if seen {
                continue;
            }
            let overlap =
                plan.sensor_selection[r].iter().filter(|&&dof| covered[dof]).count();
            if best.map_or(true, |(b, _)| overlap > b) {
                best = Some((overlap, r));
            }
        }
        let (_, r) = best.expect("unvisited setups remain");
        order.push(r);
        visited[r] = true;
        for &dof in &plan.sensor_selection[r] {
            covered[dof] = true;
        }
    }
    order
}

/// Merges the per-setup local shapes into global unit-norm, sign-canonical
/// shape columns.
///
/// Per mode: setup 0 fixes the scale; setups then join in the
/// [`spanning_order`], each with the scalar `α_r = ⟨x_r, g⟩/⟨x_r, x_r⟩`
/// (both inner products restricted to DOFs already assembled) that best
/// matches the running assembly `g` in least squares; entries measured by
/// several setups take the average of all scaled contributions. The result
/// is invariant, up to the canonical sign, to any per-setup rescaling of the
/// input local shapes.
///
/// Errors with [`Error::DisconnectedSetups`] when no chain of shared DOFs
/// links all setups.
pub fn assemble_global(locals: &LocalShapeSet, plan: &TestPlan) -> Result<DMatrix<f64>> {
    plan.validate()?;
    let n_r = plan.n_setups();
    if locals.per_setup.len() != n_r {
        return Err(Error::invalid(
            "assemble_global",
            format!("{} local shape sets for {} setups", locals.per_setup.len(), n_r),
        ));
    }
    let m = locals.per_setup[0].len();
    if m == 0 {
        return Err(Error::invalid("assemble_global", "no modes in the local shape set"));
    }
    for (r, modes) in locals.per_setup.iter().enumerate() {
        if modes.len() != m {
            return Err(Error::invalid(
                "assemble_global",
                format!("setup {r} carries {} modes, setup 0 carries {m}", modes.len()),
            ));
        }
        for (i, mode) in modes.iter().enumerate() {
            if mode.shape.len() != plan.d_r(r) {
                return Err(Error::invalid(
                    "assemble_global",
                    format!(
                        "setup {r} mode {i}: local shape length {} != d_r = {}",
                        mode.shape.len(),
                        plan.d_r(r)
                    ),
                ));
            }
        }
    }
    let components = overlap_components(plan);
    if components.len() > 1 {
        return Err(Error::DisconnectedSetups { components });
    }
    let order = spanning_order(plan);

    let d = plan.n_dofs;
    let mut phi = DMatrix::<f64>::zeros(d, m);
    for i in 0..m {
        let mut sum = vec![0.0f64; d];
        let mut count = vec![0usize; d];
        for (step, &r) in order.iter().enumerate() {
            let x = &locals.per_setup[r][i].shape;
            let sel = &plan.sensor_selection[r];
            let alpha = if step == 0 {
                1.0
            } else {
                let mut num = 0.0;
                let mut den = 0.0;
                for (ch, &dof) in sel.iter().enumerate() {
                    if count[dof] > 0 {
                        num += x[ch] * sum[dof] / count[dof] as f64;
                        den += x[ch] * x[ch];
                    }
                }
                if !(den > 0.0) {
                    return Err(Error::invalid(
                        "assemble_global",
                        format!(
                            "setup {r} mode {i}: local shape is zero on every shared DOF, \
                             scale match impossible"
                        ),
                    ));
                }
                num / den
            };
            for (ch, &dof) in sel.iter().enumerate() {
                sum[dof] += alpha * x[ch];
                count[dof] += 1;
            }
        }
        for a in 0..d {
            phi[(a, i)] = sum[a] / count[a] as f64;
        }
        let norm = phi.column(i).norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateMode { mode: i });
        }
        for a in 0..d {
            phi[(a, i)] /= norm;
        }
        let (amax, _) = phi
            .column(i)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(a, v)| (a, *v))
            .unwrap();
        if phi[(amax, i)] < 0.0 {
            for a in 0..d {
                phi[(a, i)] = -phi[(a, i)];
            }
        }
    }
    Ok(phi)
}

/// Builds θ₀ from already-computed seeds and local shapes: frequencies from
/// the seeds, damping [`INIT_DAMPING`], shapes from [`assemble_global`], MPF
/// matrices from the per-setup seeds (sign-aligned with the assembled shape,
/// rescaled by `1/‖S^(r)·φ̂_i‖` to undo the local normalization, averaged
/// over each scheme's setups) and error PSDs from their exact conditional
/// minimizers. The result satisfies every [`ModalParameterSet`] invariant.
pub fn theta_from_parts(
    plan: &TestPlan,
    spectra: &BandSpectra,
    seeds: &[f64],
    locals: &LocalShapeSet,
) -> Result<ModalParameterSet> {
    let m = seeds.len();
    if m == 0 {
        return Err(Error::invalid("init_theta", "no seed frequencies"));
    }
    let phi = assemble_global(locals, plan)?;
    let d_s = plan.n_inputs;
    for (r, modes) in locals.per_setup.iter().enumerate() {
        for (i, mode) in modes.iter().enumerate() {
            if mode.mpf_seed.len() != d_s {
                return Err(Error::invalid(
                    "init_theta",
                    format!(
                        "setup {r} mode {i}: MPF seed length {} != n_inputs = {d_s}",
                        mode.mpf_seed.len()
                    ),
                ));
            }
        }
    }
    let mut mpf = Vec::with_capacity(plan.n_schemes());
    for s in 0..plan.n_schemes() {
        let members = plan.setups_of_scheme(s);
        let mut lam = DMatrix::<f64>::zeros(d_s, m);
        for i in 0..m {
            let mut acc = DVector::<f64>::zeros(d_s);
            for &r in &members {
                let local = &locals.per_setup[r][i];
                let sel = &plan.sensor_selection[r];
                let mut dot = 0.0;
                let mut norm_sq = 0.0;
                for (ch, &dof) in sel.iter().enumerate() {
                    dot += local.shape[ch] * phi[(dof, i)];
                    norm_sq += phi[(dof, i)] * phi[(dof, i)];
                }
                let norm = norm_sq.sqrt();
                if !(norm > 1e-12) {
                    return Err(Error::invalid(
                        "init_theta",
                        format!(
                            "assembled shape of mode {i} vanishes on the DOFs of setup {r}; \
                             its MPF seed cannot be scaled"
                        ),
                    ));
                }
                let sign = if dot >= 0.0 { 1.0 } else { -1.0 };
                acc += &local.mpf_seed * (sign / norm);
            }
            acc /= members.len() as f64;
            for c in 0..d_s {
                lam[(c, i)] = acc[c];
            }
        }
        mpf.push(lam);
    }
    let mut theta = ModalParameterSet {
        freqs: seeds.to_vec(),
        dampings: vec![INIT_DAMPING; m],
        mode_shapes: phi,
        mpf,
        err_psd: vec![1.0; plan.n_setups()],
    };
    let se = update_se(&theta, plan, spectra)?;
    theta.err_psd = se.values;
    Ok(theta)
}

/// Full initialization pipeline: peaks → local shapes → global assembly →
/// θ₀. Returns the starting parameter set together with any warnings from
/// the local-shape stage.
pub fn init_theta(
    plan: &TestPlan,
    spectra: &BandSpectra,
    sv: &[SvSpectrum],
    frfs: &[FrfEstimate],
) -> Result<(ModalParameterSet, Vec<String>)> {
    let seeds = pick_peaks(sv, &spectra.band)?;
    let qs: Vec<u32> = spectra.setups.iter().map(|sp| sp.q).collect();
    let locals = local_mode_shapes(frfs, &seeds, &qs)?;
    let theta = theta_from_parts(plan, spectra, &seeds, &locals)?;
    Ok((theta, locals.warnings))
}
