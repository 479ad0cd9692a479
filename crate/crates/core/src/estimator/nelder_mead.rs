//! Derivative-free simplex minimizer used for the frequency/damping block.
//!
//! Standard Nelder–Mead with reflection 1, expansion 2, contraction 0.5 and
//! shrink 0.5. The returned point is the best simplex vertex, which is never
//! worse than the starting point, so callers get a non-increase guarantee
//! even on badly scaled objectives. Out-of-domain points are handled by the
//! objective returning `+∞`, which the ordering treats as worse than any
//! finite value.

/// Options for one simplex run.
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Stop when `(f_worst − f_best) ≤ spread_tol·max(|f_best|, 1)`.
    pub spread_tol: f64,
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Initial per-coordinate displacement building the first simplex.
    pub initial_steps: Vec<f64>,
}

/// Result of a simplex run.
#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    /// Best vertex found.
    pub x: Vec<f64>,
    /// Objective value at the best vertex.
    pub f: f64,
    /// Number of objective evaluations spent.
    pub evals: usize,
}

/// Minimizes `f` starting from `x0`. `opts.initial_steps` must match the
/// dimension of `x0`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let n = x0.len();
    assert_eq!(opts.initial_steps.len(), n, "one initial step per coordinate");
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Initial simplex: x0 plus one displaced vertex per coordinate.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_steps[i];
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }

    loop {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread_ok = if worst.is_finite() {
            (worst - best) <= opts.spread_tol * best.abs().max(1.0)
        } else {
            false
        };
        if spread_ok || evals >= opts.max_evals {
            return NelderMeadResult { x: simplex[0].0.clone(), f: simplex[0].1, evals };
        }

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; n];
        for (x, _) in simplex.iter().take(n) {
            for (c, &xi) in centroid.iter_mut().zip(x) {
                *c += xi;
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }

        let combine = |a: &[f64], coef: f64, b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(&ai, &bi)| ai + coef * (ai - bi)).collect()
        };

        // Reflection.
        let xr = combine(&centroid, 1.0, &simplex[n].0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            // Expansion.
            let xe = combine(&centroid, 2.0, &simplex[n].0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // Contraction (outside toward the reflected point when it improved
        // on the worst vertex, inside otherwise).
        let (xc, fc) = if fr < simplex[n].1 {
            let xc: Vec<f64> =
                centroid.iter().zip(&xr).map(|(&c, &r)| c + 0.5 * (r - c)).collect();
            let fc = eval(&xc, &mut evals);
            if fc <= fr {
                (xc, fc)
            } else {
                shrink(&mut simplex, &mut eval, &mut evals);
                continue;
            }
        } else {
            let xw = &simplex[n].0;
            let xc: Vec<f64> =
                centroid.iter().zip(xw).map(|(&c, &w)| c + 0.5 * (w - c)).collect();
            let fc = eval(&xc, &mut evals);
            if fc < simplex[n].1 {
                (xc, fc)
            } else {
                shrink(&mut simplex, &mut eval, &mut evals);
                continue;
            }
        };
        simplex[n] = (xc, fc);
    }
}

/// Shrinks every vertex halfway toward the best one.
fn shrink<E: FnMut(&[f64], &mut usize) -> f64>(
    simplex: &mut [(Vec<f64>, f64)],
    eval: &mut E,
    evals: &mut usize,
) {
    let best = simplex[0].0.clone();
    for entry in simplex.iter_mut().skip(1) {
        for (xi, &bi) in entry.0.iter_mut().zip(&best) {
            *xi = bi + 0.5 * (*xi - bi);
        }
        entry.1 = eval(&entry.0, evals);
    }
}
