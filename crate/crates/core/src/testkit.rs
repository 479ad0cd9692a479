//! Deterministic fixtures shared by the in-crate unit tests.

use nalgebra::DMatrix;

use crate::model::{
    predicted_block, BandSpectra, FrequencyBand, ModalParameterSet, SetupSpectra, TestPlan, C64,
};

/// Complex literal shorthand.
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Two setups over three DOFs with one shaker scheme each; `noise` scales
/// deterministic complex offsets added to the clean forward model so tests
/// stay reproducible without an RNG.
pub(crate) fn two_setup_fixture(m: usize, noise: f64) -> (TestPlan, BandSpectra, ModalParameterSet) {
    let plan = TestPlan::new(3, 1, vec![vec![0, 2], vec![1, 2]], vec![0, 1]).unwrap();
    let truth = match m {
        1 => ModalParameterSet {
            freqs: vec![1.22],
            dampings: vec![0.02],
            mode_shapes: DMatrix::from_column_slice(3, 1, &[0.6, 0.64, 0.48]),
            mpf: vec![
                DMatrix::from_row_slice(1, 1, &[0.004]),
                DMatrix::from_row_slice(1, 1, &[0.003]),
            ],
            err_psd: vec![1e-6, 2e-6],
        },
        2 => ModalParameterSet {
            freqs: vec![1.22, 1.40],
            dampings: vec![0.02, 0.015],
            mode_shapes: DMatrix::from_column_slice(3, 2, &[0.6, 0.64, 0.48, 0.48, 0.64, -0.6]),
            mpf: vec![
                DMatrix::from_row_slice(1, 2, &[0.004, -0.002]),
                DMatrix::from_row_slice(1, 2, &[0.003, 0.0035]),
            ],
            err_psd: vec![1e-6, 2e-6],
        },
        _ => panic!("fixture supports 1 or 2 modes"),
    };
    let band = FrequencyBand {
        f_lo: 1.05,
        f_hi: 1.55,
        n_modes: m,
        init_frequencies: None,
    };
    let grids = [(12usize, 1.10, 0.03), (11usize, 1.12, 0.035)];
    let mut setups = Vec::new();
    for (r, &(n_bins, f0, df)) in grids.iter().enumerate() {
        let freqs: Vec<f64> = (0..n_bins).map(|k| f0 + df * k as f64).collect();
        let d_r = plan.d_r(r);
        let mut u = DMatrix::zeros(n_bins, 1);
        for k in 0..n_bins {
            let t = k as f64 + 2.0 * r as f64;
            u[(k, 0)] = c(0.6 + 0.05 * (1.7 * t).sin(), -0.4 + 0.3 * (0.9 * t).cos());
        }
        let mut sp = SetupSpectra {
            setup_index: r,
            bin_indices: (0..n_bins).map(|k| 100 + k).collect(),
            freqs,
            y: DMatrix::zeros(n_bins, d_r),
            u,
            q: 0,
        };
        let mut y = predicted_block(&truth, &plan, &sp, r).unwrap();
        for k in 0..n_bins {
            for ch in 0..d_r {
                let t = k as f64;
                let ch_f = ch as f64 + 3.0 * r as f64;
                y[(k, ch)] += noise * c((3.1 * t + 1.3 * ch_f).sin(), (2.3 * t - 0.7 * ch_f).cos());
            }
        }
        sp.y = y;
        setups.push(sp);
    }
    (plan, BandSpectra { band, setups }, truth)
}
