#![allow(dead_code)]

use ifl_core::RegressionPanel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, p: usize) -> RegressionPanel {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    RegressionPanel::from_rows(y, &rows).unwrap()
}

pub fn objective(
    h: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    free: &[usize],
    lambda: f64,
    beta: &[f64],
) -> f64 {
    let r = DVector::from_column_slice(y) - h * DVector::from_column_slice(beta);
    let pen: f64 = (0..beta.len())
        .filter(|c| !free.contains(c))
        .map(|c| w[c] * beta[c].abs())
        .sum();
    r.norm_squared() + lambda * pen
}

/// Exact weighted-LASSO minimizer by enumerating sign patterns.
///
/// For each `s ∈ {−1, 0, +1}^K` (free coordinates take `±1` only as
/// "active"), the objective restricted to the orthant is a smooth quadratic
/// with stationary point `2 H_Aᵀ H_A β_A = 2 H_Aᵀ y − λ w_A s_A`; it is kept
/// when its signs agree with `s`. The smallest objective wins. Only for
/// small `K` with `H_A` of full column rank.
pub fn qp_oracle(h: &DMatrix<f64>, y: &[f64], w: &[f64], free: &[usize], lambda: f64) -> Vec<f64> {
    let k = h.ncols();
    let yv = DVector::from_column_slice(y);
    let mut best = vec![0.0; k];
    let mut best_obj = objective(h, y, w, free, lambda, &best);
    let mut code = vec![0u8; k];
    loop {
        let active: Vec<usize> = (0..k).filter(|&c| code[c] != 0).collect();
        let valid = active.iter().all(|&c| !free.contains(&c) || code[c] == 1);
        let all_free_active = free.iter().all(|c| code[*c] != 0);
        if valid && all_free_active && !active.is_empty() && active.len() <= h.nrows() {
            let ha = h.select_columns(&active);
            let gram = ha.transpose() * &ha * 2.0;
            let mut rhs = ha.transpose() * &yv * 2.0;
            for (i, &c) in active.iter().enumerate() {
                if !free.contains(&c) {
                    let s = if code[c] == 1 { 1.0 } else { -1.0 };
                    rhs[i] -= lambda * w[c] * s;
                }
            }
            if let Some(sol) = gram.clone().cholesky().map(|ch| ch.solve(&rhs)) {
                let consistent = active.iter().enumerate().all(|(i, &c)| {
                    free.contains(&c)
                        || (code[c] == 1 && sol[i] > 0.0)
                        || (code[c] == 2 && sol[i] < 0.0)
                });
                if consistent {
                    let mut beta = vec![0.0; k];
                    for (i, &c) in active.iter().enumerate() {
                        beta[c] = sol[i];
                    }
                    let obj = objective(h, y, w, free, lambda, &beta);
                    if obj < best_obj {
                        best_obj = obj;
                        best = beta;
                    }
                }
            }
        }
        // next pattern in base 3
        let mut i = 0;
        while i < k {
            code[i] = (code[i] + 1) % 3;
            if code[i] != 0 {
                break;
            }
            i += 1;
        }
        if i == k {
            break;
        }
    }
    best
}

/// Ordinary least squares through the SVD (minimum norm on ties).
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    x.clone()
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-12)
        .unwrap()
        .iter()
        .copied()
        .collect()
}

/// Best single mean-shift segmentation of `y` by brute force: the break time
/// `t ∈ 1..n` minimizing the two-segment residual sum of squares, with that
/// minimum.
pub fn best_single_break(y: &[f64]) -> (usize, f64) {
    let rss = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    };
    (1..y.len())
        .map(|t| (t, rss(&y[..t]) + rss(&y[t..])))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
}

/// Best single break in a one-regressor regression `y_t = x_t β_t` by
/// brute force over break times, with per-segment OLS.
pub fn best_single_break_regression(x: &[f64], y: &[f64]) -> (usize, f64) {
    let rss = |xs: &[f64], ys: &[f64]| {
        let sxx: f64 = xs.iter().map(|v| v * v).sum();
        let b = xs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / sxx;
        xs.iter()
            .zip(ys)
            .map(|(a, v)| (v - a * b).powi(2))
            .sum::<f64>()
    };
    (1..y.len())
        .map(|t| (t, rss(&x[..t], &y[..t]) + rss(&x[t..], &y[t..])))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
}
