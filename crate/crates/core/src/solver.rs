//! Weighted ℓ₁-penalized least squares.
//!
//! Every estimator in the crate funnels into one problem shape,
//!
//! ```text
//! minimize  ‖y − Hβ‖² + λ · Σ_j w_j |β_j|
//! ```
//!
//! with the squared error left unnormalized. Plain LASSO is the special case
//! `w ≡ 1`; the adaptive LASSO takes `w_j = 1/|β̃_j|^ν` from a ridge pilot
//! estimate. Coordinates can additionally be marked unpenalized, which is
//! how break detection keeps per-component levels free.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IflError, Result};
use crate::operator::{LinearOperator, SparseColumns};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub n_lambda: usize,
    pub lambda_ratio: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub nu: f64,
    pub weight_floor: f64,
    /// Ridge strength for the adaptive-weight pilot, relative to the mean
    /// squared column norm of the design.
    pub ridge_scale: f64,
    /// Penalize coefficients on the unit-variance scale of their columns.
    pub standardize: bool,
    /// Paths stop once a fit has more than this fraction of `n_obs` nonzero
    /// coefficients. Near saturation the residual sum of squares collapses
    /// and BIC would pick the interpolating fit.
    pub max_df_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_lambda: 100,
            lambda_ratio: 1e-4,
            tol: 1e-7,
            max_iter: 10_000,
            nu: 1.0,
            weight_floor: 1e-6,
            ridge_scale: 1e-3,
            standardize: false,
            max_df_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeightedLassoProblem<'a> {
    design: &'a SparseColumns,
    y: &'a [f64],
    weights: Vec<f64>,
    unpenalized: Vec<bool>,
    col_norm_sq: Vec<f64>,
}

impl<'a> WeightedLassoProblem<'a> {
    pub fn new(design: &'a SparseColumns, y: &'a [f64], weights: Vec<f64>) -> Result<Self> {
        let k = design.n_cols();
        if y.len() != design.nrows() {
            return Err(IflError::shape(
                format!("response of length {}", design.nrows()),
                y.len(),
            ));
        }
        if y.is_empty() || k == 0 {
            return Err(IflError::InvalidArgument(
                "problem needs at least one observation and one column".into(),
            ));
        }
        if weights.len() != k {
            return Err(IflError::shape(format!("{k} weights"), weights.len()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(IflError::InvalidArgument(format!(
                "penalty weights must be positive and finite, got {w}"
            )));
        }
        let col_norm_sq = (0..k).map(|c| design.column_norm_sq(c)).collect();
        Ok(Self {
            design,
            y,
            weights,
            unpenalized: vec![false; k],
            col_norm_sq,
        })
    }

    /// Plain LASSO: every weight equal to one.
    pub fn lasso(design: &'a SparseColumns, y: &'a [f64]) -> Result<Self> {
        Self::new(design, y, vec![1.0; design.n_cols()])
    }

    /// Exempts the listed coordinates from the penalty.
    pub fn with_unpenalized(mut self, coords: &[usize]) -> Result<Self> {
        for &c in coords {
            if c >= self.n_coefs() {
                return Err(IflError::InvalidArgument(format!(
                    "unpenalized coordinate {c} out of range"
                )));
            }
            self.unpenalized[c] = true;
        }
        Ok(self)
    }

    /// Rescales weights so the penalty acts on unit-variance columns.
    pub fn standardized(mut self) -> Self {
        let n = self.n_obs() as f64;
        for (w, nsq) in self.weights.iter_mut().zip(&self.col_norm_sq) {
            let scale = (nsq / n).sqrt();
            if scale > 0.0 {
                *w *= scale;
            }
        }
        self
    }

    pub fn design(&self) -> &SparseColumns {
        self.design
    }

    pub fn y(&self) -> &[f64] {
        self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_penalized(&self, c: usize) -> bool {
        !self.unpenalized[c]
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_coefs(&self) -> usize {
        self.weights.len()
    }

    pub fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let fit = self.design.apply(beta);
        self.y.iter().zip(fit).map(|(y, f)| y - f).collect()
    }

    pub fn penalty(&self, beta: &[f64]) -> f64 {
        beta.iter()
            .enumerate()
            .filter(|(c, _)| self.is_penalized(*c))
            .map(|(c, b)| self.weights[c] * b.abs())
            .sum()
    }

    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let rss: f64 = self.residual(beta).iter().map(|r| r * r).sum();
        rss + lambda * self.penalty(beta)
    }

    /// Least-squares fit of the unpenalized columns alone, as a full-length
    /// coefficient vector (zeros on penalized coordinates).
    fn unpenalized_fit(&self) -> Vec<f64> {
        let free: Vec<usize> = (0..self.n_coefs())
            .filter(|&c| !self.is_penalized(c) && self.col_norm_sq[c] > 0.0)
            .collect();
        let mut beta = vec![0.0; self.n_coefs()];
        if free.is_empty() {
            return beta;
        }
        let mut a = DMatrix::zeros(self.n_obs(), free.len());
        for (k, &c) in free.iter().enumerate() {
            let (rows, vals) = self.design.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                a[(r as usize, k)] += v;
            }
        }
        let y = DVector::from_column_slice(self.y);
        let svd = a.svd(true, true);
        let eps = f64::EPSILON * svd.singular_values.max() * self.n_obs().max(free.len()) as f64;
        if let Ok(sol) = svd.solve(&y, eps) {
            for (k, &c) in free.iter().enumerate() {
                beta[c] = sol[k];
            }
        }
        beta
    }
}

/// Soft-thresholding `sign(z)·max(|z| − γ, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Minimizer of `‖y − Hβ‖² + α‖β‖²`.
///
/// Solves the `K × K` normal equations when `K ≤ n`, otherwise the
/// equivalent `n × n` system `(HHᵀ + αI)u = y`, `β = Hᵀu`.
pub fn ridge_init<H: LinearOperator + ?Sized>(h: &H, y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(IflError::InvalidRegularizer(format!(
            "ridge strength must be positive and finite, got {alpha}"
        )));
    }
    if y.len() != h.nrows() {
        return Err(IflError::shape(h.nrows(), y.len()));
    }
    let (n, k) = (h.nrows(), h.ncols());
    let singular =
        || IflError::InvalidRegularizer(format!("system is singular at alpha = {alpha}"));
    let beta = if k <= n {
        let dense = h.materialize();
        let mut a = dense.tr_mul(&dense);
        for i in 0..k {
            a[(i, i)] += alpha;
        }
        let rhs = DVector::from_vec(h.apply_transpose(y));
        let chol = a.cholesky().ok_or_else(singular)?;
        chol.solve(&rhs).iter().copied().collect()
    } else {
        let mut g = h.outer_gram();
        for i in 0..n {
            g[(i, i)] += alpha;
        }
        let chol = g.cholesky().ok_or_else(singular)?;
        let u = chol.solve(&DVector::from_column_slice(y));
        h.apply_transpose(u.as_slice())
    };
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(singular());
    }
    Ok(beta)
}

/// Ridge strength scaled to the design: `scale · mean_j ‖h_j‖²`.
pub fn scaled_ridge_alpha(design: &SparseColumns, scale: f64) -> f64 {
    let k = design.n_cols().max(1);
    let mean = (0..design.n_cols())
        .map(|c| design.column_norm_sq(c))
        .sum::<f64>()
        / k as f64;
    if mean > 0.0 {
        scale * mean
    } else {
        scale
    }
}

/// `w_j = 1 / max(|β̃_j|, floor)^ν`.
pub fn adaptive_weights(init: &[f64], nu: f64, floor: f64) -> Vec<f64> {
    debug_assert!(floor > 0.0);
    init.iter().map(|b| b.abs().max(floor).powf(-nu)).collect()
}

/// Smallest λ at which every penalized coefficient is zero.
pub fn lambda_max(problem: &WeightedLassoProblem<'_>) -> Result<f64> {
    let base = problem.unpenalized_fit();
    let r = problem.residual(&base);
    let mut any_column = false;
    let mut lmax: f64 = 0.0;
    for c in 0..problem.n_coefs() {
        if !problem.is_penalized(c) || problem.col_norm_sq[c] == 0.0 {
            continue;
        }
        any_column = true;
        let g = 2.0 * problem.design.dot_column(c, &r).abs() / problem.weights[c];
        lmax = lmax.max(g);
    }
    if !any_column {
        return Err(IflError::EmptyDesign);
    }
    Ok(lmax)
}

/// `n_lambda` log-spaced values from `λ_max` down to `ratio · λ_max`.
pub fn lambda_grid(
    problem: &WeightedLassoProblem<'_>,
    n_lambda: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    if n_lambda < 2 {
        return Err(IflError::InvalidArgument(
            "a grid needs at least 2 values".into(),
        ));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(IflError::InvalidArgument(format!(
            "grid ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let lmax = lambda_max(problem)?;
    Ok(log_grid(lmax, n_lambda, ratio))
}

pub(crate) fn log_grid(lmax: f64, n_lambda: usize, ratio: f64) -> Vec<f64> {
    if lmax <= 0.0 {
        // y is already explained by the unpenalized part
        return (0..n_lambda)
            .map(|i| ratio.powf(i as f64 / (n_lambda - 1) as f64))
            .collect();
    }
    let step = ratio.ln() / (n_lambda - 1) as f64;
    (0..n_lambda)
        .map(|i| {
            if i == 0 {
                lmax
            } else {
                lmax * (step * i as f64).exp()
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdFit {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

/// Cyclic coordinate descent from `init`.
///
/// Alternates full sweeps with sweeps restricted to the current nonzero set;
/// stops once a full sweep moves no coefficient by more than `tol`.
pub fn coordinate_descent(
    problem: &WeightedLassoProblem<'_>,
    lambda: f64,
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CdFit> {
    coordinate_descent_observed(problem, lambda, init, tol, max_iter, &mut |_| {})
}

/// As [`coordinate_descent`], calling `observe` with the iterate after every sweep.
pub fn coordinate_descent_observed(
    problem: &WeightedLassoProblem<'_>,
    lambda: f64,
    init: &[f64],
    tol: f64,
    max_iter: usize,
    observe: &mut dyn FnMut(&[f64]),
) -> Result<CdFit> {
    check_cd_args(problem, lambda, tol)?;
    if init.len() != problem.n_coefs() {
        return Err(IflError::shape(problem.n_coefs(), init.len()));
    }
    let mut beta = init.to_vec();
    let mut resid = problem.residual(&beta);
    let (converged, sweeps) = descend(
        problem, lambda, &mut beta, &mut resid, tol, max_iter, observe,
    );
    Ok(CdFit {
        coef: beta,
        converged,
        sweeps,
    })
}

fn check_cd_args(problem: &WeightedLassoProblem<'_>, lambda: f64, tol: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(IflError::InvalidArgument(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    if !(tol > 0.0) {
        return Err(IflError::InvalidArgument(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let _ = problem;
    Ok(())
}

fn sweep(
    problem: &WeightedLassoProblem<'_>,
    lambda: f64,
    coords: &mut dyn Iterator<Item = usize>,
    beta: &mut [f64],
    resid: &mut [f64],
) -> f64 {
    let mut max_change: f64 = 0.0;
    for c in coords {
        let nsq = problem.col_norm_sq[c];
        if nsq == 0.0 {
            beta[c] = 0.0;
            continue;
        }
        let old = beta[c];
        let z = problem.design.dot_column(c, resid) + nsq * old;
        let thr = if problem.unpenalized[c] {
            0.0
        } else {
            0.5 * lambda * problem.weights[c]
        };
        let new = soft_threshold(z, thr) / nsq;
        if new != old {
            problem.design.axpy_column(c, old - new, resid);
            beta[c] = new;
            max_change = max_change.max((new - old).abs());
        }
    }
    max_change
}

/// Moves the active coordinates toward the minimizer of the objective on
/// their current sign orthant, stopping at the first sign change; the
/// coordinate that blocks is set to zero and the step is retried without it.
///
/// Inside the orthant the objective is a convex quadratic, so every point of
/// each segment is at least as good as its start. Returns `false` when no
/// step could be computed.
fn orthant_newton_step(
    problem: &WeightedLassoProblem<'_>,
    lambda: f64,
    active: &[usize],
    beta: &mut [f64],
    resid: &mut [f64],
) -> bool {
    let n = problem.n_obs();
    // dense work is cubic in the active size; leave very large sets to the sweeps
    if active.is_empty() || active.len() > 2 * n + 64 {
        return false;
    }
    let mut set = active.to_vec();
    let mut moved = false;
    while !set.is_empty() {
        let a = set.len();
        let mut h = DMatrix::zeros(n, a);
        for (k, &c) in set.iter().enumerate() {
            let (rows, vals) = problem.design.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                h[(r as usize, k)] += v;
            }
        }
        // proximal term δ‖β − β_cur‖² keeps the system solvable when active
        // columns are collinear; the target still does not increase the objective
        let mut gram: DMatrix<f64> = h.tr_mul(&h);
        let prox = 1e-10 * gram.diagonal().max().max(f64::MIN_POSITIVE);
        let current = DVector::from_iterator(a, set.iter().map(|&c| beta[c]));
        let mut rhs =
            h.tr_mul(&DVector::from_column_slice(resid)) + &gram * &current + &current * prox;
        for (k, &c) in set.iter().enumerate() {
            if !problem.unpenalized[c] {
                rhs[k] -= 0.5 * lambda * problem.weights[c] * beta[c].signum();
            }
        }
        for i in 0..a {
            gram[(i, i)] += prox;
        }
        let Some(chol) = gram.cholesky() else {
            return moved;
        };
        let target = chol.solve(&rhs);
        let mut step: f64 = 1.0;
        let mut blocking = None;
        for (k, &c) in set.iter().enumerate() {
            if problem.unpenalized[c] || target[k].signum() == beta[c].signum() {
                continue;
            }
            let tau = beta[c] / (beta[c] - target[k]);
            if tau < step {
                step = tau;
                blocking = Some(k);
            }
        }
        let mut shift = DVector::zeros(a);
        for (k, &c) in set.iter().enumerate() {
            let mut new = beta[c] + step * (target[k] - beta[c]);
            if blocking == Some(k) || (!problem.unpenalized[c] && new.signum() != beta[c].signum())
            {
                new = 0.0;
            }
            shift[k] = new - beta[c];
            beta[c] = new;
        }
        let fitted = &h * &shift;
        for (r, d) in resid.iter_mut().zip(fitted.iter()) {
            *r -= d;
        }
        moved = true;
        if blocking.is_none() {
            break;
        }
        set.retain(|&c| beta[c] != 0.0);
    }
    moved
}

fn descend(
    problem: &WeightedLassoProblem<'_>,
    lambda: f64,
    beta: &mut [f64],
    resid: &mut [f64],
    tol: f64,
    max_iter: usize,
    observe: &mut dyn FnMut(&[f64]),
) -> (bool, usize) {
    let k = problem.n_coefs();
    let mut sweeps = 0;
    let mut active: Vec<usize> = Vec::new();
    while sweeps < max_iter {
        let change = sweep(problem, lambda, &mut (0..k), beta, resid);
        sweeps += 1;
        observe(beta);
        if change <= tol {
            return (true, sweeps);
        }
        while sweeps < max_iter {
            active.clear();
            active.extend((0..k).filter(|&c| beta[c] != 0.0));
            if orthant_newton_step(problem, lambda, &active, beta, resid) {
                observe(beta);
            }
            let change = sweep(problem, lambda, &mut active.iter().copied(), beta, resid);
            sweeps += 1;
            observe(beta);
            if change <= tol {
                break;
            }
        }
    }
    (false, sweeps)
}

/// `n·ln(rss/n) + df·ln(n)`; `rss` is floored at `ε·‖y‖²` so an exact fit
/// does not score `−∞`. The flag reports whether the floor was applied.
pub fn bic(n_obs: usize, rss: f64, df: usize, y_norm_sq: f64) -> (f64, bool) {
    let n = n_obs as f64;
    let floor = f64::EPSILON * y_norm_sq.max(f64::MIN_POSITIVE);
    let (rss, floored) = if rss < floor {
        (floor, true)
    } else {
        (rss, false)
    };
    (n * (rss / n).ln() + df as f64 * n.ln(), floored)
}

/// Index of the smallest score; ties go to the earliest (largest λ) entry.
pub fn argmin_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathFit {
    pub grid: Vec<f64>,
    pub coefs: Vec<Vec<f64>>,
    pub rss: Vec<f64>,
    pub df: Vec<usize>,
    pub bic: Vec<f64>,
    pub chosen: usize,
    pub converged: Vec<bool>,
    /// Some fit hit the BIC residual floor.
    pub rss_floored: bool,
}

impl PathFit {
    pub fn chosen_coef(&self) -> &[f64] {
        &self.coefs[self.chosen]
    }

    pub fn chosen_lambda(&self) -> f64 {
        self.grid[self.chosen]
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }
}

pub(crate) fn check_decreasing(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(IflError::InvalidArgument("empty lambda grid".into()));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(IflError::InvalidArgument(
            "lambda values must be finite and nonnegative".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(IflError::InvalidArgument(
            "lambda grid must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Warm-started fits along `grid` with BIC selection.
pub fn fit_path(
    problem: &WeightedLassoProblem<'_>,
    grid: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PathFit> {
    fit_path_capped(problem, grid, tol, max_iter, None)
}

/// As [`fit_path`], but the path ends before the first fit with more than
/// `max_df` nonzero coefficients (the first fit is always kept); `grid` in
/// the result is cut to the fitted prefix.
pub fn fit_path_capped(
    problem: &WeightedLassoProblem<'_>,
    grid: &[f64],
    tol: f64,
    max_iter: usize,
    max_df: Option<usize>,
) -> Result<PathFit> {
    check_decreasing(grid)?;
    check_cd_args(problem, grid[0], tol)?;
    let n = problem.n_obs();
    let y_norm_sq: f64 = problem.y.iter().map(|v| v * v).sum();
    let mut beta = problem.unpenalized_fit();
    let mut out = PathFit {
        grid: Vec::with_capacity(grid.len()),
        coefs: Vec::with_capacity(grid.len()),
        rss: Vec::with_capacity(grid.len()),
        df: Vec::with_capacity(grid.len()),
        bic: Vec::with_capacity(grid.len()),
        chosen: 0,
        converged: Vec::with_capacity(grid.len()),
        rss_floored: false,
    };
    for &lambda in grid {
        // recompute rather than carry the residual, so rounding does not accumulate along the path
        let mut resid = problem.residual(&beta);
        let (converged, _) = descend(
            problem,
            lambda,
            &mut beta,
            &mut resid,
            tol,
            max_iter,
            &mut |_| {},
        );
        let df = beta.iter().filter(|b| **b != 0.0).count();
        if max_df.is_some_and(|cap| df > cap) && !out.grid.is_empty() {
            break;
        }
        let rss: f64 = problem.residual(&beta).iter().map(|r| r * r).sum();
        let (score, floored) = bic(n, rss, df, y_norm_sq);
        out.grid.push(lambda);
        out.coefs.push(beta.clone());
        out.rss.push(rss);
        out.df.push(df);
        out.bic.push(score);
        out.converged.push(converged);
        out.rss_floored |= floored;
    }
    out.chosen = argmin_first(&out.bic);
    Ok(out)
}

/// Ridge pilot, adaptive weights, λ path and BIC choice in one call.
pub fn fit_adaptive(
    design: &SparseColumns,
    y: &[f64],
    unpenalized: &[usize],
    opts: &SolverOptions,
) -> Result<PathFit> {
    let alpha = scaled_ridge_alpha(design, opts.ridge_scale);
    let pilot = ridge_init(design, y, alpha)?;
    let weights = adaptive_weights(&pilot, opts.nu, opts.weight_floor);
    fit_weighted(design, y, weights, unpenalized, opts)
}

/// λ path and BIC choice for given penalty weights.
pub fn fit_weighted(
    design: &SparseColumns,
    y: &[f64],
    weights: Vec<f64>,
    unpenalized: &[usize],
    opts: &SolverOptions,
) -> Result<PathFit> {
    let mut problem =
        WeightedLassoProblem::new(design, y, weights)?.with_unpenalized(unpenalized)?;
    if opts.standardize {
        problem = problem.standardized();
    }
    let grid = lambda_grid(&problem, opts.n_lambda, opts.lambda_ratio)?;
    let cap = (opts.max_df_fraction * problem.n_obs() as f64).floor() as usize;
    fit_path_capped(&problem, &grid, opts.tol, opts.max_iter, Some(cap))
}
