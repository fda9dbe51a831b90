//! Generalized LASSO baseline on the temporal chain:
//!
//! ```text
//! minimize  ‖y − Xb‖² + λ Σ_j Σ_t |β_{t+1,j} − β_{t,j}| + γλ Σ |β_{t,j}|
//! ```
//!
//! solved by ADMM on the split `z = Db` over a λ grid, with BIC selection.
//!
//! The `b`-update system `2XᵀX + ρDᵀD` is block tridiagonal in time with
//! `p × p` blocks (the stacked design couples components only within a time
//! step, the chain penalty couples only adjacent times), so it is factored
//! once per ρ with a block Thomas recursion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IflError, Result};
use crate::operator::{stack_design, LinearOperator};
use crate::panel::{CoefficientMatrix, RegressionPanel};
use crate::solver::{argmin_first, bic, check_decreasing, log_grid, soft_threshold};

/// Rows: one fusion row per adjacent pair within each component (when
/// `fusion`), then one `γ·e_i` row per coefficient (when `γ > 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyMatrix {
    n_obs: usize,
    n_features: usize,
    fusion: bool,
    gamma_mix: f64,
}

pub fn build_penalty_matrix(
    n_obs: usize,
    n_features: usize,
    gamma_mix: f64,
) -> Result<PenaltyMatrix> {
    if !(0.0..=1.0).contains(&gamma_mix) {
        return Err(IflError::InvalidArgument(format!(
            "gamma_mix must lie in [0, 1], got {gamma_mix}"
        )));
    }
    Ok(PenaltyMatrix {
        n_obs,
        n_features,
        fusion: true,
        gamma_mix,
    })
}

impl PenaltyMatrix {
    /// Only the `γ·I` rows; with `γ = 1` this is a plain LASSO penalty.
    pub fn sparsity_only(n_obs: usize, n_features: usize, gamma_mix: f64) -> Result<Self> {
        if !(gamma_mix > 0.0 && gamma_mix <= 1.0) {
            return Err(IflError::InvalidArgument(format!(
                "sparsity-only penalty needs gamma_mix in (0, 1], got {gamma_mix}"
            )));
        }
        Ok(Self {
            n_obs,
            n_features,
            fusion: false,
            gamma_mix,
        })
    }

    pub fn gamma_mix(&self) -> f64 {
        self.gamma_mix
    }

    pub fn n_fusion_rows(&self) -> usize {
        if self.fusion {
            self.n_features * (self.n_obs - 1)
        } else {
            0
        }
    }

    pub fn n_sparsity_rows(&self) -> usize {
        if self.gamma_mix > 0.0 {
            self.n_obs * self.n_features
        } else {
            0
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_fusion_rows() + self.n_sparsity_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.n_obs * self.n_features
    }

    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n_cols());
        let n = self.n_obs;
        let mut out = Vec::with_capacity(self.n_rows());
        if self.fusion {
            for j in 0..self.n_features {
                let block = &b[j * n..(j + 1) * n];
                out.extend(block.windows(2).map(|w| w[1] - w[0]));
            }
        }
        if self.gamma_mix > 0.0 {
            out.extend(b.iter().map(|v| self.gamma_mix * v));
        }
        out
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n_rows());
        let n = self.n_obs;
        let mut out = vec![0.0; self.n_cols()];
        let fusion = self.n_fusion_rows();
        if self.fusion {
            for j in 0..self.n_features {
                let rows = &v[j * (n - 1)..(j + 1) * (n - 1)];
                for (t, &r) in rows.iter().enumerate() {
                    out[j * n + t] -= r;
                    out[j * n + t + 1] += r;
                }
            }
        }
        if self.gamma_mix > 0.0 {
            for (o, &r) in out.iter_mut().zip(&v[fusion..]) {
                *o += self.gamma_mix * r;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.n_cols();
        let mut m = DMatrix::zeros(self.n_rows(), k);
        let mut e = vec![0.0; k];
        for c in 0..k {
            e[c] = 1.0;
            for (r, v) in self.apply(&e).into_iter().enumerate() {
                m[(r, c)] = v;
            }
            e[c] = 0.0;
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct GenLassoProblem<'a> {
    pub panel: &'a RegressionPanel,
    pub penalty: PenaltyMatrix,
}

impl<'a> GenLassoProblem<'a> {
    pub fn new(panel: &'a RegressionPanel, penalty: PenaltyMatrix) -> Result<Self> {
        if penalty.n_obs != panel.n_obs() || penalty.n_features != panel.n_features() {
            return Err(IflError::shape(
                format!("penalty over {} × {}", panel.n_obs(), panel.n_features()),
                format!("{} × {}", penalty.n_obs, penalty.n_features),
            ));
        }
        Ok(Self { panel, penalty })
    }

    pub fn chain(panel: &'a RegressionPanel, gamma_mix: f64) -> Result<Self> {
        Self::new(
            panel,
            build_penalty_matrix(panel.n_obs(), panel.n_features(), gamma_mix)?,
        )
    }

    pub fn objective(&self, b: &[f64], lambda: f64) -> f64 {
        let fit = stack_design(self.panel).apply(b);
        let rss: f64 = self
            .panel
            .y()
            .iter()
            .zip(fit)
            .map(|(y, f)| (y - f).powi(2))
            .sum();
        let pen: f64 = self.penalty.apply(b).iter().map(|v| v.abs()).sum();
        rss + lambda * pen
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenLassoConfig {
    pub gamma_mix: f64,
    pub rho: f64,
    pub adapt_rho: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub n_lambda: usize,
    pub lambda_ratio: f64,
    /// Run values within this distance are treated as equal when counting
    /// degrees of freedom.
    pub fuse_tol: f64,
    /// The path stops before the first fit whose degrees of freedom exceed
    /// this fraction of `n`; the first fit is always kept.
    pub max_df_fraction: f64,
}

impl Default for GenLassoConfig {
    fn default() -> Self {
        Self {
            gamma_mix: 0.5,
            rho: 1.0,
            adapt_rho: true,
            tol: 1e-6,
            max_iter: 5000,
            n_lambda: 40,
            lambda_ratio: 1e-3,
            fuse_tol: 1e-6,
            max_df_fraction: 0.5,
        }
    }
}

/// Factorization of `2XᵀX + ρDᵀD`, stored as the inverses of the block
/// Schur complements of the time-ordered block tridiagonal system.
struct BlockTridiagonal {
    p: usize,
    n: usize,
    coupling: f64,
    schur_inv: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    fn factor(panel: &RegressionPanel, penalty: &PenaltyMatrix, rho: f64) -> Result<Self> {
        let (n, p) = (panel.n_obs(), panel.n_features());
        let coupling = if penalty.fusion { rho } else { 0.0 };
        let sparsity = if penalty.gamma_mix > 0.0 {
            penalty.gamma_mix * penalty.gamma_mix
        } else {
            0.0
        };
        let mut schur_inv: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        for t in 0..n {
            let x = DVector::from_vec(panel.row(t));
            let degree = if penalty.fusion {
                (t > 0) as usize as f64 + (t + 1 < n) as usize as f64
            } else {
                0.0
            };
            let mut block = &x * x.transpose() * 2.0;
            for i in 0..p {
                block[(i, i)] += rho * (degree + sparsity);
            }
            if t > 0 && coupling != 0.0 {
                block -= &schur_inv[t - 1] * (coupling * coupling);
            }
            let chol = block.cholesky().ok_or_else(|| {
                IflError::InvalidRegularizer(format!(
                    "ADMM system not positive definite at t = {t}"
                ))
            })?;
            schur_inv.push(chol.inverse());
        }
        Ok(Self {
            p,
            n,
            coupling,
            schur_inv,
        })
    }

    /// Solves for a right-hand side in component-major layout.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let gather = |t: usize| DVector::from_iterator(p, (0..p).map(|j| rhs[j * n + t]));
        let mut w: Vec<DVector<f64>> = Vec::with_capacity(n);
        for t in 0..n {
            let mut wt = gather(t);
            if t > 0 && self.coupling != 0.0 {
                wt += &self.schur_inv[t - 1] * &w[t - 1] * self.coupling;
            }
            w.push(wt);
        }
        let mut out = vec![0.0; n * p];
        let mut next: Option<DVector<f64>> = None;
        for t in (0..n).rev() {
            let mut rhs_t = w[t].clone();
            if let Some(b_next) = &next {
                rhs_t += b_next * self.coupling;
            }
            let bt = &self.schur_inv[t] * rhs_t;
            for j in 0..p {
                out[j * n + t] = bt[j];
            }
            next = Some(bt);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub b: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmFit {
    pub b: Vec<f64>,
    pub z: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub rho: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One ADMM solve at fixed λ, starting from zeros.
pub fn admm_solve(
    problem: &GenLassoProblem<'_>,
    lambda: f64,
    rho: f64,
    tol: f64,
    max_iter: usize,
) -> Result<AdmmFit> {
    let config = GenLassoConfig {
        rho,
        tol,
        max_iter,
        gamma_mix: problem.penalty.gamma_mix,
        ..GenLassoConfig::default()
    };
    let mut state = AdmmState {
        b: vec![0.0; problem.penalty.n_cols()],
        z: vec![0.0; problem.penalty.n_rows()],
        u: vec![0.0; problem.penalty.n_rows()],
        rho,
    };
    admm_warm(problem, lambda, &config, &mut state)
}

/// ADMM at fixed λ continuing from `state`, which is updated in place.
pub fn admm_warm(
    problem: &GenLassoProblem<'_>,
    lambda: f64,
    config: &GenLassoConfig,
    state: &mut AdmmState,
) -> Result<AdmmFit> {
    if !(state.rho > 0.0 && state.rho.is_finite()) {
        return Err(IflError::InvalidArgument(format!(
            "rho must be positive, got {}",
            state.rho
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(IflError::InvalidArgument(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let design = stack_design(problem.panel);
    let d = &problem.penalty;
    let xty2: Vec<f64> = design
        .apply_transpose(problem.panel.y())
        .iter()
        .map(|v| 2.0 * v)
        .collect();
    let m = d.n_rows() as f64;
    let k = d.n_cols() as f64;
    let mut factor = BlockTridiagonal::factor(problem.panel, d, state.rho)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_adapt = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let zu: Vec<f64> = state.z.iter().zip(&state.u).map(|(z, u)| z - u).collect();
        let dt = d.apply_transpose(&zu);
        let rhs: Vec<f64> = xty2
            .iter()
            .zip(&dt)
            .map(|(a, b)| a + state.rho * b)
            .collect();
        state.b = factor.solve(&rhs);
        let db = d.apply(&state.b);
        let thr = lambda / state.rho;
        let z_old = std::mem::take(&mut state.z);
        state.z = db
            .iter()
            .zip(&state.u)
            .map(|(v, u)| soft_threshold(v + u, thr))
            .collect();
        for ((u, v), z) in state.u.iter_mut().zip(&db).zip(&state.z) {
            *u += v - z;
        }
        let primal: Vec<f64> = db.iter().zip(&state.z).map(|(a, b)| a - b).collect();
        let dz: Vec<f64> = state.z.iter().zip(&z_old).map(|(a, b)| a - b).collect();
        let r_norm = norm(&primal);
        let s_norm = state.rho * norm(&d.apply_transpose(&dz));
        let eps_pri = m.sqrt() * tol_abs(config.tol) + config.tol * norm(&db).max(norm(&state.z));
        let eps_dual = k.sqrt() * tol_abs(config.tol)
            + config.tol * state.rho * norm(&d.apply_transpose(&state.u));
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            break;
        }
        if config.adapt_rho && iterations - last_adapt >= 10 {
            let scale = if r_norm > 10.0 * s_norm {
                2.0
            } else if s_norm > 10.0 * r_norm {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 {
                state.rho *= scale;
                for u in &mut state.u {
                    *u /= scale;
                }
                factor = BlockTridiagonal::factor(problem.panel, d, state.rho)?;
                last_adapt = iterations;
            }
        }
    }
    Ok(AdmmFit {
        b: state.b.clone(),
        z: state.z.clone(),
        converged,
        iterations,
        rho: state.rho,
    })
}

fn tol_abs(tol: f64) -> f64 {
    tol
}

/// Snaps an ADMM iterate onto the sparsity pattern of its split variable:
/// runs joined by exact-zero fusion entries share their mean value, and
/// (when `γ > 0`) runs whose sparsity entries are all zero are set to zero.
pub fn fuse(penalty: &PenaltyMatrix, b: &[f64], z: &[f64]) -> Vec<f64> {
    let n = penalty.n_obs;
    let mut out = b.to_vec();
    let fusion_rows = penalty.n_fusion_rows();
    for j in 0..penalty.n_features {
        let mut start = 0;
        for t in 1..=n {
            let joined = t < n && penalty.fusion && z[j * (n - 1) + t - 1] == 0.0;
            if joined {
                continue;
            }
            let run = j * n + start..j * n + t;
            let zero = penalty.gamma_mix > 0.0
                && z[fusion_rows + run.start..fusion_rows + run.end]
                    .iter()
                    .all(|v| *v == 0.0);
            let value = if zero {
                0.0
            } else {
                b[run.clone()].iter().sum::<f64>() / (t - start) as f64
            };
            out[run].fill(value);
            start = t;
        }
    }
    out
}

/// Number of nonzero constant runs, comparing neighbours within `tol`.
pub fn fused_degrees_of_freedom(b: &CoefficientMatrix, tol: f64) -> usize {
    let mut df = 0;
    for j in 0..b.n_features() {
        let path = b.component(j);
        let mut start = 0;
        for t in 1..=path.len() {
            if t < path.len() && (path[t] - path[t - 1]).abs() <= tol {
                continue;
            }
            if path[start..t].iter().any(|v| v.abs() > tol) {
                df += 1;
            }
            start = t;
        }
    }
    df
}

/// Largest useful λ: above it the solution is zero (`γ > 0`) or fully fused (`γ = 0`).
pub fn genlasso_lambda_max(problem: &GenLassoProblem<'_>) -> f64 {
    let panel = problem.panel;
    let d = &problem.penalty;
    let (n, p) = (panel.n_obs(), panel.n_features());
    let design = stack_design(panel);
    let gamma = d.gamma_mix;

    let gradient = |resid: &[f64]| -> Vec<f64> {
        design
            .apply_transpose(resid)
            .iter()
            .map(|v| 2.0 * v)
            .collect()
    };
    let fusion_bound = |g: &[f64], spread: bool| -> f64 {
        let mut bound: f64 = 0.0;
        for j in 0..p {
            let block = &g[j * n..(j + 1) * n];
            let total: f64 = block.iter().sum();
            let shift = if spread { total / n as f64 } else { 0.0 };
            if spread {
                bound = bound.max(total.abs() / (n as f64 * gamma));
            }
            let mut acc = 0.0;
            for &v in &block[..n - 1] {
                acc += v - shift;
                bound = bound.max(acc.abs());
            }
        }
        bound
    };

    if gamma > 0.0 {
        let g = gradient(panel.y());
        let sparse_only = g.iter().fold(0.0f64, |a, v| a.max(v.abs())) / gamma;
        if d.fusion {
            sparse_only.min(fusion_bound(&g, true))
        } else {
            sparse_only
        }
    } else {
        // residual of the per-component constant fit
        let mut a = DMatrix::zeros(n, p);
        for j in 0..p {
            for t in 0..n {
                a[(t, j)] = panel.x(t, j);
            }
        }
        let y = DVector::from_column_slice(panel.y());
        let level = a
            .clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .unwrap_or_else(|_| DVector::zeros(p));
        let resid: Vec<f64> = (y - a * level).iter().copied().collect();
        fusion_bound(&gradient(&resid), false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenLassoPath {
    pub grid: Vec<f64>,
    pub coefs: Vec<Vec<f64>>,
    pub rss: Vec<f64>,
    pub df: Vec<usize>,
    pub bic: Vec<f64>,
    pub chosen: usize,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    pub rss_floored: bool,
}

impl GenLassoPath {
    pub fn chosen_b(&self, n_obs: usize, n_features: usize) -> CoefficientMatrix {
        CoefficientMatrix::from_vec(n_obs, n_features, self.coefs[self.chosen].clone())
            .expect("path shape")
    }

    pub fn chosen_lambda(&self) -> f64 {
        self.grid[self.chosen]
    }
}

pub fn genlasso_grid(
    problem: &GenLassoProblem<'_>,
    n_lambda: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    if n_lambda < 2 || !(ratio > 0.0 && ratio < 1.0) {
        return Err(IflError::InvalidArgument(
            "grid needs n_lambda >= 2 and ratio in (0, 1)".into(),
        ));
    }
    Ok(log_grid(genlasso_lambda_max(problem), n_lambda, ratio))
}

/// Warm-started ADMM along `grid`, fused estimates, BIC choice.
pub fn fit_genlasso(
    problem: &GenLassoProblem<'_>,
    grid: &[f64],
    config: &GenLassoConfig,
) -> Result<GenLassoPath> {
    check_decreasing(grid)?;
    let panel = problem.panel;
    let (n, p) = (panel.n_obs(), panel.n_features());
    let design = stack_design(panel);
    let y_norm_sq: f64 = panel.y().iter().map(|v| v * v).sum();
    let mut state = AdmmState {
        b: vec![0.0; problem.penalty.n_cols()],
        z: vec![0.0; problem.penalty.n_rows()],
        u: vec![0.0; problem.penalty.n_rows()],
        rho: config.rho,
    };
    let mut out = GenLassoPath {
        grid: grid.to_vec(),
        coefs: Vec::with_capacity(grid.len()),
        rss: Vec::with_capacity(grid.len()),
        df: Vec::with_capacity(grid.len()),
        bic: Vec::with_capacity(grid.len()),
        chosen: 0,
        converged: Vec::with_capacity(grid.len()),
        iterations: Vec::with_capacity(grid.len()),
        rss_floored: false,
    };
    let max_df = (config.max_df_fraction * n as f64).floor() as usize;
    for &lambda in grid {
        let fit = admm_warm(problem, lambda, config, &mut state)?;
        let fused = fuse(&problem.penalty, &fit.b, &fit.z);
        let fitted = design.apply(&fused);
        let rss: f64 = panel
            .y()
            .iter()
            .zip(&fitted)
            .map(|(y, f)| (y - f).powi(2))
            .sum();
        let df = fused_degrees_of_freedom(
            &CoefficientMatrix::from_vec(n, p, fused.clone())?,
            config.fuse_tol,
        );
        if df > max_df && !out.coefs.is_empty() {
            break;
        }
        let (score, floored) = bic(n, rss, df, y_norm_sq);
        out.coefs.push(fused);
        out.rss.push(rss);
        out.df.push(df);
        out.bic.push(score);
        out.converged.push(fit.converged);
        out.iterations.push(fit.iterations);
        out.rss_floored |= floored;
    }
    out.grid.truncate(out.coefs.len());
    out.chosen = argmin_first(&out.bic);
    Ok(out)
}

/// Grid construction plus [`fit_genlasso`].
pub fn fit_genlasso_default(
    panel: &RegressionPanel,
    config: &GenLassoConfig,
) -> Result<GenLassoPath> {
    let problem = GenLassoProblem::chain(panel, config.gamma_mix)?;
    let grid = genlasso_grid(&problem, config.n_lambda, config.lambda_ratio)?;
    fit_genlasso(&problem, &grid, config)
}
